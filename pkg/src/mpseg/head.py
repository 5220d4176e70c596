"""Prompt encoding, mask decoding, and the training loss."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import Attention, ConfigError, Mlp, sinusoid_features
from .sampler import PromptBox, PromptPoint

# rows of the learned type embedding table
TYPE_BOX_TL, TYPE_BOX_BR, TYPE_POINT = 0, 1, 2


class PromptEncoder(nn.Module):
    """Maps a box or point prompt to tokens of the encoder's width.

    Each corner/point becomes the sinusoid of its normalized (x, y) plus a
    learned embedding for its role: box top-left, box bottom-right, or point.
    A box yields 2 tokens, a point 1.
    """

    def __init__(self, embed_dim: int, image_size: tuple[int, int]):
        super().__init__()
        if embed_dim % 4:
            raise ConfigError(f"embed_dim must be divisible by 4, got {embed_dim}")
        self.embed_dim = embed_dim
        self.image_size = tuple(image_size)
        self.type_embed = nn.Parameter(torch.empty(3, embed_dim))
        nn.init.trunc_normal_(self.type_embed, std=0.02)

    def _coord_token(self, x: float, y: float) -> torch.Tensor:
        h, w = self.image_size
        half = self.embed_dim // 2
        dtype = self.type_embed.dtype
        return torch.cat(
            [
                sinusoid_features(x / w, half, dtype=dtype),
                sinusoid_features(y / h, half, dtype=dtype),
            ]
        )

    def forward(self, prompt: PromptBox | PromptPoint) -> torch.Tensor:
        h, w = self.image_size
        if isinstance(prompt, PromptBox):
            if prompt.x1 > w or prompt.y1 > h:
                raise ConfigError(f"box {prompt} exceeds image bounds {w}x{h}")
            corners = torch.stack(
                [
                    self._coord_token(prompt.x0, prompt.y0),
                    self._coord_token(prompt.x1, prompt.y1),
                ]
            )
            return corners + self.type_embed[[TYPE_BOX_TL, TYPE_BOX_BR]]
        if isinstance(prompt, PromptPoint):
            if not (0 <= prompt.x < w and 0 <= prompt.y < h):
                raise ConfigError(f"point {prompt} outside image bounds {w}x{h}")
            token = self._coord_token(prompt.x, prompt.y) + self.type_embed[TYPE_POINT]
            return token.unsqueeze(0)
        raise ConfigError(f"unsupported prompt type {type(prompt).__name__}")


class TwoWayLayer(nn.Module):
    """One round of token/image exchange, pre-norm residual throughout:
    tokens attend to the image, tokens run an MLP, the image attends back.
    """

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.norm_t1 = nn.LayerNorm(dim)
        self.t2i = Attention(dim, num_heads)
        self.norm_t2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * 2)
        self.norm_i = nn.LayerNorm(dim)
        self.i2t = Attention(dim, num_heads)

    def forward(
        self, tokens: torch.Tensor, image: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        tokens = tokens + self.t2i(self.norm_t1(tokens), context=image)
        tokens = tokens + self.mlp(self.norm_t2(tokens))
        image = image + self.i2t(self.norm_i(image), context=tokens)
        return tokens, image


class MaskDecoder(nn.Module):
    """Prompt-conditioned mask head.

    A learned output token joins the prompt tokens; after two exchange layers
    its final state parameterizes (via a small MLP) the channel weights that
    contract an upsampled feature map into one logit plane per slice. The
    patch grid is upsampled 4x by two transposed convolutions, then resized
    bilinearly to the full image.
    """

    def __init__(self, embed_dim: int, num_heads: int, image_size: tuple[int, int],
                 grid_size: tuple[int, int], num_layers: int = 2):
        super().__init__()
        if embed_dim % 4:
            raise ConfigError(f"embed_dim must be divisible by 4, got {embed_dim}")
        mask_dim = embed_dim // 4
        self.image_size = tuple(image_size)
        self.grid_size = tuple(grid_size)
        self.output_token = nn.Parameter(torch.empty(1, embed_dim))
        nn.init.trunc_normal_(self.output_token, std=0.02)
        self.layers = nn.ModuleList(TwoWayLayer(embed_dim, num_heads) for _ in range(num_layers))
        self.norm_out = nn.LayerNorm(embed_dim)
        self.hyper = Mlp(embed_dim, embed_dim, mask_dim)
        self.up1 = nn.ConvTranspose2d(embed_dim, embed_dim // 2, kernel_size=2, stride=2)
        self.up2 = nn.ConvTranspose2d(embed_dim // 2, mask_dim, kernel_size=2, stride=2)

    def forward(self, features: torch.Tensor, prompt_tokens: torch.Tensor) -> torch.Tensor:
        g, n, d = features.shape
        gh, gw = self.grid_size
        if n != gh * gw:
            raise ConfigError(f"got {n} image tokens for a {gh}x{gw} patch grid")
        if prompt_tokens.dim() != 2 or prompt_tokens.shape[1] != d:
            raise ConfigError(
                f"prompt tokens must be (k, {d}), got {tuple(prompt_tokens.shape)}"
            )
        tokens = torch.cat([self.output_token, prompt_tokens]).unsqueeze(0).expand(g, -1, -1)
        image = features
        for layer in self.layers:
            tokens, image = layer(tokens, image)
        weights = self.hyper(self.norm_out(tokens[:, 0]))  # (G, mask_dim)
        fmap = image.transpose(1, 2).reshape(g, d, gh, gw)
        fmap = self.up2(F.gelu(self.up1(fmap)))  # (G, mask_dim, 4*gh, 4*gw)
        logits = torch.einsum("gchw,gc->ghw", fmap, weights)
        return F.interpolate(
            logits.unsqueeze(1), size=self.image_size, mode="bilinear", align_corners=False
        ).squeeze(1)


def bce_loss(targets: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy in the numerically stable logit form."""
    if targets.shape != logits.shape:
        raise ValueError(f"shape mismatch: targets {tuple(targets.shape)} vs logits {tuple(logits.shape)}")
    targets = targets.to(logits.dtype)
    bad = (targets != 0) & (targets != 1)
    if bool(bad.any()):
        raise ValueError("targets must be binary (0/1)")
    return F.binary_cross_entropy_with_logits(logits, targets, reduction="mean")


def soft_dice_loss(
    targets: torch.Tensor, logits: torch.Tensor, eps: float = 1e-6
) -> torch.Tensor:
    """1 - soft Dice overlap between sigmoid(logits) and a binary target.

    Penalizes area mismatch directly, which counteracts the boundary
    dilation that plain voxel-wise BCE tolerates on small lesions.
    """
    if targets.shape != logits.shape:
        raise ValueError(f"shape mismatch: targets {tuple(targets.shape)} vs logits {tuple(logits.shape)}")
    targets = targets.to(logits.dtype)
    bad = (targets != 0) & (targets != 1)
    if bool(bad.any()):
        raise ValueError("targets must be binary (0/1)")
    probs = torch.sigmoid(logits)
    intersection = (probs * targets).sum()
    denom = probs.sum() + targets.sum()
    return 1.0 - (2.0 * intersection + eps) / (denom + eps)
