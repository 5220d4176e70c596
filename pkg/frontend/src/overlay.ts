/** Pure pixel compositing for the mask overlay. No DOM or canvas here. */

import { rleDecode } from "./rle.js";

export interface OverlayStyle {
  r: number;
  g: number;
  b: number;
  /** 0..255 alpha applied to foreground pixels. */
  alpha: number;
}

export const DEFAULT_STYLE: OverlayStyle = { r: 255, g: 64, b: 64, alpha: 112 };

/**
 * Build an RGBA buffer (H*W*4) where mask foreground gets the style color
 * and background stays fully transparent.
 */
export function overlayPixels(
  runs: number[],
  height: number,
  width: number,
  style: OverlayStyle = DEFAULT_STYLE,
): Uint8ClampedArray<ArrayBuffer> {
  const mask = rleDecode(runs, height, width);
  const out = new Uint8ClampedArray(new ArrayBuffer(height * width * 4));
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] === 1) {
      const o = i * 4;
      out[o] = style.r;
      out[o + 1] = style.g;
      out[o + 2] = style.b;
      out[o + 3] = style.alpha;
    }
  }
  return out;
}

/** Count pixels with nonzero alpha; must equal the RLE foreground sum. */
export function visiblePixelCount(rgba: Uint8ClampedArray): number {
  let n = 0;
  for (let i = 3; i < rgba.length; i += 4) {
    if ((rgba[i] ?? 0) > 0) {
      n++;
    }
  }
  return n;
}
