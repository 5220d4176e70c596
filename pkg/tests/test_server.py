"""Inference service endpoints, exercised in-process."""

import io
import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from mpseg.encoder import EncoderConfig
from mpseg.model import build_model
from mpseg.rle import rle_decode
from mpseg.server import create_app, segment_window
from mpseg.volumes import PhantomSpec, generate_phantom

TOY = EncoderConfig(
    image_size=(16, 16),
    patch_size=4,
    embed_dim=16,
    num_blocks=1,
    num_heads=2,
    lora_rank=2,
    depth_hidden=8,
)
CKPT_ID = "deadbeef00112233"


@pytest.fixture(scope="module")
def client():
    model = build_model(TOY, seed=0)
    with TestClient(create_app(model, CKPT_ID)) as c:
        yield c


def volume_parts(seed=0, shape=(16, 16, 12)):
    volume, _ = generate_phantom(PhantomSpec(shape=shape, radius_range=(3.0, 4.5), seed=seed))
    header = json.dumps(volume.header()).encode("utf-8")
    payload = np.ascontiguousarray(volume.data, dtype="<f4").tobytes()
    return header, payload


def upload(client, header, payload):
    return client.post(
        "/volumes",
        files={
            "header": ("vol.json", header, "application/json"),
            "payload": ("vol.bin", payload, "application/octet-stream"),
        },
    )


@pytest.fixture(scope="module")
def volume_id(client):
    header, payload = volume_parts(seed=0)
    r = upload(client, header, payload)
    assert r.status_code == 200, r.text
    return r.json()["volume_id"]


class TestHealth:
    def test_healthz(self, client):
        r = client.get("/healthz")
        assert r.status_code == 200
        assert r.json() == {"status": "ok", "checkpoint_id": CKPT_ID}


class TestUpload:
    def test_upload_returns_content_id(self, client):
        header, payload = volume_parts(seed=1)
        r = upload(client, header, payload)
        assert r.status_code == 200
        vid = r.json()["volume_id"]
        assert len(vid) == 16 and all(c in "0123456789abcdef" for c in vid)
        assert r.json()["header"]["magic"] == "GBTV1"

    def test_duplicate_upload_gets_same_id(self, client):
        header, payload = volume_parts(seed=2)
        a = upload(client, header, payload).json()["volume_id"]
        b = upload(client, header, payload).json()["volume_id"]
        assert a == b

    def test_different_content_different_id(self, client):
        h1, p1 = volume_parts(seed=3)
        h2, p2 = volume_parts(seed=4)
        assert upload(client, h1, p1).json()["volume_id"] != upload(client, h2, p2).json()["volume_id"]

    def test_metadata_roundtrip(self, client, volume_id):
        r = client.get(f"/volumes/{volume_id}")
        assert r.status_code == 200
        header = r.json()["header"]
        assert (header["H"], header["W"], header["D"], header["M"]) == (16, 16, 12, 4)

    def test_bad_header_json(self, client):
        r = upload(client, b"{not json", b"\x00" * 16)
        assert r.status_code == 400
        assert "valid JSON" in r.json()["detail"]

    def test_wrong_modality_count(self, client):
        header, payload = volume_parts(seed=5)
        parsed = json.loads(header)
        parsed["M"] = 3
        parsed["modalities"] = parsed["modalities"][:3]
        r = upload(client, json.dumps(parsed).encode(), payload[: len(payload) * 3 // 4])
        assert r.status_code == 400
        assert "M must be 4, got 3" in r.json()["detail"]

    def test_truncated_payload(self, client):
        header, payload = volume_parts(seed=6)
        r = upload(client, header, payload[:-8])
        assert r.status_code == 400
        assert "bytes" in r.json()["detail"]

    def test_unknown_volume_404(self, client):
        assert client.get("/volumes/0000000000000000").status_code == 404


class TestSlicePng:
    def test_png_dimensions_and_mode(self, client, volume_id):
        r = client.get(f"/volumes/{volume_id}/slices/6")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        img = Image.open(io.BytesIO(r.content))
        assert img.size == (16, 16)
        assert img.mode == "L"

    def test_modality_by_name_and_index_agree(self, client, volume_id):
        by_name = client.get(f"/volumes/{volume_id}/slices/6", params={"modality": "T2"})
        by_index = client.get(f"/volumes/{volume_id}/slices/6", params={"modality": "2"})
        assert by_name.content == by_index.content

    def test_constant_slice_renders_mid_gray(self, client, volume_id):
        # background-only edge slices are constant zero after normalization
        r = client.get(f"/volumes/{volume_id}/slices/0")
        assert r.status_code == 200
        img = np.asarray(Image.open(io.BytesIO(r.content)))
        if img.std() == 0:
            assert int(img[0, 0]) == 128

    def test_slice_out_of_range_404(self, client, volume_id):
        r = client.get(f"/volumes/{volume_id}/slices/99")
        assert r.status_code == 404
        assert "out of range" in r.json()["detail"]

    def test_unknown_modality_422(self, client, volume_id):
        r = client.get(f"/volumes/{volume_id}/slices/3", params={"modality": "CT"})
        assert r.status_code == 422
        r = client.get(f"/volumes/{volume_id}/slices/3", params={"modality": "9"})
        assert r.status_code == 422

    def test_unknown_volume_404(self, client):
        assert client.get("/volumes/ffffffffffffffff/slices/0").status_code == 404


def seg_request(volume_id, slice_index=6, box=(3, 3, 13, 13)):
    return {"volume_id": volume_id, "slice_index": slice_index, "box": list(box)}


class TestSegment:
    def test_returns_decodable_rle(self, client, volume_id):
        r = client.post("/segment", json=seg_request(volume_id))
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["shape"] == [16, 16]
        assert body["checkpoint_id"] == CKPT_ID
        assert body["latency_ms"] > 0
        assert 0.0 <= body["stats"]["min"] <= body["stats"]["mean"] <= body["stats"]["max"] <= 1.0
        mask = rle_decode(body["rle"], *body["shape"])
        assert mask.shape == (16, 16)
        assert sum(body["rle"]) == 256

    def test_deterministic(self, client, volume_id):
        a = client.post("/segment", json=seg_request(volume_id)).json()
        b = client.post("/segment", json=seg_request(volume_id)).json()
        assert a["rle"] == b["rle"]
        assert a["stats"] == b["stats"]

    def test_single_pixel_box_accepted(self, client, volume_id):
        r = client.post("/segment", json=seg_request(volume_id, box=(8, 8, 9, 9)))
        assert r.status_code == 200

    def test_every_slice_index_works(self, client, volume_id):
        for si in range(12):
            r = client.post("/segment", json=seg_request(volume_id, slice_index=si))
            assert r.status_code == 200, (si, r.text)

    def test_unknown_volume_404(self, client):
        r = client.post("/segment", json=seg_request("0" * 16))
        assert r.status_code == 404

    def test_slice_out_of_range_422(self, client, volume_id):
        r = client.post("/segment", json=seg_request(volume_id, slice_index=12))
        assert r.status_code == 422
        assert "out of range" in r.json()["detail"]

    def test_degenerate_box_422(self, client, volume_id):
        r = client.post("/segment", json=seg_request(volume_id, box=(5, 5, 5, 9)))
        assert r.status_code == 422

    def test_box_exceeding_bounds_422(self, client, volume_id):
        r = client.post("/segment", json=seg_request(volume_id, box=(0, 0, 17, 17)))
        assert r.status_code == 422
        assert "exceeds" in r.json()["detail"]

    def test_wrong_resolution_volume_422(self, client):
        header, payload = volume_parts(seed=7, shape=(32, 32, 8))
        vid = upload(client, header, payload).json()["volume_id"]
        r = client.post("/segment", json=seg_request(vid, slice_index=2, box=(4, 4, 20, 20)))
        assert r.status_code == 422
        assert "checkpoint expects" in r.json()["detail"]

    def test_malformed_body_422(self, client, volume_id):
        r = client.post("/segment", json={"volume_id": volume_id, "slice_index": 1})
        assert r.status_code == 422

    def test_concurrent_requests_match_serial(self, client, volume_id):
        reqs = [seg_request(volume_id, slice_index=si, box=(2, 2, 14, 14)) for si in (1, 4, 7, 10)]
        serial = [client.post("/segment", json=q).json()["rle"] for q in reqs]
        with ThreadPoolExecutor(max_workers=4) as pool:
            parallel = list(pool.map(lambda q: client.post("/segment", json=q).json()["rle"], reqs * 3))
        assert parallel == (serial * 3)


class TestSegmentWindow:
    @pytest.mark.parametrize(
        "depth,slice_index,expected",
        [
            (12, 0, (0, (0, 1, 2, 3))),
            (12, 6, (5, (5, 6, 7, 8))),
            (12, 11, (8, (8, 9, 10, 11))),
            (4, 3, (0, (0, 1, 2, 3))),
            (2, 1, (0, (0, 1, 1, 1))),
            (1, 0, (0, (0, 0, 0, 0))),
        ],
    )
    def test_cases(self, depth, slice_index, expected):
        assert segment_window(depth, slice_index) == expected

    def test_requested_slice_always_inside_window(self):
        for depth in range(1, 20):
            for si in range(depth):
                _, indices = segment_window(depth, si)
                assert si in indices
                assert all(0 <= k < depth for k in indices)
