"""Cross-process conformance checks against the bridge server.

Spawns the Node bridge server over stdio and drives it with the harness's
own protocol client. Skipped when the server has not been built
(``cd bridge && npm install && npm run build``).
"""

import shutil
from pathlib import Path

import numpy as np
import pytest

from clickstorm import bridge, maskops
from clickstorm.clickgen import Click
from clickstorm.segmenters import BridgedSegmenter, CapabilityError, SegmenterRequest

SERVER = Path(__file__).resolve().parents[1] / "bridge" / "dist" / "server.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not SERVER.exists(),
    reason="bridge server not built (cd bridge && npm install && npm run build)",
)


def endpoint(model: str, *extra: str) -> str:
    flags = " ".join(extra)
    return f"stdio:node {SERVER} --stdio --model {model} {flags}".strip()


def random_image(rng, h, w):
    return rng.random((h, w, 3))


class TestRoundTrip:
    def test_f32_map_preserved_bit_exactly(self, rng):
        h = w = 12
        conn = bridge.BridgeConnection.open(endpoint("echo"))
        try:
            image = random_image(rng, h, w)
            ready = conn.request({"type": "init", "height": h, "width": w,
                                  "image": bridge.encode_f32(image)})
            assert ready["type"] == "ready"
            assert ready["supports_gradients"] is False

            prev = rng.random((h, w))
            response = conn.request({
                "type": "predict",
                "clicks": [{"x": 3.0, "y": 4.0, "sign": 1}],
                "prev_mask": bridge.encode_f32(prev),
            })
            assert response["type"] == "prediction"
            # the echo server returns exactly the f32 payload it received
            sent = np.ascontiguousarray(prev, dtype="<f4")
            got = bridge.decode_f32(response["map"], (h, w)).astype("<f4")
            assert sent.tobytes() == got.tobytes()
        finally:
            conn.close()

    def test_reinit_replaces_session(self, rng):
        conn = bridge.BridgeConnection.open(endpoint("echo"))
        try:
            for size in (6, 9):
                ready = conn.request({"type": "init", "height": size, "width": size,
                                      "image": bridge.encode_f32(random_image(rng, size, size))})
                assert ready["type"] == "ready"
                response = conn.request({
                    "type": "predict", "clicks": [{"x": 1.0, "y": 1.0, "sign": 1}],
                    "prev_mask": None,
                })
                assert bridge.decode_f32(response["map"], (size, size)).shape == (size, size)
        finally:
            conn.close()


class TestGradients:
    def test_cross_process_finite_differences(self, rng):
        h = w = 16
        seg = BridgedSegmenter(endpoint("disk", "--radius", "3"), radius=3.0)
        try:
            image = random_image(rng, h, w)
            gt = np.zeros((h, w), dtype=bool)
            gt[4:12, 4:12] = True
            step = 5e-3
            for direction in ("min", "max"):
                sign = 1.0 if direction == "max" else -1.0
                for x, y in ((7.3, 8.6), (5.1, 5.9), (10.2, 6.4)):
                    clicks = [Click(x, y, True, 3.0)]
                    req = SegmenterRequest(image=image, clicks=clicks)
                    gx, gy = seg.dice_coordinate_gradient(req, gt, direction, 0)

                    def dice_at(cx, cy):
                        pred = seg.predict(SegmenterRequest(
                            image=image, clicks=[Click(cx, cy, True, 3.0)]))
                        return sign * maskops.dice_loss(pred, gt)

                    fx = (dice_at(x + step, y) - dice_at(x - step, y)) / (2 * step)
                    fy = (dice_at(x, y + step) - dice_at(x, y - step)) / (2 * step)
                    assert gx == pytest.approx(fx, rel=1e-2, abs=1e-7)
                    assert gy == pytest.approx(fy, rel=1e-2, abs=1e-7)
        finally:
            seg.close()

    def test_no_gradient_model_reports_unsupported(self, rng):
        h = w = 8
        conn = bridge.BridgeConnection.open(endpoint("echo"))
        try:
            conn.request({"type": "init", "height": h, "width": w,
                          "image": bridge.encode_f32(random_image(rng, h, w))})
            with pytest.raises(bridge.BridgeError) as err:
                conn.request({
                    "type": "grad",
                    "clicks": [{"x": 1.0, "y": 1.0, "sign": 1}],
                    "gt": bridge.encode_mask(np.zeros((h, w), dtype=np.uint8)),
                    "direction": "min",
                    "active": 0,
                })
            assert err.value.code == "gradients_unsupported"
        finally:
            conn.close()

    def test_segmenter_capability_guard(self, rng):
        seg = BridgedSegmenter(endpoint("echo"))
        try:
            image = random_image(rng, 6, 6)
            gt = np.ones((6, 6), dtype=bool)
            req = SegmenterRequest(image=image, clicks=[Click(2.0, 2.0, True, 2.0)])
            seg.predict(req)  # establishes the session and capabilities
            with pytest.raises(CapabilityError):
                seg.dice_coordinate_gradient(req, gt, "min", 0)
        finally:
            seg.close()


class TestTcpTransport:
    def test_round_trip_over_tcp(self, rng):
        import re
        import subprocess

        proc = subprocess.Popen(
            ["node", str(SERVER), "--port", "0", "--model", "echo"],
            stderr=subprocess.PIPE, text=True)
        try:
            line = proc.stderr.readline()
            match = re.search(r"listening on (\d+)", line)
            assert match, f"unexpected server banner: {line!r}"
            port = int(match.group(1))
            conn = bridge.BridgeConnection.open(f"tcp://127.0.0.1:{port}")
            try:
                h = w = 5
                conn.request({"type": "init", "height": h, "width": w,
                              "image": bridge.encode_f32(random_image(rng, h, w))})
                prev = rng.random((h, w))
                response = conn.request({
                    "type": "predict", "clicks": [{"x": 1.0, "y": 1.0, "sign": 1}],
                    "prev_mask": bridge.encode_f32(prev),
                })
                sent = np.ascontiguousarray(prev, dtype="<f4")
                got = bridge.decode_f32(response["map"], (h, w)).astype("<f4")
                assert sent.tobytes() == got.tobytes()
            finally:
                conn.close()
        finally:
            proc.terminate()
            proc.wait(timeout=5)

    def test_server_config_file(self, rng, tmp_path):
        import json as json_mod

        config = tmp_path / "server.json"
        config.write_text(json_mod.dumps({
            "model": "disk", "checkpoint": None, "device": "cpu", "radius": 2.0,
        }))
        conn = bridge.BridgeConnection.open(f"stdio:node {SERVER} --stdio --config {config}")
        try:
            ready = conn.request({"type": "init", "height": 6, "width": 6,
                                  "image": bridge.encode_f32(random_image(rng, 6, 6))})
            assert ready["supports_gradients"] is True
            response = conn.request({
                "type": "predict", "clicks": [{"x": 3.0, "y": 3.0, "sign": 1}],
                "prev_mask": None,
            })
            prob = bridge.decode_f32(response["map"], (6, 6))
            # radius 2 from the config file: tight peak at the click
            assert prob[3, 3] > 0.9
            assert prob[0, 0] < 0.5
        finally:
            conn.close()


class TestErrorFrames:
    def test_empty_clicks(self, rng):
        conn = bridge.BridgeConnection.open(endpoint("disk"))
        try:
            conn.request({"type": "init", "height": 4, "width": 4,
                          "image": bridge.encode_f32(random_image(rng, 4, 4))})
            with pytest.raises(bridge.BridgeError) as err:
                conn.request({"type": "predict", "clicks": [], "prev_mask": None})
            assert err.value.code == "empty_clicks"
        finally:
            conn.close()

    def test_out_of_range_active_index(self, rng):
        conn = bridge.BridgeConnection.open(endpoint("disk"))
        try:
            conn.request({"type": "init", "height": 4, "width": 4,
                          "image": bridge.encode_f32(random_image(rng, 4, 4))})
            with pytest.raises(bridge.BridgeError) as err:
                conn.request({
                    "type": "grad", "clicks": [{"x": 1.0, "y": 1.0, "sign": 1}],
                    "gt": bridge.encode_mask(np.zeros((4, 4), dtype=np.uint8)),
                    "direction": "max", "active": 5,
                })
            assert err.value.code == "bad_frame"
        finally:
            conn.close()

    def test_protocol_stays_usable_after_error(self, rng):
        conn = bridge.BridgeConnection.open(endpoint("disk"))
        try:
            conn.request({"type": "init", "height": 4, "width": 4,
                          "image": bridge.encode_f32(random_image(rng, 4, 4))})
            with pytest.raises(bridge.BridgeError):
                conn.request({"type": "predict", "clicks": [], "prev_mask": None})
            response = conn.request({
                "type": "predict", "clicks": [{"x": 2.0, "y": 2.0, "sign": 1}],
                "prev_mask": None,
            })
            assert response["type"] == "prediction"
        finally:
            conn.close()
