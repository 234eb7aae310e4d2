"""Client side of the model-bridge wire protocol.

The protocol is newline-delimited JSON frames over TCP or a child process's
stdio. Every request frame receives exactly one response frame, in order.

Frames:

* ``{"type": "init", "height": H, "width": W, "image": b64}`` ->
  ``{"type": "ready", "input_mode": "disk_maps"|"raw_coordinates",
     "supports_gradients": bool, "native_resolution": int|null}``
* ``{"type": "predict", "clicks": [{"x": f, "y": f, "sign": 1|-1}, ...],
     "prev_mask": b64|null}`` -> ``{"type": "prediction", "map": b64}``
* ``{"type": "grad", "clicks": [...], "gt": b64, "direction": "min"|"max",
     "active": i}`` -> ``{"type": "gradient", "dxy": [gx, gy]}``
* ``{"type": "error", "code": str, "message": str}`` on any failure.

Binary payloads are base64-encoded row-major arrays: little-endian 32-bit
floats for images and probability maps, single bytes (0/1) for binary masks.
"""

from __future__ import annotations

import base64
import json
import shlex
import socket
import subprocess
from urllib.parse import urlparse

import numpy as np

__all__ = [
    "BridgeError",
    "BridgeConnection",
    "encode_f32",
    "decode_f32",
    "encode_mask",
    "decode_mask",
]


class BridgeError(RuntimeError):
    """Protocol-level failure, either transport or an error frame."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message


def encode_f32(arr: np.ndarray) -> str:
    data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return base64.b64encode(data).decode("ascii")


def decode_f32(payload: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = base64.b64decode(payload)
    arr = np.frombuffer(raw, dtype="<f4")
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise BridgeError("bad_payload", f"expected {expected} f32 values, got {arr.size}")
    return arr.reshape(shape).astype(np.float64)


def encode_mask(mask: np.ndarray) -> str:
    data = np.ascontiguousarray(mask, dtype=np.uint8).tobytes()
    return base64.b64encode(data).decode("ascii")


def decode_mask(payload: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = base64.b64decode(payload)
    arr = np.frombuffer(raw, dtype=np.uint8)
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise BridgeError("bad_payload", f"expected {expected} bytes, got {arr.size}")
    return arr.reshape(shape) != 0


class BridgeConnection:
    """One protocol session over TCP (``tcp://host:port``) or a spawned
    subprocess (``stdio:<command line>``)."""

    def __init__(self, reader, writer, proc=None, sock=None):
        self._reader = reader
        self._writer = writer
        self._proc = proc
        self._sock = sock

    @classmethod
    def open(cls, endpoint: str) -> "BridgeConnection":
        if endpoint.startswith("tcp://"):
            parsed = urlparse(endpoint)
            if parsed.hostname is None or parsed.port is None:
                raise BridgeError("bad_endpoint", endpoint)
            sock = socket.create_connection((parsed.hostname, parsed.port))
            reader = sock.makefile("r", encoding="utf-8", newline="\n")
            writer = sock.makefile("w", encoding="utf-8", newline="\n")
            return cls(reader, writer, sock=sock)
        if endpoint.startswith("stdio:"):
            cmd = shlex.split(endpoint[len("stdio:"):])
            if not cmd:
                raise BridgeError("bad_endpoint", endpoint)
            proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                    text=True, bufsize=1)
            return cls(proc.stdout, proc.stdin, proc=proc)
        raise BridgeError("bad_endpoint", f"unsupported endpoint {endpoint!r}")

    def request(self, frame: dict) -> dict:
        """Send one frame and read its response; error frames raise."""
        try:
            self._writer.write(json.dumps(frame) + "\n")
            self._writer.flush()
            line = self._reader.readline()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError("transport", str(exc)) from exc
        if not line:
            raise BridgeError("transport", "connection closed by server")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeError("bad_frame", f"unparseable response: {line[:200]!r}") from exc
        if response.get("type") == "error":
            raise BridgeError(response.get("code", "unknown"), response.get("message", ""))
        return response

    def close(self) -> None:
        for stream in (self._writer, self._reader):
            try:
                stream.close()
            except Exception:
                pass
        if self._sock is not None:
            try:
                self._sock.close()
            except Exception:
                pass
        if self._proc is not None:
            try:
                self._proc.terminate()
                self._proc.wait(timeout=5)
            except Exception:
                pass

    def __enter__(self) -> "BridgeConnection":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
