"""The segmenter contract plus the built-in analytic reference segmenters.

A segmenter maps (image, clicks, previous mask) to a probability map and,
when it supports gradients, reports the derivative of the soft Dice loss
with respect to the coordinates of one click. The analytic reference models
here are desk-scale stand-ins for neural click-based models: they are cheap,
deterministic, and differentiable end to end, which lets the whole harness
be validated against brute force.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

from . import bridge as bridge_proto
from . import maskops, render
from .clickgen import Click

__all__ = [
    "SegmenterRequest",
    "SegmenterCapabilities",
    "CapabilityError",
    "Segmenter",
    "OracleSegmenter",
    "ConstantSegmenter",
    "BlobSegmenter",
    "RuggedSegmenter",
    "BridgedSegmenter",
    "SegmenterProfile",
]


@dataclass
class SegmenterRequest:
    """One prediction request: image, interaction history, previous mask."""

    image: np.ndarray  # (H, W, 3) float in [0, 1]
    clicks: list[Click]
    prev_mask: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]


@dataclass(frozen=True)
class SegmenterCapabilities:
    input_mode: str  # disk_maps | raw_coordinates
    supports_gradients: bool
    native_resolution: int | None = None


class CapabilityError(RuntimeError):
    """Raised when an operation needs a capability the segmenter lacks."""


class Segmenter:
    """Base contract. Subclasses implement ``_predict`` and, if they declare
    gradient support, ``dice_coordinate_gradient``."""

    capabilities = SegmenterCapabilities(input_mode="disk_maps", supports_gradients=False)
    radius: float = 5.0
    sharpness: float = render.DEFAULT_SHARPNESS

    def predict(self, req: SegmenterRequest) -> np.ndarray:
        if not req.clicks:
            raise ValueError("predict requires at least one click")
        prob = self._predict(req)
        if prob.shape != req.shape:
            raise RuntimeError(f"segmenter returned shape {prob.shape}, expected {req.shape}")
        return prob

    def _predict(self, req: SegmenterRequest) -> np.ndarray:
        raise NotImplementedError

    def dice_coordinate_gradient(self, req: SegmenterRequest, gt, direction: str,
                                 active: int) -> tuple[float, float]:
        """d(s * dice)/d(x, y) of click ``active``, s = +1 for "max" else -1."""
        raise CapabilityError(f"{type(self).__name__} does not support gradients")

    def close(self) -> None:
        pass


def _check_grad_args(req: SegmenterRequest, direction: str, active: int) -> float:
    if direction not in ("min", "max"):
        raise ValueError(f"direction must be 'min' or 'max', got {direction!r}")
    if not 0 <= active < len(req.clicks):
        raise IndexError(f"active click index {active} out of range")
    return 1.0 if direction == "max" else -1.0


class OracleSegmenter(Segmenter):
    """Test double that reveals the ground truth after any positive click.

    Its prediction does not depend on where clicks land, so the true
    coordinate gradient is identically zero.
    """

    capabilities = SegmenterCapabilities(input_mode="disk_maps", supports_gradients=True)

    def __init__(self, gt, radius: float = 5.0, sharpness: float = render.DEFAULT_SHARPNESS):
        self.gt = maskops.as_bool_mask(gt)
        self.radius = radius
        self.sharpness = sharpness

    def _predict(self, req: SegmenterRequest) -> np.ndarray:
        if any(c.positive for c in req.clicks):
            return self.gt.astype(np.float64)
        return np.zeros(req.shape, dtype=np.float64)

    def dice_coordinate_gradient(self, req, gt, direction, active):
        _check_grad_args(req, direction, active)
        return 0.0, 0.0


class ConstantSegmenter(Segmenter):
    """Always returns the same map; declares no gradient support."""

    capabilities = SegmenterCapabilities(input_mode="disk_maps", supports_gradients=False)

    def __init__(self, prob_map, radius: float = 5.0):
        self.prob_map = np.asarray(prob_map, dtype=np.float64)
        self.radius = radius

    def _predict(self, req: SegmenterRequest) -> np.ndarray:
        return self.prob_map.copy()


def _gaussian_kernel(sigma: float) -> np.ndarray:
    r = max(1, int(math.ceil(3.0 * sigma)))
    t = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _blur(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # separable, zero-padded; symmetric kernel, so the operator is self-adjoint
    out = convolve1d(arr, kernel, axis=0, mode="constant", cval=0.0)
    return convolve1d(out, kernel, axis=1, mode="constant", cval=0.0)


@dataclass
class _BlobState:
    """Forward-pass intermediates kept for the backward pass."""

    maps: render.ClickMaps
    z: np.ndarray
    intensity: np.ndarray
    affinity_map: np.ndarray | None
    mean_intensity: float
    positive_mass: float


class BlobSegmenter(Segmenter):
    """Analytic reference model built from blurred click disks.

    logits = w_pos * blur(M+) - w_neg * blur(M-) + bias + affinity * A
    A(p)   = exp(-(I(p) - Ibar)^2 / tau)

    where M+/M- are the rendered click maps, I is the image intensity
    (channel mean) and Ibar is the soft-disk-weighted mean intensity under
    the positive clicks. The affinity channel couples the prediction to the
    image texture, which makes quality genuinely depend on where inside the
    object a click lands.
    """

    capabilities = SegmenterCapabilities(input_mode="disk_maps", supports_gradients=True)

    def __init__(self, sigma: float = 1.2, w_pos: float = 7.0, w_neg: float = 3.0,
                 bias: float = -4.2, affinity: float = 3.0, tau: float = 0.01,
                 radius: float = 5.0, sharpness: float = render.DEFAULT_SHARPNESS):
        if sigma <= 0:
            raise ValueError("blur sigma must be positive")
        if w_pos <= 0 or w_neg <= 0:
            raise ValueError("click-map weights must be positive")
        self.sigma = sigma
        self.w_pos = w_pos
        self.w_neg = w_neg
        self.bias = bias
        self.affinity = affinity
        self.tau = tau
        self.radius = radius
        self.sharpness = sharpness
        self._kernel = _gaussian_kernel(sigma)

    # -- forward -----------------------------------------------------------

    def _forward(self, req: SegmenterRequest) -> _BlobState:
        h, w = req.shape
        # untruncated disks keep the logits smooth in the click coordinates
        maps = render.render_clicks(req.clicks, h, w, self.sharpness, margin=np.inf)
        z = (self.w_pos * _blur(maps.positive, self._kernel)
             - self.w_neg * _blur(maps.negative, self._kernel)
             + self.bias)
        intensity = np.mean(np.asarray(req.image, dtype=np.float64), axis=2)
        affinity_map = None
        mean_intensity = 0.0
        mass = float(np.sum(maps.positive))
        if self.affinity != 0.0 and mass > 1e-12:
            mean_intensity = float(np.sum(maps.positive * intensity) / mass)
            affinity_map = np.exp(-((intensity - mean_intensity) ** 2) / self.tau)
            z = z + self.affinity * affinity_map
        elif self.affinity != 0.0:
            # no positive support: neutral affinity
            z = z + self.affinity
        return _BlobState(maps=maps, z=z, intensity=intensity, affinity_map=affinity_map,
                          mean_intensity=mean_intensity, positive_mass=mass)

    def _predict(self, req: SegmenterRequest) -> np.ndarray:
        return _sigmoid(self._forward(req).z)

    # -- backward ----------------------------------------------------------

    def _coordinate_gradient(self, state: _BlobState, dldz: np.ndarray,
                             active: int) -> tuple[float, float]:
        up_pos = self.w_pos * _blur(dldz, self._kernel)
        up_neg = -self.w_neg * _blur(dldz, self._kernel)
        if state.affinity_map is not None:
            a = state.affinity_map
            di = state.intensity - state.mean_intensity
            dld_ibar = float(np.sum(dldz * self.affinity * a * 2.0 * di / self.tau))
            up_pos = up_pos + dld_ibar * di / state.positive_mass
        grads = render.render_gradient(state.maps, up_pos, up_neg)
        return float(grads[active, 0]), float(grads[active, 1])

    def dice_coordinate_gradient(self, req, gt, direction, active):
        s = _check_grad_args(req, direction, active)
        state = self._forward(req)
        prob = _sigmoid(state.z)
        _, dldp = maskops.dice_loss_with_gradient(prob, gt)
        dldz = s * dldp * prob * (1.0 - prob)
        return self._coordinate_gradient(state, dldz, active)


class RuggedSegmenter(Segmenter):
    """Wraps a blob segmenter with a smooth pseudo-random logit perturbation.

    The perturbation is a fixed sum of random-phase sinusoids of the click
    coordinates, each modulating a fixed spatial sinusoid, so the quality
    landscape becomes non-convex while staying differentiable and exactly
    reproducible from the seed. Amplitude 0 leaves the base model bit-exact.
    """

    def __init__(self, base: BlobSegmenter, seed: int = 0, amplitude: float = 4.0,
                 terms: int = 6, decay: float = 2.0,
                 click_freq: tuple[float, float] = (0.8, 2.8),
                 pixel_freq: tuple[float, float] = (0.2, 1.2)):
        if amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        self.base = base
        self.amplitude = amplitude
        self.decay = decay
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._click_freq = rng.uniform(click_freq[0], click_freq[1], size=(terms, 2))
        self._click_phase = rng.uniform(0.0, 2.0 * math.pi, size=terms)
        self._pixel_freq = rng.uniform(pixel_freq[0], pixel_freq[1], size=(terms, 2))
        self._pixel_phase = rng.uniform(0.0, 2.0 * math.pi, size=terms)
        self._scale = amplitude / math.sqrt(terms)
        self._fields: dict[tuple[int, int], np.ndarray] = {}

    @property
    def capabilities(self) -> SegmenterCapabilities:  # type: ignore[override]
        return self.base.capabilities

    @property
    def radius(self) -> float:  # type: ignore[override]
        return self.base.radius

    @property
    def sharpness(self) -> float:  # type: ignore[override]
        return self.base.sharpness

    def _pixel_fields(self, h: int, w: int) -> np.ndarray:
        key = (h, w)
        if key not in self._fields:
            ys = np.arange(h, dtype=np.float64)[:, None]
            xs = np.arange(w, dtype=np.float64)[None, :]
            self._fields[key] = np.stack([
                np.sin(fx * xs + fy * ys + ph)
                for (fx, fy), ph in zip(self._pixel_freq, self._pixel_phase)
            ])
        return self._fields[key]

    def _click_terms(self, clicks) -> np.ndarray:
        # normalizing the sinusoid sum by n^decay makes the perturbation fall off
        # as interactions accumulate even when every click is placed
        # adversarially, mirroring how real models get pinned down by evidence
        xs = np.array([c.x for c in clicks])
        ys = np.array([c.y for c in clicks])
        args = (self._click_freq[:, 0:1] * xs[None, :]
                + self._click_freq[:, 1:2] * ys[None, :]
                + self._click_phase[:, None])
        return np.sin(args).sum(axis=1) / len(clicks) ** self.decay

    def _delta(self, req: SegmenterRequest) -> np.ndarray:
        h, w = req.shape
        coeffs = self._click_terms(req.clicks)
        fields = self._pixel_fields(h, w)
        return self._scale * np.tensordot(coeffs, fields, axes=1)

    def _predict(self, req: SegmenterRequest) -> np.ndarray:
        state = self.base._forward(req)
        if self.amplitude == 0.0:
            return _sigmoid(state.z)
        return _sigmoid(state.z + self._delta(req))

    def dice_coordinate_gradient(self, req, gt, direction, active):
        s = _check_grad_args(req, direction, active)
        state = self.base._forward(req)
        if self.amplitude == 0.0:
            z = state.z
        else:
            z = state.z + self._delta(req)
        prob = _sigmoid(z)
        _, dldp = maskops.dice_loss_with_gradient(prob, gt)
        dldz = s * dldp * prob * (1.0 - prob)
        gx, gy = self.base._coordinate_gradient(state, dldz, active)
        if self.amplitude > 0.0:
            c = req.clicks[active]
            h, w = req.shape
            fields = self._pixel_fields(h, w)
            dots = np.tensordot(fields, dldz, axes=([1, 2], [0, 1]))
            args = (self._click_freq[:, 0] * c.x + self._click_freq[:, 1] * c.y
                    + self._click_phase)
            cos = np.cos(args) / len(req.clicks) ** self.decay  # matches _click_terms
            gx += self._scale * float(np.sum(self._click_freq[:, 0] * cos * dots))
            gy += self._scale * float(np.sum(self._click_freq[:, 1] * cos * dots))
        return gx, gy


class BridgedSegmenter(Segmenter):
    """Client for an externally served model speaking the bridge protocol.

    One connection carries one session at a time; the session is re-initialized
    whenever the request image changes.
    """

    def __init__(self, endpoint: str, radius: float = 5.0,
                 sharpness: float = render.DEFAULT_SHARPNESS):
        self.endpoint = endpoint
        self.radius = radius
        self.sharpness = sharpness
        self._conn = bridge_proto.BridgeConnection.open(endpoint)
        self._session_image: np.ndarray | None = None
        self._caps: SegmenterCapabilities | None = None

    @property
    def capabilities(self) -> SegmenterCapabilities:  # type: ignore[override]
        if self._caps is None:
            raise RuntimeError("capabilities unknown before the first request")
        return self._caps

    def _ensure_session(self, req: SegmenterRequest) -> None:
        image = np.asarray(req.image, dtype=np.float64)
        if self._session_image is not None and np.array_equal(self._session_image, image):
            return
        h, w = image.shape[0], image.shape[1]
        ready = self._conn.request({
            "type": "init", "height": h, "width": w,
            "image": bridge_proto.encode_f32(image),
        })
        if ready.get("type") != "ready":
            raise bridge_proto.BridgeError("bad_frame", f"expected ready, got {ready.get('type')}")
        self._caps = SegmenterCapabilities(
            input_mode=ready["input_mode"],
            supports_gradients=bool(ready["supports_gradients"]),
            native_resolution=ready.get("native_resolution"),
        )
        self._session_image = image

    @staticmethod
    def _click_frames(clicks) -> list[dict]:
        return [{"x": c.x, "y": c.y, "sign": 1 if c.positive else -1} for c in clicks]

    def _predict(self, req: SegmenterRequest) -> np.ndarray:
        self._ensure_session(req)
        prev = None if req.prev_mask is None else bridge_proto.encode_f32(req.prev_mask)
        resp = self._conn.request({
            "type": "predict", "clicks": self._click_frames(req.clicks), "prev_mask": prev,
        })
        if resp.get("type") != "prediction":
            raise bridge_proto.BridgeError("bad_frame", f"expected prediction, got {resp.get('type')}")
        return bridge_proto.decode_f32(resp["map"], req.shape)

    def dice_coordinate_gradient(self, req, gt, direction, active):
        self._ensure_session(req)
        if not self.capabilities.supports_gradients:
            raise CapabilityError("bridged model does not support gradients")
        _check_grad_args(req, direction, active)
        resp = self._conn.request({
            "type": "grad",
            "clicks": self._click_frames(req.clicks),
            "gt": bridge_proto.encode_mask(np.asarray(gt, dtype=bool)),
            "direction": direction,
            "active": active,
        })
        if resp.get("type") != "gradient":
            raise bridge_proto.BridgeError("bad_frame", f"expected gradient, got {resp.get('type')}")
        gx, gy = resp["dxy"]
        return float(gx), float(gy)

    def close(self) -> None:
        self._conn.close()


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class SegmenterProfile:
    """Configuration for constructing segmenter instances.

    ``kind`` is one of oracle | blob | rugged | bridge. Disk radius is
    per-profile: it is an architecture hyperparameter of the wrapped model.
    """

    kind: str
    radius: float = 5.0
    sharpness: float = render.DEFAULT_SHARPNESS
    params: dict = field(default_factory=dict)
    endpoint: str | None = None

    _RUGGED_KEYS = ("amplitude", "terms", "seed")

    def build(self, gt=None, seed: int = 0) -> Segmenter:
        if self.kind == "oracle":
            if gt is None:
                raise ValueError("oracle segmenter needs a ground-truth mask")
            return OracleSegmenter(gt, radius=self.radius, sharpness=self.sharpness)
        if self.kind == "blob":
            return BlobSegmenter(radius=self.radius, sharpness=self.sharpness, **self.params)
        if self.kind == "rugged":
            params = dict(self.params)
            amplitude = params.pop("amplitude", 4.0)
            terms = params.pop("terms", 6)
            decay = params.pop("decay", 2.0)
            noise_seed = params.pop("seed", seed)
            base = BlobSegmenter(radius=self.radius, sharpness=self.sharpness, **params)
            return RuggedSegmenter(base, seed=noise_seed, amplitude=amplitude,
                                   terms=terms, decay=decay)
        if self.kind == "bridge":
            if not self.endpoint:
                raise ValueError("bridge segmenter needs an endpoint")
            return BridgedSegmenter(self.endpoint, radius=self.radius, sharpness=self.sharpness)
        raise ValueError(f"unknown segmenter kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "radius": self.radius, "sharpness": self.sharpness,
                "params": dict(self.params), "endpoint": self.endpoint}

    @classmethod
    def from_dict(cls, d: dict) -> "SegmenterProfile":
        return cls(kind=d["kind"], radius=float(d.get("radius", 5.0)),
                   sharpness=float(d.get("sharpness", render.DEFAULT_SHARPNESS)),
                   params=dict(d.get("params", {})), endpoint=d.get("endpoint"))
