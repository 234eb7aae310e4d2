"""Differentiable rasterization of clicks into per-polarity disk maps.

Each click contributes a soft disk

    m(p) = sigmoid(sharpness * (radius - ||p - (x, y)||))

evaluated at integer pixel centers. Disks of the same polarity combine by
per-pixel maximum, which keeps map values in [0, 1] and makes the maps
invariant to click reordering. The combined maps are smooth in the click
coordinates wherever the maximum is attained by a single disk; where another
disk dominates, a click's subgradient contribution is zero.

Footprints are evaluated only inside a bounding box of half-width
``radius + margin/sharpness`` around the click and are exactly zero outside
it; the sigmoid saturates there, so the truncation error is negligible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["ClickMaps", "render_clicks", "render_gradient", "soft_disk"]

DEFAULT_SHARPNESS = 2.0
# Half-width of the evaluated footprint beyond the disk radius, in units of
# 1/sharpness. sigmoid(-10) ~ 4.5e-5, far below anything the maps feed into.
FOOTPRINT_MARGIN = 10.0


def _footprint_box(x: float, y: float, extent: float, h: int, w: int):
    """Inclusive pixel box covered by a disk footprint, clipped to the image."""
    x0 = max(0, int(math.floor(x - extent)))
    x1 = min(w - 1, int(math.ceil(x + extent)))
    y0 = max(0, int(math.floor(y - extent)))
    y1 = min(h - 1, int(math.ceil(y + extent)))
    return x0, x1, y0, y1


def soft_disk(x: float, y: float, radius: float, h: int, w: int,
              sharpness: float = DEFAULT_SHARPNESS,
              margin: float = FOOTPRINT_MARGIN) -> np.ndarray:
    """Render a single soft disk on an H x W raster.

    Values outside the footprint box are exactly zero. Pass ``margin=inf``
    for an untruncated (everywhere smooth) evaluation.
    """
    if sharpness <= 0:
        raise ValueError("sharpness must be positive")
    if radius <= 0:
        raise ValueError("disk radius must be positive")
    out = np.zeros((h, w), dtype=np.float64)
    if math.isinf(margin):
        xs = np.arange(w, dtype=np.float64)
        ys = np.arange(h, dtype=np.float64)
        d = np.hypot(xs[None, :] - x, ys[:, None] - y)
        out[:] = _sigmoid(sharpness * (radius - d))
        return out
    extent = radius + margin / sharpness
    x0, x1, y0, y1 = _footprint_box(x, y, extent, h, w)
    if x0 > x1 or y0 > y1:
        return out
    xs = np.arange(x0, x1 + 1, dtype=np.float64)
    ys = np.arange(y0, y1 + 1, dtype=np.float64)
    d = np.hypot(xs[None, :] - x, ys[:, None] - y)
    out[y0:y1 + 1, x0:x1 + 1] = _sigmoid(sharpness * (radius - d))
    return out


def _sigmoid(t: np.ndarray) -> np.ndarray:
    # piecewise form avoids overflow in exp for large |t|
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    out[~pos] = et / (1.0 + et)
    return out


@dataclass
class ClickMaps:
    """Rendered per-polarity click maps plus bookkeeping for gradients.

    ``owner_positive`` / ``owner_negative`` hold, per pixel, the index (into
    the original click list) of the disk attaining the per-pixel maximum, or
    -1 where no disk contributes.
    """

    positive: np.ndarray
    negative: np.ndarray
    owner_positive: np.ndarray
    owner_negative: np.ndarray
    clicks: list
    sharpness: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.positive.shape


def render_clicks(clicks, height: int, width: int,
                  sharpness: float = DEFAULT_SHARPNESS,
                  margin: float = FOOTPRINT_MARGIN) -> ClickMaps:
    """Rasterize a click list into positive / negative soft-disk maps."""
    pos = np.zeros((height, width), dtype=np.float64)
    neg = np.zeros((height, width), dtype=np.float64)
    own_p = np.full((height, width), -1, dtype=np.int32)
    own_n = np.full((height, width), -1, dtype=np.int32)
    for idx, c in enumerate(clicks):
        disk = soft_disk(c.x, c.y, c.radius, height, width, sharpness, margin)
        target, owner = (pos, own_p) if c.positive else (neg, own_n)
        better = disk > target
        owner[better] = idx
        np.maximum(target, disk, out=target)
    return ClickMaps(positive=pos, negative=neg, owner_positive=own_p,
                     owner_negative=own_n, clicks=list(clicks), sharpness=sharpness)


def render_gradient(maps: ClickMaps, upstream_positive: np.ndarray | None,
                    upstream_negative: np.ndarray | None = None) -> np.ndarray:
    """Backpropagate per-pixel map gradients onto click coordinates.

    Given dL/d(positive map) and dL/d(negative map), returns an array of
    shape (n_clicks, 2) holding (dL/dx, dL/dy) per click. Only pixels owned
    by a click contribute to its gradient (max combination subgradient).
    """
    h, w = maps.shape
    grads = np.zeros((len(maps.clicks), 2), dtype=np.float64)
    for upstream, owner, value in (
        (upstream_positive, maps.owner_positive, maps.positive),
        (upstream_negative, maps.owner_negative, maps.negative),
    ):
        if upstream is None:
            continue
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != (h, w):
            raise ValueError(f"upstream shape {upstream.shape} does not match maps {(h, w)}")
        for idx, c in enumerate(maps.clicks):
            rows, cols = np.nonzero(owner == idx)
            if rows.size == 0:
                continue
            m = value[rows, cols]
            dx = cols.astype(np.float64) - c.x
            dy = rows.astype(np.float64) - c.y
            dist = np.hypot(dx, dy)
            # dm/d(cx) = sharpness * m * (1 - m) * (px - cx) / dist;
            # at dist == 0 the disk is stationary in first order.
            safe = dist > 1e-12
            scale = np.zeros_like(dist)
            scale[safe] = maps.sharpness * m[safe] * (1.0 - m[safe]) / dist[safe]
            u = upstream[rows, cols]
            grads[idx, 0] += float(np.sum(u * scale * dx))
            grads[idx, 1] += float(np.sum(u * scale * dy))
    return grads
