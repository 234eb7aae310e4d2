"""Binary-mask algebra and the metric kernels the harness is built on.

Conventions used throughout the package:

* masks are 2-D boolean numpy arrays indexed ``[row, col]``, i.e. ``(y, x)``;
* probability maps are float arrays of the same shape with values in [0, 1];
* distances are exact Euclidean distances in pixel units;
* the image border counts as "outside" for the inner distance transform, so
  the furthest-from-boundary point is well defined even for masks touching
  the border.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

__all__ = [
    "iou",
    "boundary_iou",
    "boundary_band",
    "default_boundary_width",
    "inner_distance_transform",
    "outer_distance_transform",
    "connected_components",
    "Component",
    "ErrorRegions",
    "error_regions",
    "dice_loss",
    "dice_loss_with_gradient",
]


def as_bool_mask(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("mask must be a non-empty 2-D array")
    return arr.astype(bool, copy=False)


def _require_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def iou(a, b) -> float:
    """Intersection over union of two binary masks.

    Returns 1.0 when both masks are empty: a correct empty prediction is
    perfect, and downstream curve aggregation needs a defined value.
    """
    a = as_bool_mask(a)
    b = as_bool_mask(b)
    _require_same_shape(a, b)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


# ---------------------------------------------------------------------------
# Exact Euclidean distance transforms.
#
# Two-pass scheme: a column sweep produces, per pixel, the vertical distance
# to the nearest source in its own column; a row-wise lower envelope of
# parabolas then minimizes (x - j)^2 + g(j)^2 over all columns j.  All
# intermediate values are exact integers, so results match a brute-force
# nearest-source scan bit for bit.
# ---------------------------------------------------------------------------


def _squared_edt(sources: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest True pixel."""
    h, w = sources.shape
    big = h + w + 2  # larger than any attainable distance

    g = np.where(sources, 0, big).astype(np.int64)
    for i in range(1, h):
        np.minimum(g[i], g[i - 1] + 1, out=g[i])
    for i in range(h - 2, -1, -1):
        np.minimum(g[i], g[i + 1] + 1, out=g[i])

    out = np.empty((h, w), dtype=np.int64)
    v = np.empty(w, dtype=np.int64)  # column index of i-th parabola
    z = np.empty(w + 1, dtype=np.float64)  # envelope breakpoints
    for i in range(h):
        f = g[i].astype(np.float64) ** 2
        k = 0
        v[0] = 0
        z[0] = -np.inf
        z[1] = np.inf
        for q in range(1, w):
            s = (f[q] + q * q - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
            while s <= z[k]:
                k -= 1
                s = (f[q] + q * q - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        k = 0
        row = out[i]
        for q in range(w):
            while z[k + 1] < q:
                k += 1
            dq = q - v[k]
            row[q] = dq * dq + int(f[v[k]])
    return out


def inner_distance_transform(region) -> np.ndarray:
    """Distance from each region pixel to the nearest pixel outside it.

    The image border counts as outside.  Pixels outside the region get 0.
    """
    region = as_bool_mask(region)
    h, w = region.shape
    padded = np.ones((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = ~region
    sq = _squared_edt(padded)[1:-1, 1:-1]
    return np.sqrt(sq.astype(np.float64))


def outer_distance_transform(region) -> np.ndarray:
    """Distance from every pixel to the nearest pixel inside the region."""
    region = as_bool_mask(region)
    if not region.any():
        raise ValueError("outer distance transform of an empty region is undefined")
    return np.sqrt(_squared_edt(region).astype(np.float64))


def default_boundary_width(height: int, width: int) -> float:
    """Default boundary-band width: 2% of the image diagonal, at least 1 px."""
    return max(1.0, 0.02 * math.hypot(height, width))


def boundary_band(mask, dist: float) -> np.ndarray:
    """Pixels of ``mask`` within Euclidean distance ``dist`` of its boundary."""
    mask = as_bool_mask(mask)
    h, w = mask.shape
    padded = np.ones((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = ~mask
    sq = _squared_edt(padded)[1:-1, 1:-1]
    return mask & (sq <= dist * dist)


def boundary_iou(a, b, dist: float | None = None) -> float:
    """IoU restricted to a band of width ``dist`` inside each mask's boundary.

    ``dist`` defaults to 2% of the image diagonal (minimum one pixel).
    """
    a = as_bool_mask(a)
    b = as_bool_mask(b)
    _require_same_shape(a, b)
    if dist is None:
        dist = default_boundary_width(*a.shape)
    if dist <= 0:
        raise ValueError("boundary band width must be positive")
    return iou(boundary_band(a, dist), boundary_band(b, dist))


# ---------------------------------------------------------------------------
# Connectivity.
# ---------------------------------------------------------------------------

_N4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_N8 = _N4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


def connected_components(mask, connectivity: int = 8) -> tuple[np.ndarray, list[int]]:
    """Label connected regions of a binary mask.

    Returns ``(labels, areas)`` where labels run 1..n in row-major discovery
    order (0 = background) and ``areas[i]`` is the pixel count of label i+1.
    """
    mask = as_bool_mask(mask)
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    offsets = _N4 if connectivity == 4 else _N8
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    areas: list[int] = []
    for i in range(h):
        for j in range(w):
            if not mask[i, j] or labels[i, j]:
                continue
            label = len(areas) + 1
            area = 0
            queue = deque([(i, j)])
            labels[i, j] = label
            while queue:
                y, x = queue.popleft()
                area += 1
                for dy, dx in offsets:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = label
                        queue.append((ny, nx))
            areas.append(area)
    return labels, areas


@dataclass(frozen=True)
class Component:
    """One connected error component.

    ``positive`` is the polarity of the click that would fix it: True for a
    false-negative component, False for a false-positive one.
    """

    label: int
    area: int
    positive: bool


@dataclass
class ErrorRegions:
    """False-positive / false-negative partition of a prediction error."""

    false_positive: np.ndarray
    false_negative: np.ndarray
    labels: np.ndarray
    components: list[Component]

    def is_empty(self) -> bool:
        return not self.components

    def largest(self) -> Component | None:
        """Largest-area component; ties go to the earliest label."""
        if not self.components:
            return None
        return max(self.components, key=lambda c: (c.area, -c.label))


def error_regions(pred, gt, threshold: float = 0.5, connectivity: int = 8) -> ErrorRegions:
    """Split prediction errors into labeled FP / FN components.

    ``pred`` is a probability map, binarized at ``threshold``.  False-negative
    components are labeled first, then false-positive ones, each in row-major
    discovery order, so labeling is deterministic.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = as_bool_mask(gt)
    _require_same_shape(pred, gt)
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    selected = pred >= threshold
    fp = selected & ~gt
    fn = gt & ~selected

    labels = np.zeros(gt.shape, dtype=np.int32)
    components: list[Component] = []
    for region, positive in ((fn, True), (fp, False)):
        sub, areas = connected_components(region, connectivity)
        offset = len(components)
        if offset:
            sub = np.where(sub > 0, sub + offset, 0)
        labels += sub.astype(np.int32)
        components.extend(
            Component(label=offset + k + 1, area=a, positive=positive)
            for k, a in enumerate(areas)
        )
    return ErrorRegions(false_positive=fp, false_negative=fn, labels=labels, components=components)


# ---------------------------------------------------------------------------
# Soft Dice.
# ---------------------------------------------------------------------------


def dice_loss(pred, gt, smooth: float = 1.0) -> float:
    """Soft Dice loss, 1 - (2*sum(p*g) + smooth) / (sum(p) + sum(g) + smooth)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = as_bool_mask(gt)
    _require_same_shape(pred, gt)
    g = gt.astype(np.float64)
    inter = float(np.sum(pred * g))
    denom = float(np.sum(pred) + np.sum(g)) + smooth
    return 1.0 - (2.0 * inter + smooth) / denom


def dice_loss_with_gradient(pred, gt, smooth: float = 1.0) -> tuple[float, np.ndarray]:
    """Soft Dice loss plus its gradient with respect to every pixel of ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = as_bool_mask(gt)
    _require_same_shape(pred, gt)
    g = gt.astype(np.float64)
    inter = float(np.sum(pred * g))
    denom = float(np.sum(pred) + np.sum(g)) + smooth
    loss = 1.0 - (2.0 * inter + smooth) / denom
    # d/dp_i of -(2*inter + smooth)/denom via the quotient rule
    grad = -(2.0 * g * denom - (2.0 * inter + smooth)) / (denom * denom)
    return loss, grad
