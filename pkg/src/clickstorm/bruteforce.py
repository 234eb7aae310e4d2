"""Exhaustive grid evaluation of click positions.

A full sweep places one extra click at every grid position, runs the
segmenter, and records IoU / Boundary IoU per cell. The resulting heatmaps
cover the whole image; the min/max oracles are restricted to valid click
positions, since that is the space the optimizer is constrained to. Cell
failures are recorded and rendered neutral instead of aborting the sweep,
so a large grid survives transient bridge errors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import maskops
from .clickgen import Click
from .segmenters import Segmenter, SegmenterRequest

__all__ = ["GridResult", "grid_search", "auto_stride", "write_heatmap", "load_sidecar", "spread"]

MAX_AUTO_CELLS = 16384

# fixed cold-to-warm ramp: value 0 renders deep blue, 1 renders deep red
_RAMP = ((0.0, (0, 0, 140)), (0.35, (0, 150, 255)), (0.65, (255, 235, 0)), (1.0, (200, 0, 0)))
_RAMP_DOC = ("piecewise-linear cold-to-warm ramp, stops "
             "0.0:(0,0,140) 0.35:(0,150,255) 0.65:(255,235,0) 1.0:(200,0,0); "
             "missing cells are gray (128,128,128)")


@dataclass
class GridResult:
    """IoU / BIoU values for clicks placed on a stride grid.

    Grid cell (i, j) corresponds to pixel position (x = j*stride,
    y = i*stride). Failed cells hold NaN. Extrema are taken over valid cells
    only and are None when no valid cell exists.
    """

    stride: int
    iou_grid: np.ndarray
    biou_grid: np.ndarray
    valid_mask: np.ndarray
    iou_min: float | None = None
    iou_max: float | None = None
    iou_min_position: tuple[int, int] | None = None  # (x, y)
    iou_max_position: tuple[int, int] | None = None
    biou_min: float | None = None
    biou_max: float | None = None
    failures: list[tuple[int, int, str]] = field(default_factory=list)

    # the IoU extrema are the primary oracle values
    @property
    def global_min(self) -> float | None:
        return self.iou_min

    @property
    def global_max(self) -> float | None:
        return self.iou_max


def auto_stride(height: int, width: int) -> int:
    """Stride 1 up to 128 px a side, else the smallest stride keeping the
    grid at or under 16384 cells."""
    if max(height, width) <= 128:
        return 1
    stride = 1
    while math.ceil(height / stride) * math.ceil(width / stride) > MAX_AUTO_CELLS:
        stride += 1
    return stride


def grid_search(segmenter: Segmenter, image, gt, prefix: list[Click] | None = None,
                prev_mask: np.ndarray | None = None, positive: bool = True,
                stride: int | None = None, threshold: float = 0.5,
                connectivity: int = 8, boundary_width: float | None = None) -> GridResult:
    """Evaluate a click of the given polarity at every grid position."""
    gt = maskops.as_bool_mask(gt)
    h, w = gt.shape
    if stride is None:
        stride = auto_stride(h, w)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    prefix = list(prefix or [])
    state = prev_mask if prev_mask is not None else np.zeros((h, w), dtype=np.float64)
    bw = boundary_width if boundary_width is not None else maskops.default_boundary_width(h, w)

    regions = maskops.error_regions(state, gt, threshold, connectivity)
    relevant = regions.false_negative if positive else regions.false_positive

    ys = np.arange(0, h, stride)
    xs = np.arange(0, w, stride)
    iou_grid = np.full((ys.size, xs.size), np.nan)
    biou_grid = np.full((ys.size, xs.size), np.nan)
    valid = relevant[np.ix_(ys, xs)].copy()
    failures: list[tuple[int, int, str]] = []

    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            click = Click(x=float(x), y=float(y), positive=positive, radius=segmenter.radius)
            req = SegmenterRequest(image=image, clicks=prefix + [click], prev_mask=prev_mask)
            try:
                pred = segmenter.predict(req)
            except Exception as exc:
                failures.append((int(x), int(y), str(exc)))
                continue
            binary = pred >= threshold
            iou_grid[i, j] = maskops.iou(binary, gt)
            biou_grid[i, j] = maskops.boundary_iou(binary, gt, bw)

    result = GridResult(stride=stride, iou_grid=iou_grid, biou_grid=biou_grid,
                        valid_mask=valid, failures=failures)
    usable = valid & np.isfinite(iou_grid)
    if usable.any():
        vals = np.where(usable, iou_grid, np.nan)
        imin = int(np.nanargmin(vals))
        imax = int(np.nanargmax(vals))
        ri, ci = divmod(imin, xs.size)
        ra, ca = divmod(imax, xs.size)
        result.iou_min = float(iou_grid[ri, ci])
        result.iou_max = float(iou_grid[ra, ca])
        result.iou_min_position = (int(xs[ci]), int(ys[ri]))
        result.iou_max_position = (int(xs[ca]), int(ys[ra]))
        bvals = np.where(valid & np.isfinite(biou_grid), biou_grid, np.nan)
        result.biou_min = float(np.nanmin(bvals))
        result.biou_max = float(np.nanmax(bvals))
    return result


def _ramp_color(v: float) -> tuple[int, int, int]:
    if not math.isfinite(v):
        return (128, 128, 128)
    v = min(max(v, 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(_RAMP, _RAMP[1:]):
        if v <= t1:
            f = 0.0 if t1 == t0 else (v - t0) / (t1 - t0)
            return tuple(int(round(a + f * (b - a))) for a, b in zip(c0, c1))
    return _RAMP[-1][1]


def write_heatmap(grid: GridResult, channel: str, path) -> None:
    """Write an 8-bit heatmap PNG plus a sidecar JSON with the raw values.

    The PNG has exactly the grid's cell dimensions. The sidecar stores the
    stride, channel, raw values (null for failed cells), the validity mask,
    and a description of the color ramp.
    """
    if channel not in ("iou", "biou"):
        raise ValueError("channel must be 'iou' or 'biou'")
    values = grid.iou_grid if channel == "iou" else grid.biou_grid
    rows, cols = values.shape
    rgb = np.zeros((rows, cols, 3), dtype=np.uint8)
    for i in range(rows):
        for j in range(cols):
            rgb[i, j] = _ramp_color(float(values[i, j]))
    Image.fromarray(rgb, mode="RGB").save(str(path))

    sidecar = {
        "stride": grid.stride,
        "channel": channel,
        "values": [[None if not math.isfinite(v) else float(v) for v in row] for row in values],
        "valid": [[bool(v) for v in row] for row in grid.valid_mask],
        "colormap": _RAMP_DOC,
    }
    sidecar_path = str(path) + ".json"
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh)


def load_sidecar(path) -> tuple[np.ndarray, np.ndarray, int]:
    """Reload a heatmap sidecar; returns (values with NaN for nulls, valid, stride)."""
    with open(path) as fh:
        data = json.load(fh)
    values = np.array([[np.nan if v is None else v for v in row] for row in data["values"]],
                      dtype=np.float64)
    valid = np.array(data["valid"], dtype=bool)
    return values, valid, int(data["stride"])


def spread(values) -> float:
    """Max minus min of a nonempty value list."""
    vals = list(values)
    if not vals:
        raise ValueError("spread of an empty value list is undefined")
    return max(vals) - min(vals)
