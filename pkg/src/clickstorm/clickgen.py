"""Click types, click validity, and the baseline click-generation strategy.

The baseline strategy is the one standard benchmarks simulate: pick the
largest-area error component of the previous prediction and click the point
inside it that is furthest from the component's boundary. A click is *valid*
when it lands on an error pixel of the matching polarity: positive clicks in
the false-negative region, negative clicks in the false-positive region.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import maskops

__all__ = [
    "Click",
    "Trajectory",
    "baseline_click",
    "is_valid_click",
    "load_external_clicks",
]


@dataclass
class Click:
    """A single interaction: sub-pixel position, polarity, and disk radius."""

    x: float
    y: float
    positive: bool
    radius: float = 5.0

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("click radius must be positive")

    @property
    def polarity(self) -> str:
        return "positive" if self.positive else "negative"

    def pixel(self) -> tuple[int, int]:
        """Nearest integer pixel as (col, row)."""
        return int(math.floor(self.x + 0.5)), int(math.floor(self.y + 0.5))

    def moved_to(self, x: float, y: float) -> "Click":
        return Click(x=x, y=y, positive=self.positive, radius=self.radius)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "polarity": self.polarity, "radius": self.radius}

    @classmethod
    def from_dict(cls, d: dict) -> "Click":
        if d["polarity"] not in ("positive", "negative"):
            raise ValueError(f"unknown polarity {d['polarity']!r}")
        return cls(x=float(d["x"]), y=float(d["y"]),
                   positive=d["polarity"] == "positive", radius=float(d.get("radius", 5.0)))


@dataclass
class Trajectory:
    """An ordered click sequence with its per-click quality curves.

    Curves are padded with their final value up to the configured click
    budget when the interaction converges early, so they may be longer than
    the click list. ``diagnostics`` holds one list of per-iteration optimizer
    records per optimized click (empty for baseline/external trajectories).
    """

    kind: str  # baseline | minimizing | maximizing | external
    clicks: list[Click] = field(default_factory=list)
    iou_curve: list[float] = field(default_factory=list)
    biou_curve: list[float] = field(default_factory=list)
    diagnostics: list[list] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "clicks": [c.to_dict() for c in self.clicks],
            "iou_curve": list(self.iou_curve),
            "biou_curve": list(self.biou_curve),
            "diagnostics": [[r.to_dict() for r in recs] for recs in self.diagnostics],
        }


def baseline_click(pred, gt, threshold: float = 0.5, connectivity: int = 8,
                   radius: float = 5.0) -> Click | None:
    """Generate the baseline-strategy click for the current prediction state.

    Selects the largest error component (false negatives and false positives
    compete on area) and returns the click at the argmax of the component's
    inner distance transform; ties break to the smallest row, then column.
    Returns None when there are no error pixels (converged).
    """
    regions = maskops.error_regions(pred, gt, threshold, connectivity)
    target = regions.largest()
    if target is None:
        return None
    component = regions.labels == target.label
    dist = maskops.inner_distance_transform(component)
    flat = int(np.argmax(dist))  # first maximum in row-major order
    row, col = divmod(flat, dist.shape[1])
    return Click(x=float(col), y=float(row), positive=target.positive, radius=radius)


def is_valid_click(click: Click, pred, gt, threshold: float = 0.5) -> bool:
    """Whether a click lands on an error pixel of the matching polarity.

    Positive clicks must hit a yet-unselected object pixel (false negative);
    negative clicks must hit a selected background pixel (false positive).
    Membership is tested at the nearest integer pixel; out-of-image
    coordinates are simply invalid, never an error.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = maskops.as_bool_mask(gt)
    h, w = gt.shape
    col, row = click.pixel()
    if not (0 <= col < w and 0 <= row < h):
        return False
    selected = pred[row, col] >= threshold
    if click.positive:
        return bool(gt[row, col]) and not selected
    return bool(selected) and not bool(gt[row, col])


def load_external_clicks(path, radius: float = 5.0) -> list[tuple[str, list[Click]]]:
    """Parse a click CSV with header ``image_id,x,y,polarity``.

    Rows are grouped by image id, preserving first-appearance order of the
    ids and row order within a group. Malformed rows raise with the 1-based
    line number.
    """
    groups: dict[str, list[Click]] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["image_id", "x", "y", "polarity"]:
            raise ValueError(f"{path}: expected header image_id,x,y,polarity")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            image_id, xs, ys, polarity = (c.strip() for c in row)
            if polarity not in ("positive", "negative"):
                raise ValueError(f"{path}:{lineno}: unknown polarity {polarity!r}")
            try:
                x, y = float(xs), float(ys)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric coordinates") from None
            if image_id not in groups:
                groups[image_id] = []
                order.append(image_id)
            groups[image_id].append(Click(x=x, y=y, positive=polarity == "positive", radius=radius))
    return [(image_id, groups[image_id]) for image_id in order]
