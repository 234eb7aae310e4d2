"""Loss functions and the gradient-based adversarial click optimizer.

Each interaction round optimizes one click while all earlier clicks stay
frozen. The total loss is

    L = s * dice + ill_weight * ILL(active click)

with s = +1 when maximizing quality and s = -1 when minimizing it; the
optimizer always descends L. The interaction location loss (ILL) is the
soft-disk-weighted mean distance of the click from the error region it is
supposed to fix, normalized by the image diagonal so the weight stays
dimensionally sane across resolutions:

    ILL(c) = sum_p m_c(p) * D(p) / (sum_p m_c(p) * diag)

where D is the outer distance transform of the relevant error region (false
negatives for a positive click, false positives for a negative one). A
candidate position produced by an Adam step is accepted only if its IoU
strictly improves the incumbent in the chosen direction, its ILL stays
within a small margin of the initial click's ILL, and it is still a valid
click; otherwise the incumbent (ultimately the baseline click) is kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import maskops, render
from .clickgen import Click, Trajectory, baseline_click, is_valid_click
from .segmenters import CapabilityError, Segmenter, SegmenterRequest

__all__ = [
    "AttackConfig",
    "IterationRecord",
    "GradientError",
    "dice_loss",
    "interaction_location_loss",
    "interaction_location_gradient",
    "total_loss",
    "learning_rate",
    "loss_gradient",
    "optimize_click",
    "run_baseline_trajectory",
    "run_adversarial_trajectory",
    "iteration_deltas",
]

# re-exported: the Dice kernel lives with the other mask metrics
dice_loss = maskops.dice_loss

DIRECTIONS = ("min", "max")
KIND_BY_DIRECTION = {"min": "minimizing", "max": "maximizing"}


@dataclass
class AttackConfig:
    """Optimizer configuration. Defaults follow the evaluation protocol:
    10 clicks per trajectory, 10 Adam iterations per click, location loss
    weighted by 1000 with a 5% acceptance margin."""

    clicks: int = 10
    iters: int = 10
    ill_weight: float = 1000.0
    ill_margin: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_override: float | None = None
    threshold: float = 0.5
    connectivity: int = 8
    boundary_width: float | None = None
    # strict-improvement tolerance; breaks float noise, see acceptance rule
    iou_tolerance: float = 1e-9

    def __post_init__(self) -> None:
        if self.clicks < 1:
            raise ValueError("clicks must be >= 1")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.ill_weight < 0:
            raise ValueError("ill_weight must be non-negative")
        if not 0.0 <= self.ill_margin < 1.0:
            raise ValueError("ill_margin must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "clicks": self.clicks, "iters": self.iters,
            "ill_weight": self.ill_weight, "ill_margin": self.ill_margin,
            "adam_beta1": self.adam_beta1, "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps, "lr_override": self.lr_override,
            "threshold": self.threshold, "connectivity": self.connectivity,
            "boundary_width": self.boundary_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        known = {f for f in cls.__dataclass_fields__}  # noqa: C416
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class IterationRecord:
    """State after one Adam step on the active click."""

    iteration: int
    x: float
    y: float
    loss: float
    iou: float
    ill: float
    accepted: bool

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "x": self.x, "y": self.y,
                "loss": self.loss, "iou": self.iou, "ill": self.ill,
                "accepted": self.accepted}


class GradientError(RuntimeError):
    """Non-finite gradient; carries the offending click index."""

    def __init__(self, click_index: int, message: str = "non-finite gradient"):
        super().__init__(f"{message} (click {click_index})")
        self.click_index = click_index


def _relevant_distance_map(click: Click, regions: maskops.ErrorRegions) -> np.ndarray:
    region = regions.false_negative if click.positive else regions.false_positive
    if not region.any():
        raise ValueError(
            f"no {'false-negative' if click.positive else 'false-positive'} pixels: "
            "no valid placement exists for this click")
    return maskops.outer_distance_transform(region)


def interaction_location_loss(click: Click, regions, sharpness: float = render.DEFAULT_SHARPNESS) -> float:
    """Soft-disk-weighted mean distance of a click from its target region.

    ``regions`` is either an ErrorRegions instance or a precomputed outer
    distance transform of the relevant region. Zero exactly when the click's
    rendered footprint lies fully inside the region; strictly increasing as
    the disk moves away.
    """
    dist = regions if isinstance(regions, np.ndarray) else _relevant_distance_map(click, regions)
    h, w = dist.shape
    m = render.soft_disk(click.x, click.y, click.radius, h, w, sharpness)
    mass = float(np.sum(m))
    if mass <= 0.0:
        raise ValueError("click footprint does not intersect the image")
    return float(np.sum(m * dist)) / (mass * math.hypot(h, w))


def interaction_location_gradient(click: Click, dist: np.ndarray,
                                  sharpness: float = render.DEFAULT_SHARPNESS) -> tuple[float, float]:
    """d(ILL)/d(x, y) for a single click against a fixed distance map."""
    h, w = dist.shape
    maps = render.render_clicks([click], h, w, sharpness)
    m = maps.positive if click.positive else maps.negative
    mass = float(np.sum(m))
    if mass <= 0.0:
        raise ValueError("click footprint does not intersect the image")
    diag = math.hypot(h, w)
    mean_dist = float(np.sum(m * dist)) / mass
    upstream = (dist - mean_dist) / (mass * diag)
    grads = render.render_gradient(maps,
                                   upstream if click.positive else None,
                                   None if click.positive else upstream)
    return float(grads[0, 0]), float(grads[0, 1])


def total_loss(pred, gt, click: Click, regions, direction: str, cfg: AttackConfig,
               sharpness: float = render.DEFAULT_SHARPNESS) -> float:
    """s * dice + ill_weight * ILL; the optimizer minimizes this in both modes."""
    s = _direction_sign(direction)
    return (s * maskops.dice_loss(pred, gt)
            + cfg.ill_weight * interaction_location_loss(click, regions, sharpness))


def learning_rate(height: int, width: int, lr_override: float | None = None) -> float:
    """Step size scaled linearly with image size: 5*sqrt(H^2+W^2)/(400*sqrt(2))."""
    if lr_override is not None:
        return lr_override
    return 5.0 * math.hypot(height, width) / (400.0 * math.sqrt(2.0))


def _direction_sign(direction: str) -> float:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    return 1.0 if direction == "max" else -1.0


def loss_gradient(segmenter: Segmenter, req: SegmenterRequest, gt, dist: np.ndarray,
                  direction: str, cfg: AttackConfig, active: int = -1,
                  pred: np.ndarray | None = None) -> tuple[tuple[float, float], float]:
    """Gradient of the total loss w.r.t. the active click's coordinates.

    Returns ``((gx, gy), loss_value)``. The Dice term comes from the
    segmenter (through differentiable rendering for disk-map models, from the
    model's own coordinate gradient for raw-coordinate ones); the location
    term is computed here. Fails before any model work if the segmenter does
    not support gradients.
    """
    if not segmenter.capabilities.supports_gradients:
        raise CapabilityError("segmenter does not support gradients")
    if active < 0:
        active = len(req.clicks) + active
    click = req.clicks[active]
    gx, gy = segmenter.dice_coordinate_gradient(req, gt, direction, active)
    igx, igy = interaction_location_gradient(click, dist, segmenter.sharpness)
    gx += cfg.ill_weight * igx
    gy += cfg.ill_weight * igy
    if not (math.isfinite(gx) and math.isfinite(gy)):
        raise GradientError(active)
    if pred is None:
        pred = segmenter.predict(req)
    loss = total_loss(pred, gt, click, dist, direction, cfg, segmenter.sharpness)
    return (gx, gy), loss


def optimize_click(segmenter: Segmenter, image, gt, prefix: list[Click],
                   prev_mask: np.ndarray | None, direction: str,
                   cfg: AttackConfig) -> tuple[Click, np.ndarray, list[IterationRecord]] | None:
    """Optimize the next click of a trajectory; earlier clicks stay frozen.

    Update scheme per click: initialize at the baseline-strategy click and
    record it as the incumbent; run ``cfg.iters`` Adam steps on (x, y)
    descending the total loss; after each step accept the candidate only if
    its IoU strictly improves the incumbent in the chosen direction, its ILL
    does not exceed the initial click's ILL plus a small margin, and it is
    still a valid click. Returns the best accepted click, its predicted
    mask, and all iteration records; the baseline click is the fallback when
    every candidate is rejected. Returns None when there are no error pixels
    left (converged).

    The optimizer state moves continuously and gradients are taken at the
    continuous position, but each candidate is evaluated (and ultimately
    reported) at its nearest integer pixel: models consume pixel-positioned
    clicks, and this keeps returned quality inside the brute-force grid's
    envelope.
    """
    gt = maskops.as_bool_mask(gt)
    h, w = gt.shape
    state = prev_mask if prev_mask is not None else np.zeros((h, w), dtype=np.float64)

    init = baseline_click(state, gt, cfg.threshold, cfg.connectivity, radius=segmenter.radius)
    if init is None:
        return None
    regions = maskops.error_regions(state, gt, cfg.threshold, cfg.connectivity)
    dist = _relevant_distance_map(init, regions)

    sign = _direction_sign(direction)
    lr = learning_rate(h, w, cfg.lr_override)

    def evaluate(click: Click) -> tuple[np.ndarray, float, float]:
        req = SegmenterRequest(image=image, clicks=prefix + [click], prev_mask=prev_mask)
        pred = segmenter.predict(req)
        quality = maskops.iou(pred >= cfg.threshold, gt)
        ill = interaction_location_loss(click, dist, segmenter.sharpness)
        return pred, quality, ill

    pred0, iou0, ill0 = evaluate(init)
    # relative margin on the initial click's location loss, plus a sliver of
    # absolute slack worth "margin pixels of mean distance": with a deep
    # interior initial click the location loss is essentially zero and a
    # purely relative cap would freeze the optimizer entirely
    ill_cap = (1.0 + cfg.ill_margin) * ill0 + cfg.ill_margin / math.hypot(h, w)
    best_click, best_pred, best_iou = init, pred0, iou0

    x, y = init.x, init.y
    mx = my = vx = vy = 0.0
    cur_pred = pred0
    records: list[IterationRecord] = []
    for t in range(1, cfg.iters + 1):
        current = init.moved_to(x, y)
        req = SegmenterRequest(image=image, clicks=prefix + [current], prev_mask=prev_mask)
        (gx, gy), _ = loss_gradient(segmenter, req, gt, dist, direction, cfg,
                                    active=len(req.clicks) - 1, pred=cur_pred)

        mx = cfg.adam_beta1 * mx + (1.0 - cfg.adam_beta1) * gx
        my = cfg.adam_beta1 * my + (1.0 - cfg.adam_beta1) * gy
        vx = cfg.adam_beta2 * vx + (1.0 - cfg.adam_beta2) * gx * gx
        vy = cfg.adam_beta2 * vy + (1.0 - cfg.adam_beta2) * gy * gy
        mx_hat = mx / (1.0 - cfg.adam_beta1 ** t)
        my_hat = my / (1.0 - cfg.adam_beta1 ** t)
        vx_hat = vx / (1.0 - cfg.adam_beta2 ** t)
        vy_hat = vy / (1.0 - cfg.adam_beta2 ** t)
        x -= lr * mx_hat / (math.sqrt(vx_hat) + cfg.adam_eps)
        y -= lr * my_hat / (math.sqrt(vy_hat) + cfg.adam_eps)
        x = min(max(x, 0.0), float(w - 1))
        y = min(max(y, 0.0), float(h - 1))

        col, row = init.moved_to(x, y).pixel()
        candidate = init.moved_to(float(col), float(row))
        cand_pred, cand_iou, cand_ill = evaluate(candidate)
        cand_loss = sign * maskops.dice_loss(cand_pred, gt) + cfg.ill_weight * cand_ill
        if direction == "min":
            improved = cand_iou < best_iou - cfg.iou_tolerance
        else:
            improved = cand_iou > best_iou + cfg.iou_tolerance
        accepted = (improved and cand_ill <= ill_cap
                    and is_valid_click(candidate, state, gt, cfg.threshold))
        records.append(IterationRecord(iteration=t, x=candidate.x, y=candidate.y,
                                       loss=cand_loss, iou=cand_iou, ill=cand_ill,
                                       accepted=accepted))
        if accepted:
            best_click, best_pred, best_iou = candidate, cand_pred, cand_iou
        cur_pred = cand_pred
    return best_click, best_pred, records


def _pad_curves(traj: Trajectory, k: int) -> None:
    if traj.iou_curve:
        while len(traj.iou_curve) < k:
            traj.iou_curve.append(traj.iou_curve[-1])
            traj.biou_curve.append(traj.biou_curve[-1])


def run_baseline_trajectory(segmenter: Segmenter, image, gt, cfg: AttackConfig | None = None) -> Trajectory:
    """Run the baseline clicking strategy for ``cfg.clicks`` interactions.

    Stops early only when no error pixels remain, padding the metric curves
    with their final value up to the click budget.
    """
    cfg = cfg or AttackConfig()
    gt = maskops.as_bool_mask(gt)
    if not gt.any():
        raise ValueError("ground truth mask is empty; no first click exists")
    h, w = gt.shape
    bw = cfg.boundary_width if cfg.boundary_width is not None else maskops.default_boundary_width(h, w)
    traj = Trajectory(kind="baseline")
    state: np.ndarray | None = None
    for k in range(cfg.clicks):
        pred_prev = state if state is not None else np.zeros((h, w), dtype=np.float64)
        click = baseline_click(pred_prev, gt, cfg.threshold, cfg.connectivity,
                               radius=segmenter.radius)
        if click is None:
            break
        req = SegmenterRequest(image=image, clicks=traj.clicks + [click], prev_mask=state)
        try:
            pred = segmenter.predict(req)
        except Exception as exc:
            raise RuntimeError(f"segmenter failed at click {k + 1}: {exc}") from exc
        traj.clicks.append(click)
        traj.diagnostics.append([])
        binary = pred >= cfg.threshold
        traj.iou_curve.append(maskops.iou(binary, gt))
        traj.biou_curve.append(maskops.boundary_iou(binary, gt, bw))
        state = pred
    _pad_curves(traj, cfg.clicks)
    return traj


def run_adversarial_trajectory(segmenter: Segmenter, image, gt, direction: str,
                               cfg: AttackConfig | None = None) -> Trajectory:
    """Build a minimizing or maximizing trajectory click by click.

    Click i is optimized with clicks 1..i-1 frozen; each round re-derives the
    error regions from the best mask saved by the previous round.
    """
    cfg = cfg or AttackConfig()
    sign_check = _direction_sign(direction)  # validates direction
    del sign_check
    gt = maskops.as_bool_mask(gt)
    if not gt.any():
        raise ValueError("ground truth mask is empty; no first click exists")
    h, w = gt.shape
    bw = cfg.boundary_width if cfg.boundary_width is not None else maskops.default_boundary_width(h, w)
    traj = Trajectory(kind=KIND_BY_DIRECTION[direction])
    state: np.ndarray | None = None
    for k in range(cfg.clicks):
        try:
            result = optimize_click(segmenter, image, gt, traj.clicks, state, direction, cfg)
        except (GradientError, CapabilityError):
            raise
        except Exception as exc:
            raise RuntimeError(f"optimization failed at round {k + 1}: {exc}") from exc
        if result is None:
            break
        click, pred, records = result
        traj.clicks.append(click)
        traj.diagnostics.append(records)
        binary = pred >= cfg.threshold
        traj.iou_curve.append(maskops.iou(binary, gt))
        traj.biou_curve.append(maskops.boundary_iou(binary, gt, bw))
        state = pred
    _pad_curves(traj, cfg.clicks)
    return traj


def iteration_deltas(records: list[IterationRecord], height: int, width: int) -> list[float]:
    """Distances between consecutive iteration positions, normalized by the
    maximum image dimension."""
    if len(records) < 2:
        raise ValueError("need at least two iteration records")
    norm = float(max(height, width))
    return [
        math.hypot(b.x - a.x, b.y - a.y) / norm
        for a, b in zip(records, records[1:])
    ]
