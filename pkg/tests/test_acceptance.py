"""Acceptance gate: one test per release criterion, at fixed tolerances.

Runs entirely on the seeded synthetic suite with the in-process reference
segmenters; the bridge conformance check is exercised separately (see
test_bridge_conformance.py) and is skipped here when the bridge server has
not been built. Run with ``pytest tests/test_acceptance.py -v -s`` to see
one pass line per criterion.
"""

import json
import math
import shutil
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest

from clickstorm import attack, bruteforce, maskops, render, report, synthetic
from clickstorm.attack import AttackConfig
from clickstorm.clickgen import Click
from clickstorm.config import RunConfig
from clickstorm.runner import evaluate
from clickstorm.segmenters import (
    BlobSegmenter,
    RuggedSegmenter,
    SegmenterProfile,
    SegmenterRequest,
)

from .conftest import random_mask
from .oracles import (
    brute_boundary_iou,
    brute_ill,
    brute_inner_dt,
    brute_outer_dt,
    union_find_components,
)

SUITE_SEED = 0
SUITE_SIZE = 48
SUITE_COUNT = 50
GRID_COUNT = 20
RADIUS = 3.0


def suite_image(index, size=SUITE_SIZE):
    return synthetic.make_sample(SUITE_SEED, index, size)


def blob():
    return BlobSegmenter(radius=RADIUS)


def rugged():
    return RuggedSegmenter(BlobSegmenter(radius=RADIUS), seed=0)


def announce(name, detail=""):
    print(f"\nACCEPTANCE {name}: PASS {detail}".rstrip())


def test_first_click_ordering():
    """IoU_min(1) <= IoU_base(1) <= IoU_max(1) on 100% of the suite."""
    started = time.time()
    cfg = AttackConfig(clicks=1)
    checked = 0
    for i in range(SUITE_COUNT):
        image, gt = suite_image(i)
        for segmenter in (blob(), rugged()):
            base = attack.run_baseline_trajectory(segmenter, image, gt, cfg)
            lo = attack.run_adversarial_trajectory(segmenter, image, gt, "min", cfg)
            hi = attack.run_adversarial_trajectory(segmenter, image, gt, "max", cfg)
            assert lo.iou_curve[0] <= base.iou_curve[0] <= hi.iou_curve[0], \
                f"ordering violated on image {i}"
            checked += 1
    elapsed = time.time() - started
    assert elapsed < 120.0, f"ordering run took {elapsed:.1f}s, budget is 2 min"
    announce("first-click-ordering", f"({checked} segmenter/image pairs, {elapsed:.1f}s)")


def test_grid_oracle_bounds():
    """Stride-1 valid-cell extrema bound the optimizer's click-1 IoU, 100%."""
    started = time.time()
    cfg = AttackConfig(clicks=1)
    for i in range(GRID_COUNT):
        image, gt = suite_image(i, size=32)
        segmenter = blob()
        grid = bruteforce.grid_search(segmenter, image, gt, positive=True, stride=1)
        lo = attack.run_adversarial_trajectory(segmenter, image, gt, "min", cfg)
        hi = attack.run_adversarial_trajectory(segmenter, image, gt, "max", cfg)
        assert grid.iou_min <= lo.iou_curve[0], f"min below grid on image {i}"
        assert hi.iou_curve[0] <= grid.iou_max, f"max above grid on image {i}"
    elapsed = time.time() - started
    assert elapsed < 300.0, f"grid run took {elapsed:.1f}s, budget is 5 min"
    announce("grid-oracle-bounds", f"({GRID_COUNT} images, {elapsed:.1f}s)")


def test_trajectory_convergence():
    """The min/max quality gap shrinks from click 1 to click 10."""
    cfg = AttackConfig()
    gap1, gap10, per_image_ok = [], [], 0
    for i in range(SUITE_COUNT):
        image, gt = suite_image(i)
        segmenter = rugged()
        lo = attack.run_adversarial_trajectory(segmenter, image, gt, "min", cfg)
        hi = attack.run_adversarial_trajectory(segmenter, image, gt, "max", cfg)
        g1 = abs(hi.iou_curve[0] - lo.iou_curve[0])
        g10 = abs(hi.iou_curve[-1] - lo.iou_curve[-1])
        gap1.append(g1)
        gap10.append(g10)
        per_image_ok += g10 < g1
    assert np.mean(gap10) < np.mean(gap1), \
        f"mean gap grew: {np.mean(gap1):.4f} -> {np.mean(gap10):.4f}"
    assert per_image_ok >= 0.8 * SUITE_COUNT, \
        f"per-image convergence only {per_image_ok}/{SUITE_COUNT}"
    announce("trajectory-convergence",
             f"(mean gap {np.mean(gap1):.3f}->{np.mean(gap10):.3f}, "
             f"{per_image_ok}/{SUITE_COUNT} images)")


def test_gradient_fidelity_rendered_disks():
    """Analytic disk gradients match central finite differences, <1e-3 rel."""
    rng = np.random.default_rng(42)
    h = w = 24
    step = 1e-3
    checks = 0
    for _ in range(200):
        x = float(rng.uniform(6, 18))
        y = float(rng.uniform(6, 18))
        radius = float(rng.uniform(2.0, 5.0))
        sharpness = float(rng.uniform(1.0, 3.0))
        angle = float(rng.uniform(0, 2 * np.pi))
        rad = float(rng.uniform(0, radius + 4.0 / sharpness))
        px = int(np.clip(round(x + rad * np.cos(angle)), 0, w - 1))
        py = int(np.clip(round(y + rad * np.sin(angle)), 0, h - 1))

        maps = render.render_clicks([Click(x, y, True, radius)], h, w, sharpness,
                                    margin=np.inf)
        upstream = np.zeros((h, w))
        upstream[py, px] = 1.0
        gx, gy = render.render_gradient(maps, upstream)[0]

        def value(cx, cy):
            disk = render.soft_disk(cx, cy, radius, h, w, sharpness, margin=np.inf)
            return disk[py, px]

        fdx = (value(x + step, y) - value(x - step, y)) / (2 * step)
        fdy = (value(x, y + step) - value(x, y - step)) / (2 * step)
        for got, want in ((gx, fdx), (gy, fdy)):
            assert abs(got - want) <= 1e-3 * max(abs(want), 1e-7), \
                f"disk gradient off: {got} vs {want}"
            checks += 1
    assert checks >= 400
    announce("gradient-fidelity-render", f"({checks} directional checks)")


def _nudge_from_box_edges(x, radius, sharpness, limit):
    """Keep x away from footprint-box transitions so central differences stay
    on a smooth branch of the truncated location loss."""
    extent = radius + render.FOOTPRINT_MARGIN / sharpness
    for edge in (x - extent, x + extent):
        frac = edge - math.floor(edge)
        if frac < 0.05 or frac > 0.95:
            x = min(max(x + 0.13, 1.0), limit - 1.0)
    return x


def test_gradient_fidelity_full_chain():
    """Total-loss gradients through the blob segmenter match FD, <1e-2 rel."""
    rng = np.random.default_rng(7)
    cfg = AttackConfig()
    step = 1e-4
    configs = 0
    while configs < 200:
        image, gt = suite_image(int(rng.integers(0, 16)), size=24)
        radius = float(rng.uniform(2.0, 4.0))
        segmenter = BlobSegmenter(radius=radius)
        state = np.zeros((24, 24))
        regions = maskops.error_regions(state, gt)
        dist = maskops.outer_distance_transform(regions.false_negative)
        ys, xs = np.nonzero(gt)
        k = int(rng.integers(0, len(xs)))
        x = _nudge_from_box_edges(float(xs[k]) + float(rng.uniform(-0.3, 0.3)),
                                  radius, segmenter.sharpness, 24)
        y = _nudge_from_box_edges(float(ys[k]) + float(rng.uniform(-0.3, 0.3)),
                                  radius, segmenter.sharpness, 24)
        direction = "min" if rng.integers(2) else "max"
        click = Click(x, y, True, radius)
        req = SegmenterRequest(image=image, clicks=[click])
        (gx, gy), _ = attack.loss_gradient(segmenter, req, gt, dist, direction, cfg)

        def total(cx, cy):
            c = Click(cx, cy, True, radius)
            pred = segmenter.predict(SegmenterRequest(image=image, clicks=[c]))
            return attack.total_loss(pred, gt, c, dist, direction, cfg)

        fdx = (total(x + step, y) - total(x - step, y)) / (2 * step)
        fdy = (total(x, y + step) - total(x, y - step)) / (2 * step)
        for got, want in ((gx, fdx), (gy, fdy)):
            assert abs(got - want) <= 1e-2 * max(abs(want), 1e-6), \
                f"full-chain gradient off at ({x:.2f},{y:.2f}) {direction}: {got} vs {want}"
        configs += 1
    announce("gradient-fidelity-full-chain", f"({configs} configurations)")


def test_oracle_equivalence():
    """DT and components match brute force exactly; BIoU and ILL within 1e-9,
    on 100 random masks up to 32x32."""
    rng = np.random.default_rng(99)
    for trial in range(100):
        h = int(rng.integers(4, 33))
        w = int(rng.integers(4, 33))
        mask = random_mask(rng, h, w, p=float(rng.uniform(0.15, 0.7)))
        if not mask.any():
            mask[h // 2, w // 2] = True

        assert np.array_equal(maskops.inner_distance_transform(mask),
                              brute_inner_dt(mask)), f"inner DT trial {trial}"
        assert np.array_equal(maskops.outer_distance_transform(mask),
                              brute_outer_dt(mask)), f"outer DT trial {trial}"

        conn = 4 if rng.integers(2) else 8
        _, areas = maskops.connected_components(mask, conn)
        _, ref_count = union_find_components(mask, conn)
        assert len(areas) == ref_count, f"components trial {trial}"

        other = random_mask(rng, h, w, p=0.5)
        d = float(rng.uniform(1.0, 6.0))
        assert maskops.boundary_iou(mask, other, d) == pytest.approx(
            brute_boundary_iou(mask, other, d), abs=1e-9), f"BIoU trial {trial}"

        dist = maskops.outer_distance_transform(mask)
        cx = float(rng.uniform(0, w - 1))
        cy = float(rng.uniform(0, h - 1))
        radius = float(rng.uniform(1.5, 5.0))
        sharpness = float(rng.uniform(1.0, 3.0))
        got = attack.interaction_location_loss(Click(cx, cy, True, radius), dist,
                                               sharpness)
        want = brute_ill(cx, cy, radius, dist, sharpness)
        assert got == pytest.approx(want, abs=1e-9), f"ILL trial {trial}"
    announce("oracle-equivalence", "(100 masks)")


def test_metric_arithmetic():
    """Published-table subtractions, constant-curve AuC, and the LR formula."""
    assert report.robustness_d(93.56, 96.28) == pytest.approx(2.72, abs=1e-9)
    assert report.robustness_d(94.57, 96.13) == pytest.approx(1.56, abs=1e-9)
    for c in (0.0, 0.125, 0.8, 1.0):
        assert abs(report.auc_at_10([c] * 10) - c) < 1e-12
    assert abs(attack.learning_rate(400, 400) - 5.0) < 1e-12
    assert abs(attack.learning_rate(800, 800) - 10.0) < 1e-12
    announce("metric-arithmetic")


def test_determinism(tmp_path):
    """Identical config and seed produce byte-identical report CSVs."""
    manifest = synthetic.generate_suite(tmp_path / "suite", count=3, size=24, seed=3)
    profile = SegmenterProfile(kind="rugged", radius=RADIUS)
    outputs = []
    for run in ("r1", "r2"):
        cfg = RunConfig(dataset=str(manifest), segmenter=profile,
                        attack=AttackConfig(clicks=3, iters=3),
                        out=str(tmp_path / run), seed=5)
        result = evaluate(cfg)
        assert result.status == "ok"
        outputs.append((Path(result.out_dir) / "report.csv").read_bytes())
    assert outputs[0] == outputs[1]
    announce("determinism", f"({len(outputs[0])} identical bytes)")


def test_degenerate_rejection_fallback():
    """With the location weight forcing rejection of every candidate, the
    adversarial trajectories collapse to the baseline, bit for bit."""
    image, gt = suite_image(7, size=24)
    segmenter = blob()
    base = attack.run_baseline_trajectory(segmenter, image, gt, AttackConfig())
    reject_all = AttackConfig(ill_weight=1e300)
    for direction in ("min", "max"):
        adv = attack.run_adversarial_trajectory(segmenter, image, gt, direction,
                                                reject_all)
        assert all(not r.accepted for recs in adv.diagnostics for r in recs), \
            "premise violated: some candidate was accepted"
        assert adv.iou_curve == base.iou_curve
        assert adv.biou_curve == base.biou_curve
        assert [c.to_dict() for c in adv.clicks] == [c.to_dict() for c in base.clicks]
    announce("degenerate-rejection-fallback")


BRIDGE_SERVER = Path(__file__).resolve().parents[1] / "bridge" / "dist" / "server.js"


@pytest.mark.skipif(shutil.which("node") is None or not BRIDGE_SERVER.exists(),
                    reason="bridge server not built (secondary component)")
def test_bridge_conformance_secondary():
    """[SECONDARY] round-trip, gradient, and error-frame checks against the
    stub bridge server; details in test_bridge_conformance.py."""
    result = subprocess.run(
        ["python3", "-m", "pytest", str(Path(__file__).parent / "test_bridge_conformance.py"),
         "-q", "--no-header"], capture_output=True, text=True)
    assert result.returncode == 0, result.stdout + result.stderr
    announce("bridge-conformance", "(secondary)")
