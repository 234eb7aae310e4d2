"""Run orchestration: evaluation sweeps, grid sweeps, spread tables.

Evaluation work is split into (image, trajectory-kind) tasks processed by a
thread pool; each worker owns its segmenter handle (bridged models get one
connection per worker). Assembly sorts by image id, so outputs do not depend
on completion order, and a run writes into a temporary directory that is
moved into place only on success.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, bruteforce, maskops, report
from .attack import run_adversarial_trajectory, run_baseline_trajectory
from .clickgen import baseline_click, load_external_clicks
from .config import RunConfig
from .datasets import DatasetManifest, EntryError, load_manifest
from .segmenters import Segmenter, SegmenterRequest
from .synthetic import generate_suite

__all__ = ["EvaluateResult", "evaluate", "bruteforce_eval", "spread_eval",
           "correlate_eval", "generate_suite"]


class _SegmenterPool:
    """One segmenter handle per worker thread; oracle rebuilds per image."""

    def __init__(self, cfg: RunConfig):
        self._cfg = cfg
        self._local = threading.local()
        self._created: list[Segmenter] = []
        self._lock = threading.Lock()

    def get(self, gt) -> Segmenter:
        if self._cfg.segmenter.kind == "oracle":
            return self._cfg.segmenter.build(gt=gt, seed=self._cfg.seed)
        seg = getattr(self._local, "segmenter", None)
        if seg is None:
            seg = self._cfg.segmenter.build(seed=self._cfg.seed)
            self._local.segmenter = seg
            with self._lock:
                self._created.append(seg)
        return seg

    def close(self) -> None:
        for seg in self._created:
            seg.close()


@dataclass
class EvaluateResult:
    status: str  # ok | partial
    out_dir: str
    report: report.RobustnessReport
    failures: list[dict] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 0 if self.status == "ok" else 1


def _run_kind(segmenter: Segmenter, image, gt, kind: str, cfg: RunConfig):
    if kind == "baseline":
        return run_baseline_trajectory(segmenter, image, gt, cfg.attack)
    direction = "min" if kind == "minimizing" else "max"
    return run_adversarial_trajectory(segmenter, image, gt, direction, cfg.attack)


def _prepare_out_dir(out: str) -> tuple[Path, Path]:
    """Returns (final_dir, temp_dir); the caller renames on success."""
    final = Path(out)
    if final.exists():
        if final.is_dir() and not any(final.iterdir()):
            final.rmdir()
        else:
            raise FileExistsError(f"output path {final} already exists; refusing to clobber")
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=final.parent, prefix=f".{final.name}.tmp-"))
    return final, tmp


def evaluate(cfg: RunConfig) -> EvaluateResult:
    """Run the configured trajectory kinds over a dataset and write reports."""
    manifest = load_manifest(cfg.dataset)
    if not manifest.entries:
        raise ValueError(f"dataset {manifest.name!r} has no entries")
    started = time.time()
    final_dir, tmp_dir = _prepare_out_dir(cfg.out)

    entries = sorted(manifest.entries, key=lambda e: e.image_id)
    pool = _SegmenterPool(cfg)
    results: dict[tuple[str, str], object] = {}
    errors: dict[str, str] = {}
    lock = threading.Lock()

    def work(entry, kind):
        try:
            image, gt = entry.load()
            segmenter = pool.get(gt)
            traj = _run_kind(segmenter, image, gt, kind, cfg)
            with lock:
                results[(entry.image_id, kind)] = traj
        except Exception as exc:  # per-image failure; keep the run alive
            with lock:
                errors.setdefault(entry.image_id, f"{kind}: {exc}")

    try:
        if cfg.workers == 1:
            for entry in entries:
                for kind in cfg.kinds:
                    work(entry, kind)
        else:
            with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
                futures = [executor.submit(work, entry, kind)
                           for entry in entries for kind in cfg.kinds]
                for f in futures:
                    f.result()
    finally:
        pool.close()

    per_image: dict[str, dict] = {}
    traj_dir = tmp_dir / "trajectories"
    traj_dir.mkdir()
    for entry in entries:
        if entry.image_id in errors:
            continue
        kinds = {}
        scores = {}
        for kind in cfg.kinds:
            traj = results[(entry.image_id, kind)]
            kinds[kind] = traj.to_dict()
            scores[kind] = {"iou": report.curve_auc(traj.iou_curve),
                            "biou": report.curve_auc(traj.biou_curve)}
        per_image[entry.image_id] = scores
        with open(traj_dir / f"{entry.image_id}.json", "w") as fh:
            json.dump({"image_id": entry.image_id, "kinds": kinds}, fh, sort_keys=True)
            fh.write("\n")

    if not per_image:
        raise RuntimeError(f"every image failed; first error: {next(iter(errors.values()), '?')}")

    rep = report.aggregate(per_image, dataset=manifest.name, model=cfg.label)
    rep.save_csv(tmp_dir / "report.csv")
    rep.save_json(tmp_dir / "report.json")

    failures = [{"image_id": i, "error": errors[i]} for i in sorted(errors)]
    metadata = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": {"clickstorm": __version__, "numpy": np.__version__},
        "wall_time_s": time.time() - started,
        "failures": failures,
    }
    with open(tmp_dir / "metadata.json", "w") as fh:
        json.dump(metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")

    os.replace(tmp_dir, final_dir)
    status = "ok" if not failures else "partial"
    return EvaluateResult(status=status, out_dir=str(final_dir), report=rep, failures=failures)


def bruteforce_eval(cfg: RunConfig, image_id: str, stride: int | None = None,
                    positive: bool = True) -> dict:
    """First-click grid sweep for one image; writes heatmaps + sidecars."""
    manifest = load_manifest(cfg.dataset)
    try:
        entry = manifest.by_id(image_id)
    except KeyError:
        raise ValueError(f"image id {image_id!r} not in dataset {manifest.name!r}") from None
    image, gt = entry.load()
    segmenter = cfg.segmenter.build(gt=gt, seed=cfg.seed)
    try:
        grid = bruteforce.grid_search(segmenter, image, gt, positive=positive, stride=stride,
                                      threshold=cfg.attack.threshold,
                                      connectivity=cfg.attack.connectivity,
                                      boundary_width=cfg.attack.boundary_width)
    finally:
        segmenter.close()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for channel in ("iou", "biou"):
        png = out / f"{image_id}_{channel}.png"
        bruteforce.write_heatmap(grid, channel, png)
        paths[channel] = str(png)
        paths[f"{channel}_sidecar"] = str(png) + ".json"
    return {
        "image_id": image_id,
        "stride": grid.stride,
        "iou_min": grid.iou_min, "iou_max": grid.iou_max,
        "iou_min_position": grid.iou_min_position, "iou_max_position": grid.iou_max_position,
        "biou_min": grid.biou_min, "biou_max": grid.biou_max,
        "failures": len(grid.failures),
        "paths": paths,
    }


def spread_eval(cfg: RunConfig, clicks_csv: str) -> dict:
    """Score externally collected clicks and their per-image quality spread.

    Every click is evaluated as an independent first interaction; the
    baseline-strategy click's scores are reported alongside for comparison.
    """
    manifest = load_manifest(cfg.dataset)
    groups = load_external_clicks(clicks_csv, radius=cfg.segmenter.radius)
    known = {e.image_id for e in manifest.entries}
    unknown = sorted({gid for gid, _ in groups} - known)
    if unknown:
        raise ValueError(f"image ids not in dataset {manifest.name!r}: {unknown}")

    rows = []
    click_rows = []
    for image_id, clicks in groups:
        entry = manifest.by_id(image_id)
        image, gt = entry.load()
        segmenter = cfg.segmenter.build(gt=gt, seed=cfg.seed)
        try:
            h, w = gt.shape
            bw = (cfg.attack.boundary_width if cfg.attack.boundary_width is not None
                  else maskops.default_boundary_width(h, w))
            ious, bious = [], []
            for idx, click in enumerate(clicks):
                pred = segmenter.predict(SegmenterRequest(image=image, clicks=[click]))
                binary = pred >= cfg.attack.threshold
                i = maskops.iou(binary, gt)
                b = maskops.boundary_iou(binary, gt, bw)
                ious.append(i)
                bious.append(b)
                click_rows.append({"image_id": image_id, "click_index": idx,
                                   "x": click.x, "y": click.y, "polarity": click.polarity,
                                   "iou": i, "biou": b})
            base = baseline_click(np.zeros((h, w)), gt, cfg.attack.threshold,
                                  cfg.attack.connectivity, radius=cfg.segmenter.radius)
            base_iou = base_biou = None
            if base is not None:
                pred = segmenter.predict(SegmenterRequest(image=image, clicks=[base]))
                binary = pred >= cfg.attack.threshold
                base_iou = maskops.iou(binary, gt)
                base_biou = maskops.boundary_iou(binary, gt, bw)
            rows.append({
                "image_id": image_id, "clicks": len(clicks),
                "iou_min": min(ious), "iou_max": max(ious),
                "iou_spread": bruteforce.spread(ious),
                "biou_min": min(bious), "biou_max": max(bious),
                "biou_spread": bruteforce.spread(bious),
                "baseline_iou": base_iou, "baseline_biou": base_biou,
            })
        finally:
            segmenter.close()

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    table_path = out / "spread.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    clicks_path = out / "spread_clicks.csv"
    with open(clicks_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(click_rows[0].keys()))
        writer.writeheader()
        writer.writerows(click_rows)
    return {"table": rows, "paths": {"spread": str(table_path), "clicks": str(clicks_path)}}


def correlate_eval(report_paths: list[str], axis: str, dataset: str | None = None,
                   metric: str | None = None, out_path: str | None = None) -> dict:
    """Cross-metric or cross-dataset Spearman matrix over saved reports."""
    if len(report_paths) < 2:
        raise ValueError("need at least two model reports")
    tables: dict[str, dict[str, dict[str, float]]] = {}
    for path in report_paths:
        rep = report.RobustnessReport.load_json(path)
        models = tables.setdefault(rep.dataset, {})
        if rep.model in models:
            raise ValueError(f"duplicate report for {rep.dataset}/{rep.model}")
        models[rep.model] = rep.flat_scores()
    labels, matrix = report.correlation_matrix(tables, axis, dataset=dataset, metric=metric)
    if out_path:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([""] + labels)
            for label, row in zip(labels, matrix):
                writer.writerow([label] + [repr(float(v)) for v in row])
    return {"labels": labels, "matrix": [[float(v) for v in row] for row in matrix],
            "path": out_path}
