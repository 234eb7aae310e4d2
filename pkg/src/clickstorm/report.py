"""Robustness metric aggregation and rank-correlation analysis.

Per-trajectory quality curves reduce to a normalized area under the curve
(the arithmetic mean of the per-click values). Per dataset, the report
carries the mean Base/Min/Max scores times 100 and the robustness gap
D = Max - Min computed from the aggregated means; numbers are kept at full
precision and rounded only for display, so a displayed subtraction of
rounded values may differ from the displayed D by one unit in the last
place.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "curve_auc",
    "auc_at_10",
    "robustness_d",
    "RobustnessReport",
    "aggregate",
    "spearman",
    "correlation_matrix",
]

TRAJECTORY_KINDS = ("baseline", "minimizing", "maximizing")
_KIND_COLUMN = {"baseline": "base", "minimizing": "min", "maximizing": "max"}
METRICS = ("iou", "biou")


def curve_auc(curve) -> float:
    """Normalized area under a per-click metric curve (mean of the values)."""
    values = np.asarray(list(curve), dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty metric curve")
    return float(np.mean(values))


def auc_at_10(curve) -> float:
    """AuC of a 10-click curve; rejects any other length."""
    values = list(curve)
    if len(values) != 10:
        raise ValueError(f"expected a 10-click curve, got length {len(values)}")
    return curve_auc(values)


def robustness_d(auc_min: float, auc_max: float) -> float:
    """Quality gap between the maximizing and minimizing trajectories."""
    return auc_max - auc_min


@dataclass
class RobustnessReport:
    """Per-image and dataset-aggregated AuC scores for one (dataset, model).

    ``per_image[id][kind][metric]`` holds raw AuC values in [0, 1];
    ``aggregate_scores[metric][column]`` holds dataset means scaled to
    percent, with column ``d`` derived from the aggregated min/max.
    """

    dataset: str
    model: str
    per_image: dict = field(default_factory=dict)
    aggregate_scores: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "model": self.model,
                "per_image": self.per_image, "aggregate": self.aggregate_scores}

    @classmethod
    def from_dict(cls, d: dict) -> "RobustnessReport":
        return cls(dataset=d["dataset"], model=d["model"],
                   per_image=d.get("per_image", {}), aggregate_scores=d.get("aggregate", {}))

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "RobustnessReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def csv_rows(self) -> list[tuple[str, str, str, str, str]]:
        rows = []
        for metric in METRICS:
            columns = self.aggregate_scores.get(metric, {})
            for column in ("base", "min", "max", "d"):
                if column in columns:
                    rows.append((self.dataset, self.model, metric, column,
                                 repr(columns[column])))
        return rows

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["dataset", "model", "metric", "kind", "value"])
            writer.writerows(self.csv_rows())

    def flat_scores(self) -> dict[str, float]:
        """Aggregate scores keyed like ``iou-min`` for correlation tables."""
        out = {}
        for metric, columns in self.aggregate_scores.items():
            for column, value in columns.items():
                out[f"{metric}-{column}"] = value
        return out


def aggregate(per_image: dict, dataset: str, model: str) -> RobustnessReport:
    """Aggregate per-image AuC values into a dataset report.

    ``per_image`` maps image id -> kind -> {"iou": auc, "biou": auc}.
    Means are unweighted over images and scaled to percent; each image also
    gets its own min/max gap in the detailed table when both adversarial
    trajectories are present.
    """
    if not per_image:
        raise ValueError("nothing to aggregate")
    report = RobustnessReport(dataset=dataset, model=model)
    kinds_present = sorted({k for scores in per_image.values() for k in scores})
    for image_id in sorted(per_image):
        entry = {k: dict(v) for k, v in per_image[image_id].items()}
        if "minimizing" in entry and "maximizing" in entry:
            entry["d"] = {m: robustness_d(entry["minimizing"][m], entry["maximizing"][m])
                          for m in METRICS if m in entry["minimizing"]}
        report.per_image[image_id] = entry

    for metric in METRICS:
        columns: dict[str, float] = {}
        for kind in kinds_present:
            values = [per_image[i][kind][metric] for i in per_image
                      if kind in per_image[i] and metric in per_image[i][kind]]
            if values:
                columns[_KIND_COLUMN[kind]] = 100.0 * float(np.mean(values))
        if "min" in columns and "max" in columns:
            columns["d"] = robustness_d(columns["min"], columns["max"])
        if columns:
            report.aggregate_scores[metric] = columns
    return report


def _fractional_ranks(values: np.ndarray) -> np.ndarray:
    """Average-rank assignment; tied values share the mean of their ranks."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Spearman rank correlation: Pearson correlation of fractional ranks."""
    x = np.asarray(list(a), dtype=np.float64)
    y = np.asarray(list(b), dtype=np.float64)
    if x.size != y.size:
        raise ValueError("rank lists must have equal length")
    if x.size < 2:
        raise ValueError("need at least two observations")
    rx = _fractional_ranks(x)
    ry = _fractional_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = float(np.sqrt(np.sum(rx * rx) * np.sum(ry * ry)))
    if den == 0.0:
        raise ValueError("rank variance is zero; correlation undefined")
    return float(np.sum(rx * ry) / den)


def correlation_matrix(tables: dict, axis: str, dataset: str | None = None,
                       metric: str | None = None) -> tuple[list[str], np.ndarray]:
    """Spearman correlation matrix across metrics or across datasets.

    ``tables`` maps dataset -> model -> {metric-column: value}. With
    ``axis="cross_metric"`` the matrix correlates metric columns over the
    models of one dataset; with ``axis="cross_dataset"`` it correlates one
    metric's model ranking between dataset pairs. Model sets must agree
    across datasets for the cross-dataset form.
    """
    if axis not in ("cross_metric", "cross_dataset"):
        raise ValueError("axis must be 'cross_metric' or 'cross_dataset'")
    if not tables:
        raise ValueError("no report tables given")

    if axis == "cross_metric":
        if dataset is None:
            if len(tables) != 1:
                raise ValueError("multiple datasets present; specify one")
            dataset = next(iter(tables))
        if dataset not in tables:
            raise ValueError(f"unknown dataset {dataset!r}")
        models = sorted(tables[dataset])
        if len(models) < 2:
            raise ValueError("need at least two models")
        labels = sorted(set.intersection(*(set(tables[dataset][m]) for m in models)))
        if not labels:
            raise ValueError("no common metric columns")
        columns = [np.array([tables[dataset][m][lbl] for m in models]) for lbl in labels]
    else:
        if metric is None:
            raise ValueError("cross_dataset correlation needs a metric column")
        labels = sorted(tables)
        model_sets = [set(tables[d]) for d in labels]
        if any(s != model_sets[0] for s in model_sets):
            raise ValueError("model sets differ across datasets")
        models = sorted(model_sets[0])
        if len(models) < 2:
            raise ValueError("need at least two models")
        for d in labels:
            for m in models:
                if metric not in tables[d][m]:
                    raise ValueError(f"metric {metric!r} missing for {d}/{m}")
        columns = [np.array([tables[d][m][metric] for m in models]) for d in labels]

    n = len(labels)
    matrix = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            matrix[i, j] = matrix[j, i] = spearman(columns[i], columns[j])
    return labels, matrix
