"""Run configuration: JSON config files plus CLI/env overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .attack import AttackConfig
from .segmenters import SegmenterProfile

__all__ = ["RunConfig", "load_config", "DEFAULT_KINDS", "WORKERS_ENV"]

DEFAULT_KINDS = ["baseline", "minimizing", "maximizing"]
WORKERS_ENV = "CLICKSTORM_WORKERS"


@dataclass
class RunConfig:
    dataset: str
    segmenter: SegmenterProfile
    out: str
    attack: AttackConfig = field(default_factory=AttackConfig)
    kinds: list[str] = field(default_factory=lambda: list(DEFAULT_KINDS))
    workers: int = 1
    seed: int = 0
    model_name: str | None = None

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")
        bad = [k for k in self.kinds if k not in DEFAULT_KINDS]
        if bad:
            raise ValueError(f"unknown trajectory kinds: {bad}")

    @property
    def label(self) -> str:
        return self.model_name or self.segmenter.kind

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "segmenter": self.segmenter.to_dict(),
            "attack": self.attack.to_dict(),
            "kinds": list(self.kinds),
            "workers": self.workers,
            "out": self.out,
            "seed": self.seed,
            "model_name": self.model_name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if "dataset" not in d or "segmenter" not in d or "out" not in d:
            missing = [k for k in ("dataset", "segmenter", "out") if k not in d]
            raise ValueError(f"config missing required fields: {missing}")
        workers = d.get("workers")
        if workers is None:
            workers = int(os.environ.get(WORKERS_ENV, "1"))
        return cls(
            dataset=str(d["dataset"]),
            segmenter=SegmenterProfile.from_dict(d["segmenter"]),
            attack=AttackConfig.from_dict(d.get("attack", {})),
            kinds=list(d.get("kinds", DEFAULT_KINDS)),
            workers=int(workers),
            out=str(d["out"]),
            seed=int(d.get("seed", 0)),
            model_name=d.get("model_name"),
        )


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_dict(json.load(fh))
