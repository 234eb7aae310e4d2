"""FastAPI service exposing the harness operations over HTTP.

The CLI is a thin client of this app; it can also be served standalone
(``clickstorm serve``) so several clients can share one evaluation host.
Configuration payloads mirror the JSON run-config schema.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .attack import AttackConfig
from .config import DEFAULT_KINDS, RunConfig
from .datasets import EntryError
from .runner import bruteforce_eval, correlate_eval, evaluate, generate_suite, spread_eval
from .segmenters import SegmenterProfile


class AttackModel(BaseModel):
    clicks: int = 10
    iters: int = 10
    ill_weight: float = 1000.0
    ill_margin: float = Field(default=0.05, ge=0.0, lt=1.0)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_override: float | None = None
    threshold: float = 0.5
    connectivity: int = 8
    boundary_width: float | None = None


class SegmenterModel(BaseModel):
    kind: str
    radius: float = 5.0
    sharpness: float = 2.0
    params: dict = Field(default_factory=dict)
    endpoint: str | None = None


class RunConfigModel(BaseModel):
    dataset: str
    segmenter: SegmenterModel
    out: str
    attack: AttackModel = Field(default_factory=AttackModel)
    kinds: list[str] = Field(default_factory=lambda: list(DEFAULT_KINDS))
    workers: int = Field(default=1, ge=1)
    seed: int = 0
    model_name: str | None = None

    def to_run_config(self) -> RunConfig:
        return RunConfig(
            dataset=self.dataset,
            segmenter=SegmenterProfile(**self.segmenter.model_dump()),
            attack=AttackConfig(**self.attack.model_dump()),
            kinds=list(self.kinds),
            workers=self.workers,
            out=self.out,
            seed=self.seed,
            model_name=self.model_name,
        )


class EvaluateRequest(BaseModel):
    config: RunConfigModel


class EvaluateResponse(BaseModel):
    status: str
    out_dir: str
    aggregate: dict
    failures: list[dict]


class BruteforceRequest(BaseModel):
    config: RunConfigModel
    image_id: str
    stride: int | None = None
    polarity: str = "positive"


class SpreadRequest(BaseModel):
    config: RunConfigModel
    clicks_csv: str


class CorrelateRequest(BaseModel):
    reports: list[str]
    axis: str = "cross_metric"
    dataset: str | None = None
    metric: str | None = None
    out: str | None = None


class GenSyntheticRequest(BaseModel):
    out_dir: str
    count: int = Field(default=50, ge=1)
    size: int = Field(default=32, ge=8)
    seed: int = 0


def create_app() -> FastAPI:
    app = FastAPI(title="clickstorm", version=__version__)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate_endpoint(req: EvaluateRequest) -> EvaluateResponse:
        try:
            result = evaluate(req.config.to_run_config())
        except (ValueError, FileNotFoundError, FileExistsError, EntryError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return EvaluateResponse(status=result.status, out_dir=result.out_dir,
                                aggregate=result.report.aggregate_scores,
                                failures=result.failures)

    @app.post("/bruteforce")
    def bruteforce_endpoint(req: BruteforceRequest) -> dict:
        if req.polarity not in ("positive", "negative"):
            raise HTTPException(status_code=400, detail="polarity must be positive|negative")
        try:
            return bruteforce_eval(req.config.to_run_config(), req.image_id,
                                   stride=req.stride, positive=req.polarity == "positive")
        except (ValueError, FileNotFoundError, EntryError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/spread")
    def spread_endpoint(req: SpreadRequest) -> dict:
        try:
            return spread_eval(req.config.to_run_config(), req.clicks_csv)
        except (ValueError, FileNotFoundError, EntryError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/correlate")
    def correlate_endpoint(req: CorrelateRequest) -> dict:
        try:
            return correlate_eval(req.reports, req.axis, dataset=req.dataset,
                                  metric=req.metric, out_path=req.out)
        except (ValueError, FileNotFoundError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/gen-synthetic")
    def gen_synthetic_endpoint(req: GenSyntheticRequest) -> dict:
        try:
            manifest = generate_suite(req.out_dir, count=req.count, size=req.size, seed=req.seed)
        except (ValueError, OSError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {"manifest": str(manifest), "count": req.count, "size": req.size, "seed": req.seed}

    return app


app = create_app()
