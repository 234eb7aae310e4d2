"""Command-line surface: a thin HTTP client of the clickstorm service.

Every subcommand builds a request payload and posts it to the service app.
By default the app runs in-process; ``--server URL`` targets a remote
instance started with ``clickstorm serve``.

Exit codes: 0 full success, 1 partial (some images failed), 2 config/IO
errors.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys

import httpx

from .config import WORKERS_ENV

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


def _post(path: str, payload: dict, server: str | None) -> dict:
    async def go() -> httpx.Response:
        if server:
            async with httpx.AsyncClient(base_url=server, timeout=None) as client:
                return await client.post(path, json=payload)
        from .service import create_app
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(transport=transport, base_url="http://clickstorm",
                                     timeout=None) as client:
            return await client.post(path, json=payload)

    response = asyncio.run(go())
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except Exception:
            detail = response.text
        raise SystemExit(f"error: {detail}") from None
    return response.json()


def _load_config_payload(args) -> dict:
    """Config file merged with CLI overrides (flags win)."""
    cfg: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise SystemExit(f"error: cannot read config {args.config}: {exc}") from None
    if getattr(args, "dataset", None):
        cfg["dataset"] = args.dataset
    if getattr(args, "segmenter", None):
        seg = cfg.setdefault("segmenter", {})
        seg["kind"] = args.segmenter
    if getattr(args, "out", None):
        cfg["out"] = args.out
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        cfg["workers"] = args.workers
    elif "workers" not in cfg and os.environ.get(WORKERS_ENV):
        cfg["workers"] = int(os.environ[WORKERS_ENV])
    attack = cfg.setdefault("attack", {})
    if getattr(args, "clicks", None) is not None:
        attack["clicks"] = args.clicks
    if getattr(args, "iters", None) is not None:
        attack["iters"] = args.iters
    missing = [k for k in ("dataset", "segmenter", "out") if not cfg.get(k)]
    if missing:
        raise SystemExit(f"error: missing config fields: {', '.join(missing)}")
    return cfg


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run-config file; flags override its fields")
    p.add_argument("--dataset", help="dataset manifest path")
    p.add_argument("--segmenter", help="segmenter kind (oracle|blob|rugged|bridge)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--clicks", type=int, help="clicks per trajectory")
    p.add_argument("--iters", type=int, help="optimizer iterations per click")
    p.add_argument("--workers", type=int, help="worker count")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--server", help="remote service URL (default: in-process)")


def cmd_evaluate(args) -> int:
    payload = {"config": _load_config_payload(args)}
    result = _post("/evaluate", payload, args.server)
    print(json.dumps(result["aggregate"], indent=2, sort_keys=True))
    if result["failures"]:
        for failure in result["failures"]:
            print(f"failed {failure['image_id']}: {failure['error']}", file=sys.stderr)
        print(f"{len(result['failures'])} image(s) failed; report written to "
              f"{result['out_dir']}", file=sys.stderr)
        return EXIT_PARTIAL
    print(f"report written to {result['out_dir']}")
    return EXIT_OK


def cmd_bruteforce(args) -> int:
    payload = {
        "config": _load_config_payload(args),
        "image_id": args.image_id,
        "stride": args.stride,
        "polarity": args.polarity,
    }
    result = _post("/bruteforce", payload, args.server)
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_spread(args) -> int:
    payload = {"config": _load_config_payload(args), "clicks_csv": args.clicks_csv}
    result = _post("/spread", payload, args.server)
    for row in result["table"]:
        print(f"{row['image_id']}: iou spread {row['iou_spread']:.4f} "
              f"(baseline iou {row['baseline_iou']:.4f})")
    print(f"tables written to {result['paths']['spread']}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    payload = {"reports": args.reports, "axis": args.axis, "dataset": args.dataset,
               "metric": args.metric, "out": args.out}
    result = _post("/correlate", payload, args.server)
    labels = result["labels"]
    width = max(len(l) for l in labels)
    print(" " * width + "  " + "  ".join(f"{l:>{width}}" for l in labels))
    for label, row in zip(labels, result["matrix"]):
        print(f"{label:>{width}}  " + "  ".join(f"{v:>{width}.3f}" for v in row))
    if result.get("path"):
        print(f"matrix written to {result['path']}")
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    payload = {"out_dir": args.out, "count": args.count, "size": args.size, "seed": args.seed}
    result = _post("/gen-synthetic", payload, args.server)
    print(f"manifest written to {result['manifest']}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clickstorm",
                                     description="Interactive-segmentation robustness harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="run trajectories over a dataset and write reports")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bruteforce", help="first-click grid sweep for one image")
    _add_config_flags(p)
    p.add_argument("image_id")
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--polarity", choices=["positive", "negative"], default="positive")
    p.set_defaults(func=cmd_bruteforce)

    p = sub.add_parser("spread", help="score an external click CSV and its quality spread")
    _add_config_flags(p)
    p.add_argument("clicks_csv")
    p.set_defaults(func=cmd_spread)

    p = sub.add_parser("correlate", help="Spearman correlation matrix over saved reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--axis", choices=["cross_metric", "cross_dataset"], default="cross_metric")
    p.add_argument("--dataset")
    p.add_argument("--metric")
    p.add_argument("--out")
    p.add_argument("--server")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("gen-synthetic", help="generate the synthetic evaluation suite")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--server")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":
    sys.exit(main())
