"""Command line interface: ``panelvar <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

from . import pipeline
from .errors import PanelVarError

STAGES = {
    "measures": ("measures",),
    "fit": ("fit",),
    "forecast": ("forecast",),
    "backtest": ("backtest",),
    "portfolio": ("portfolio",),
    "simulate": ("simulate", "measures"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panelvar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--window", type=int)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--taus", help="comma-separated quantile levels")
    common.add_argument("--models", help="comma-separated model names, e.g. pqr-rv,riskmetrics")
    common.add_argument("--replications", type=int)
    common.add_argument("--data", help="tick CSV: timestamp_iso8601,asset_id,price")
    common.add_argument("--simulate", choices=("mvn", "mt9", "n01", "t9"))
    common.add_argument("--days", type=int)
    common.add_argument("--assets", dest="n_assets", type=int)
    common.add_argument("--dq-reps", dest="dq_reps", type=int)
    common.add_argument("--bootstrap", type=int, help="bootstrap replications for fit t-statistics")
    common.add_argument("--frontier", action="store_const", const="true", default=None)
    for name in list(STAGES) + ["study", "run"]:
        sub.add_parser(name, parents=[common])
    return parser


def _overrides(args) -> dict:
    keys = (
        "seed", "out_dir", "window", "lam", "taus", "models", "replications", "data",
        "simulate", "days", "n_assets", "dq_reps", "bootstrap", "frontier",
    )
    return {k: getattr(args, k) for k in keys}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    file_values = {}
    out_dir = Path(args.out_dir or "out")
    cfg = None
    try:
        if args.config:
            file_values = pipeline.parse_config_text(Path(args.config).read_text())
        overrides = _overrides(args)
        if args.command == "simulate" and not overrides["simulate"] and "simulate" not in file_values:
            overrides["simulate"] = "mvn"
        cfg = pipeline.make_config(file_values, overrides)
        out_dir = Path(cfg.out_dir)
    except (PanelVarError, OSError) as exc:
        out_dir.mkdir(parents=True, exist_ok=True)
        pipeline.write_manifest(None, out_dir, "invalid-config", [], str(exc))
        print(f"panelvar: configuration error: {exc}", file=sys.stderr)
        return 2
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    try:
        if args.command in ("study", "run") and cfg.data is None:
            results = pipeline.run_study(
                cfg, progress=lambda i, n: print(f"replication {i}/{n}", file=sys.stderr)
            )
            files = pipeline.report_tables(cfg, results, out_dir)
        elif args.command in ("study", "run"):
            pipeline.run_dataset(cfg, files=files)
        else:
            pipeline.run_dataset(cfg, STAGES[args.command], files=files)
    except Exception as exc:  # noqa: BLE001 - manifest must record any failure
        pipeline.write_manifest(cfg, out_dir, "failed", files, f"{type(exc).__name__}: {exc}")
        traceback.print_exc()
        return 1
    pipeline.write_manifest(cfg, out_dir, "ok", files)
    return 0


if __name__ == "__main__":
    sys.exit(main())
