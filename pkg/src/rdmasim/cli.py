"""Command-line experiment runner.

Subcommands: simulate, sweep, ecdf, tables, coding-bench, ml-drop. Outputs
are CSV files plus JSON summary/metadata sidecars; exit status is 0 on
success and 2 on a structured configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, presets, scenario
from .losstolerance import DropMode, TrainConfig, coding, train_with_drops


def _fail(message: str, field: str | None = None) -> int:
    payload = {"error": message}
    if field:
        payload["field"] = field
    print(json.dumps(payload), file=sys.stderr)
    return 2


def _load_raw_config(args) -> dict:
    if args.preset:
        return presets.get_preset(args.preset)
    if not args.config:
        raise scenario.ConfigError("--config", "either --config or --preset is required")
    with open(args.config) as fh:
        return json.load(fh)


def _cmd_simulate(args) -> int:
    raw = _load_raw_config(args)
    if args.seed is not None:
        raw["seed"] = args.seed
    config = scenario.parse_config(raw)
    report = scenario.simulate(config, out_dir=args.out, raw_config=raw)
    if not args.quiet:
        print(json.dumps({"run_id": report.run_id, **report.summary}, indent=2, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    raw = _load_raw_config(args)
    if args.seed is not None:
        raw["seed"] = args.seed
    values = json.loads(args.values)
    if not isinstance(values, list):
        raise scenario.ConfigError("--values", "must be a JSON list")
    reports = scenario.sweep(raw, args.axis, values, out_dir=args.out,
                             seed_policy=args.seed_policy)
    if not args.quiet:
        for value, rep in zip(values, reports):
            print(json.dumps({"value": value, "run_id": rep.run_id,
                              "p99_ns": rep.summary["p99_ns"],
                              "median_ns": rep.summary["median_ns"]}, sort_keys=True))
    return 0


def _cmd_ecdf(args) -> int:
    durations = scenario.read_step_durations(args.input)
    if not durations:
        return _fail("no rows in input CSV", "input")
    out = args.out or os.path.join(os.path.dirname(args.input) or ".", "ecdf.csv")
    scenario.write_ecdf_csv(out, durations)
    if not args.quiet:
        print(out)
    return 0


def _cmd_tables(args) -> int:
    out = args.out or "tables.csv"
    rows = scenario.report_tables(out)
    if not args.quiet:
        for row in rows:
            print(json.dumps(row, sort_keys=True))
    return 0


def _cmd_coding_bench(args) -> int:
    rows = []
    for k in range(10, args.max_log2 + 1):
        n = 1 << k
        rng = np.random.Generator(np.random.PCG64(args.seed))
        v = rng.normal(size=n)
        t0 = time.perf_counter()
        reps = max(1, 2 ** 20 // n)
        for _ in range(reps):
            v = coding.fwht(v)
        dt = time.perf_counter() - t0
        rows.append({"n": n, "elements_per_sec": int(n * reps / dt)})
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("n,elements_per_sec\n")
            for row in rows:
                fh.write(f"{row['n']},{row['elements_per_sec']}\n")
    if not args.quiet:
        for row in rows:
            print(json.dumps(row))
    return 0


def _cmd_ml_drop(args) -> int:
    cfg = TrainConfig(
        workers=args.workers,
        drop_fraction=args.drop,
        mode=DropMode(args.mode),
        epochs=args.epochs,
        model=args.model,
        dataset=args.dataset,
        seed=args.seed if args.seed is not None else 0,
    )
    result = train_with_drops(cfg)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "accuracy.csv")
        with open(path, "w") as fh:
            fh.write("epoch,test_accuracy\n")
            for i, acc in enumerate(result.epoch_accuracy):
                fh.write(f"{i},{acc:.6f}\n")
        with open(os.path.join(args.out, "grad_error.csv"), "w") as fh:
            fh.write("step,grad_mse\n")
            for i, mse in enumerate(result.grad_mse):
                fh.write(f"{i},{mse:.9e}\n")
    if not args.quiet:
        print(json.dumps({
            "mode": result.mode.value,
            "drop_fraction": result.drop_fraction,
            "final_accuracy": round(result.final_accuracy, 6),
            "grad_mse_mean": result.grad_mse_mean,
            "steps": result.steps,
        }, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdmasim",
        description="Packet-level RDMA transport simulator and NIC resource models",
    )
    parser.add_argument("--version", action="version", version=f"rdmasim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="scenario config JSON path")
            p.add_argument("--preset", help="named built-in scenario",
                           choices=sorted(presets.PRESETS))
            p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default=os.environ.get("RDMASIM_OUT"),
                       help="output directory (default $RDMASIM_OUT)")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("simulate", help="run one scenario")
    common(p)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("sweep", help="run one scenario per axis value")
    common(p)
    p.add_argument("--axis", required=True, help="dotted config field, e.g. background.flow_rate_per_sec")
    p.add_argument("--values", required=True, help="JSON list of axis values")
    p.add_argument("--seed-policy", default="same", choices=["same", "increment"])
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("ecdf", help="empirical CDF table from a steps.csv")
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=_cmd_ecdf)

    p = sub.add_parser("tables", help="design comparison table (state, capacity, MTBF)")
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=_cmd_tables)

    p = sub.add_parser("coding-bench", help="transform throughput microbenchmark")
    p.add_argument("--max-log2", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=_cmd_coding_bench)

    p = sub.add_parser("ml-drop", help="drop-tolerant SGD harness")
    p.add_argument("--model", default="logreg", choices=["logreg", "mlp"])
    p.add_argument("--dataset", default="blobs", choices=["blobs", "digits"])
    p.add_argument("--mode", default="HADAMARD",
                   choices=[m.value for m in DropMode])
    p.add_argument("--drop", type=float, default=0.05)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=_cmd_ml_drop)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except scenario.ConfigError as exc:
        return _fail(str(exc), exc.field)
    except (OSError, json.JSONDecodeError, ValueError, KeyError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
