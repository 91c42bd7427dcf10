"""Experiment driver: runs one algorithm on a dataset (file or synthetic),
emits trace.csv / ledger.csv / summary.txt / resolved.cfg, and builds
speedup tables across worker counts.

Measurement conventions: w starts at 0, the inner loop length defaults to
the per-worker instance count, the step size is fixed throughout, and the
reported "gap" is f(w_t) - f(w*) with w* from a long serial reference
solve (or an external file).  Wall-clock is recorded but never asserted;
with --deterministic the seconds column is pinned to 0.0 so repeated runs
are byte-identical.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import model
from .analysis import logistic_constants
from .comm import make_fabric
from .data import parse_libsvm, partition_by_feature, partition_by_instance
from .dsvrg import dsvrg_style_run
from .fd import fd_svrg_run
from .model import LossKind, RegKind, Regularizer
from .ps import AsyncSchedule, asysvrg_run, synsvrg_run
from .runtime import RunConfig, write_trace_csv
from .serial import solve_reference, svrg_run
from .synthetic import make_synthetic

ALGORITHMS = ("serial", "fd-svrg", "synsvrg", "asysvrg", "dsvrg-style")

DEFAULTS = {
    "algorithm": "fd-svrg",
    "workers": "4",
    "servers": "1",
    "eta": "0.1",
    "lambda": "1e-4",
    "loss": "logistic",
    "reg": "l2",
    "batch": "1",
    "outer": "10",
    "inner": "auto",
    "seed": "0",
    "staleness": "0",
    "schedule_policy": "round_robin",
    "backend": "inproc",
    "deterministic": "false",
    "oracle": "long-run",
    "gap_threshold": "1e-4",
}


def parse_config_file(path) -> dict[str, str]:
    cfg: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _bool(s: str) -> bool:
    return s.lower() in ("1", "true", "yes", "on")


def load_dataset(cfg: dict[str, str]):
    if "dataset" in cfg:
        n_features = int(cfg["n_features"]) if "n_features" in cfg else None
        return parse_libsvm(cfg["dataset"], n_features)
    if "synthetic_d" in cfg:
        return make_synthetic(
            d=int(cfg["synthetic_d"]),
            n=int(cfg["synthetic_n"]),
            sparsity=float(cfg.get("synthetic_sparsity", "1.0")),
            seed=int(cfg.get("synthetic_seed", "0")),
            flip_prob=float(cfg.get("synthetic_flip", "0.0")))
    raise ValueError("config must name a dataset path or synthetic_* parameters")


def resolve_run_config(cfg: dict[str, str], n: int) -> RunConfig:
    algorithm = cfg["algorithm"]
    q = int(cfg["workers"])
    if cfg["inner"] == "auto":
        # Inner loop length = per-worker instance count: feature workers
        # hold all N instances, instance workers hold N/q.
        inner = n if algorithm in ("serial", "fd-svrg") else max(1, n // q)
    else:
        inner = int(cfg["inner"])
    loss = LossKind(cfg["loss"])
    reg = Regularizer(RegKind(cfg["reg"]), float(cfg["lambda"]))
    return RunConfig(step_size=float(cfg["eta"]), inner_steps=inner,
                     outer_loops=int(cfg["outer"]), batch_size=int(cfg["batch"]),
                     seed=int(cfg["seed"]), loss=loss, reg=reg)


def compute_oracle_objective(cfg: dict[str, str], data, run_cfg: RunConfig):
    policy = cfg["oracle"]
    if policy == "none":
        return None
    if policy.startswith("file:"):
        w_star = np.loadtxt(policy[len("file:"):])
        return model.full_objective(data, w_star, run_cfg.loss, run_cfg.reg)
    if policy == "long-run":
        eta = float(cfg.get("oracle_eta", cfg["eta"]))
        w_star = solve_reference(data, run_cfg.loss, run_cfg.reg,
                                 step_size=eta, grad_tol=1e-12)
        return model.full_objective(data, w_star, run_cfg.loss, run_cfg.reg)
    raise ValueError(f"unknown oracle policy {policy!r}")


def run_experiment(cfg: dict[str, str], out_dir) -> dict[str, str]:
    """Run one configured experiment and write its artifacts to out_dir."""
    cfg = {**DEFAULTS, **cfg}
    algorithm = cfg["algorithm"]
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    data = load_dataset(cfg)
    run_cfg = resolve_run_config(cfg, data.n)
    q = int(cfg["workers"])
    p = int(cfg["servers"])
    deterministic = _bool(cfg["deterministic"])
    record_seconds = not deterministic
    w_star_obj = compute_oracle_objective(cfg, data, run_cfg)

    ledger = None
    if algorithm == "serial":
        res = svrg_run(data, run_cfg, w_star_objective=w_star_obj,
                       record_seconds=record_seconds)
    elif algorithm == "fd-svrg":
        shards = partition_by_feature(data, q)
        fabric = make_fabric(cfg["backend"])
        res = fd_svrg_run(shards, run_cfg, fabric=fabric,
                          w_star_objective=w_star_obj,
                          threaded=(cfg["backend"] == "socket"),
                          record_seconds=record_seconds)
        ledger = res.ledger
    elif algorithm == "synsvrg":
        shards = partition_by_instance(data, q)
        res = synsvrg_run(shards, p, run_cfg, w_star_objective=w_star_obj,
                          record_seconds=record_seconds)
        ledger = res.ledger
    elif algorithm == "asysvrg":
        shards = partition_by_instance(data, q)
        schedule = AsyncSchedule(seed=run_cfg.seed,
                                 max_staleness=int(cfg["staleness"]),
                                 policy=cfg["schedule_policy"])
        res = asysvrg_run(shards, p, run_cfg, schedule,
                          w_star_objective=w_star_obj,
                          record_seconds=record_seconds)
        ledger = res.ledger
    else:
        shards = partition_by_instance(data, q)
        res = dsvrg_style_run(shards, run_cfg, w_star_objective=w_star_obj,
                              record_seconds=record_seconds)
        ledger = res.ledger

    write_trace_csv(res.trace, out / "trace.csv")
    if ledger is not None:
        ledger.write_csv(out / "ledger.csv")
    (out / "resolved.cfg").write_text(
        "".join(f"{k}={v}\n" for k, v in sorted(cfg.items())))

    threshold = float(cfg["gap_threshold"])
    time_to_gap = None
    for rec in res.trace:
        if not math.isnan(rec.gap) and rec.gap <= threshold:
            time_to_gap = rec.seconds
            break
    final = res.trace[-1]
    summary = {
        "algorithm": algorithm,
        "workers": str(q),
        "servers": str(p),
        "eta": cfg["eta"],
        "lambda": cfg["lambda"],
        "outer": str(run_cfg.outer_loops),
        "inner": str(run_cfg.inner_steps),
        "batch": str(run_cfg.batch_size),
        "seed": str(run_cfg.seed),
        "final_objective": repr(final.objective),
        "final_gap": repr(final.gap),
        "total_comm_scalars": str(final.comm_scalars),
        f"time_to_gap_{threshold:g}": "DNF" if time_to_gap is None else repr(time_to_gap),
        "elapsed_seconds": repr(final.seconds),
    }
    (out / "summary.txt").write_text("".join(f"{k}={v}\n" for k, v in summary.items()))
    return summary


def speedup_report(runs: list[tuple[int, float | None]]) -> list[tuple[int, float, float]]:
    """(q, seconds, speedup) rows from per-q run times; the q=1 run is the
    baseline.  Runs that missed the gap threshold (seconds None) are
    dropped with a warning."""
    usable = {}
    for q, seconds in runs:
        if seconds is None:
            print(f"warning: q={q} run did not reach the gap threshold (DNF), "
                  "excluded", file=sys.stderr)
            continue
        usable[q] = seconds
    if 1 not in usable:
        raise ValueError("speedup requires a completed 1-worker baseline run")
    base = usable[1]
    return [(q, secs, base / secs) for q, secs in sorted(usable.items())]


def _read_summary(path) -> dict[str, str]:
    return parse_config_file(path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fdsvrg")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment")
    run_p.add_argument("--config", help="flat key=value config file")
    run_p.add_argument("--out", default="run_out", help="output directory")
    run_p.add_argument("--algorithm", choices=ALGORITHMS)
    run_p.add_argument("--workers", type=int)
    run_p.add_argument("--servers", type=int)
    run_p.add_argument("--eta", type=float)
    run_p.add_argument("--lambda", dest="lam", type=float)
    run_p.add_argument("--batch", type=int)
    run_p.add_argument("--outer", type=int)
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--staleness", type=int)
    run_p.add_argument("--backend", choices=("inproc", "socket"))
    run_p.add_argument("--deterministic", action="store_true")

    sp_p = sub.add_parser("speedup", help="speedup table from run directories")
    sp_p.add_argument("dirs", nargs="+", help="run output directories")

    args = parser.parse_args(argv)

    if args.command == "run":
        cfg = parse_config_file(args.config) if args.config else {}
        overrides = {
            "algorithm": args.algorithm, "workers": args.workers,
            "servers": args.servers, "eta": args.eta, "lambda": args.lam,
            "batch": args.batch, "outer": args.outer, "seed": args.seed,
            "staleness": args.staleness, "backend": args.backend,
        }
        for key, value in overrides.items():
            if value is not None:
                cfg[key] = str(value)
        if args.deterministic:
            cfg["deterministic"] = "true"
        summary = run_experiment(cfg, args.out)
        for k, v in summary.items():
            print(f"{k}={v}")
        return 0

    entries = []
    for run_dir in args.dirs:
        summary = _read_summary(Path(run_dir) / "summary.txt")
        q = int(summary["workers"])
        time_key = next(k for k in summary if k.startswith("time_to_gap_"))
        seconds = None if summary[time_key] == "DNF" else float(summary[time_key])
        entries.append((q, seconds))
    rows = speedup_report(entries)
    print("q,seconds,speedup,ideal")
    for q, secs, speedup in rows:
        print(f"{q},{secs:.6f},{speedup:.3f},{q}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
