"""Command-line entry point: phmat run | build | instantiate."""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import serialize
from .harness import generate_points, load_config, run_experiment, write_csv, write_json
from .kernels import KernelEvalCounter
from .phmatrix import metrics, offline, online


def _add_config_args(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--kernel", choices=["e", "tps", "se", "mc", "mn"])
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--lmax", dest="l_max", type=int)
    p.add_argument("--ps", dest="p_s", type=int)
    p.add_argument("--ptheta", dest="p_theta", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--method", choices=["param-h", "param-h2", "h-aca", "h2-hca"])
    p.add_argument("--near-mode", dest="near_mode", choices=["tt", "direct"])
    p.add_argument("--seed", type=int)
    p.add_argument("--ntheta", dest="n_theta", type=int, help="number of parameter samples")
    p.add_argument("--serial", action="store_true", help="disable block parallelism")
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")


def _resolve(args):
    keys = ["kernel", "n", "d", "l_max", "p_s", "p_theta", "eps", "eta", "method",
            "near_mode", "seed", "n_theta"]
    over = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "out", None):
        over["out"] = args.out
    return load_config(args.config, **over)


def cmd_run(args):
    cfg = _resolve(args)
    if args.dry_run:
        print(json.dumps(asdict(cfg), indent=2))
        return 0
    rec = run_experiment(cfg, serial=args.serial)
    out = cfg.out or "metrics.csv"
    write_csv(out, [rec])
    write_json(os.path.splitext(out)[0] + ".json", [rec])
    for k in ("Kernel", "n", "Method", "Error", "Rank", "NF Ratio", "FF Ratio", "Coupling Ratio",
              "Offline Time", "Online Time", "MVM Time"):
        print(f"{k}: {rec[k]}")
    return 0


def cmd_build(args):
    cfg = _resolve(args)
    if cfg.method not in ("param-h", "param-h2"):
        print("build needs method param-h or param-h2", file=sys.stderr)
        return 2
    if args.dry_run:
        print(json.dumps(asdict(cfg), indent=2))
        return 0
    X = generate_points(cfg.n, cfg.d, cfg.seed)
    counter = KernelEvalCounter()
    t0 = time.perf_counter()
    pm = offline(X, cfg.spec(), cfg.ph_config(), "h" if cfg.method == "param-h" else "h2",
                 counter=counter, serial=args.serial)
    dt = time.perf_counter() - t0
    serialize.save(pm, args.artifact)
    m = metrics(pm)
    print(f"offline {dt:.2f}s, {counter.total} kernel evaluations, rank {m['rank']:.2f}")
    print(f"wrote {args.artifact}")
    return 0


def cmd_instantiate(args):
    pm = serialize.load(args.artifact)
    theta = np.array([float(t) for t in args.theta.split(",")])
    counter = KernelEvalCounter()
    t0 = time.perf_counter()
    inst = online(pm, theta, counter)
    t1 = time.perf_counter()
    if args.x:
        x = np.load(args.x)
    else:
        x = np.random.default_rng(args.seed).random(pm.n)
    y = inst.matvec(x)
    t2 = time.perf_counter()
    print(f"online {t1 - t0:.4f}s, mvm {t2 - t1:.4f}s, kernel evaluations {counter.total}")
    if args.out:
        np.save(args.out, y)
        print(f"wrote {args.out}")
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(prog="phmat", description="parametric hierarchical matrices")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="run one experiment and write metrics")
    _add_config_args(p)
    p.add_argument("--out", help="CSV output path (JSON mirror next to it)")
    p.set_defaults(fn=cmd_run)
    p = sub.add_parser("build", help="offline stage, saved to an artifact")
    _add_config_args(p)
    p.add_argument("--artifact", required=True)
    p.set_defaults(fn=cmd_build)
    p = sub.add_parser("instantiate", help="online stage from an artifact, plus one MVM")
    p.add_argument("artifact")
    p.add_argument("--theta", required=True, help="comma-separated parameter values")
    p.add_argument("--x", help=".npy vector to multiply (default: random, seeded)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=".npy path for the product")
    p.set_defaults(fn=cmd_instantiate)
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
