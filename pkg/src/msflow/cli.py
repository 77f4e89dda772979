"""Command-line entry points: ``simrun`` for one cell, ``simsweep`` for a grid."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from .config import load_config
from .metrics import SUMMARY_KEYS, emit_report
from .runner import POLICY_NAMES, build_workload, cost_model, simulate
from .topology import ConfigError, _get, build_topology
from .workload import SloOracle, WorkloadError

log = logging.getLogger("msflow")


def _csv_list(text, cast):
    try:
        return [cast(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse list {text!r}") from None


def _policies(text):
    out = _csv_list(text, str.strip)
    bad = [p for p in out if p not in POLICY_NAMES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown policies {bad}; choose from {', '.join(POLICY_NAMES)}")
    return out


def run_cell(cfg, policy, rate, seed, out_dir, topo=None, oracle=None, workload=None):
    topo = topo or build_topology(cfg)
    wl = workload or build_workload(cfg, rate, seed, topo, oracle)
    res = simulate(cfg, policy, rate, seed, wl, topo)
    return emit_report(res.report, out_dir)


def simrun(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="simrun", description="Run one policy at one load and seed.")
    ap.add_argument("--config", help="YAML config file")
    ap.add_argument("--policy", required=True, choices=POLICY_NAMES)
    ap.add_argument("--rate", type=float, required=True, help="requests/s per prefill unit")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        seed = _get(cfg, "sim.seed", 0, int) if args.seed is None else args.seed
        summary = run_cell(cfg, args.policy, args.rate, seed, args.out)
    except (ConfigError, WorkloadError, OSError) as e:
        print(f"simrun: error: {e}", file=sys.stderr)
        return 2
    log.info("wrote %s", args.out)
    print(f"{args.policy} rate={args.rate:g} seed={seed} slo_attainment={summary['slo_attainment']}")
    return 0


def simsweep(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="simsweep", description="Run a policy x rate x seed grid.")
    ap.add_argument("--config", help="YAML config file")
    ap.add_argument("--policies", type=_policies, default=list(POLICY_NAMES))
    ap.add_argument("--rates", type=lambda s: _csv_list(s, float), required=True)
    ap.add_argument("--seeds", type=lambda s: _csv_list(s, int), default=[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        topo = build_topology(cfg)
        oracle = SloOracle(topo, cost_model(cfg), _get(cfg, "cluster.max_batch_tokens", 8192, int))
        rows = []
        for rate in args.rates:
            for seed in args.seeds:
                wl = build_workload(cfg, rate, seed, topo, oracle)
                for pol in args.policies:
                    cell = os.path.join(args.out, pol, f"rate_{rate:g}", f"seed_{seed}")
                    summary = run_cell(cfg, pol, rate, seed, cell, topo, workload=wl)
                    log.info("%s rate=%g seed=%d attainment=%s", pol, rate, seed,
                             summary["slo_attainment"])
                    rows.append({"rate": rate, **summary})
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "sweep.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, ["rate"] + SUMMARY_KEYS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    except (ConfigError, WorkloadError, OSError) as e:
        print(f"simsweep: error: {e}", file=sys.stderr)
        return 2
    print(f"wrote {len(rows)} cells to {args.out}")
    return 0


def main_simrun():
    sys.exit(simrun())


def main_simsweep():
    sys.exit(simsweep())
