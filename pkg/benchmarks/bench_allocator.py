"""Time the rate allocator and a short end-to-end run with and without numba.

Usage: python benchmarks/bench_allocator.py [--flows 200 400 800] [--repeat 50]
"""
import argparse
import time

import numpy as np

from msflow import _kernels
from msflow.config import load_config
from msflow.runner import simulate


def random_instance(n_flows, n_hosts, n_classes, rng):
    src = rng.integers(0, n_hosts, n_flows)
    dst = (src + rng.integers(1, n_hosts, n_flows)) % n_hosts
    route_links = np.stack([2 * src, 2 * dst + 1], axis=1).ravel().astype(np.int64)
    route_len = np.full(n_flows, 2, np.int64)
    route_start = np.arange(0, 2 * n_flows, 2, dtype=np.int64)
    keys = rng.integers(0, n_classes, (2, n_flows)).astype(np.float64)
    caps = np.where(rng.random(n_flows) < 0.2, rng.uniform(0.05, 0.5, n_flows), np.inf)
    link_cap = rng.uniform(0.5, 2.0, 2 * n_hosts)
    return keys, np.arange(n_flows, dtype=np.int64), caps, route_start, route_len, route_links, link_cap


def time_allocate(args, use_numba, repeat):
    _kernels.allocate(*args, use_numba=use_numba)          # compile / warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        local, rates = _kernels.allocate(*args, use_numba=use_numba)
    out = np.empty_like(rates)
    out[local] = rates
    return (time.perf_counter() - t0) / repeat, out


def time_sim(use_numba):
    cfg = load_config(overrides={"workload": {"requests": 300}, "model": {"layers": 8}})
    old = _kernels.USE_NUMBA
    _kernels.USE_NUMBA = use_numba and _kernels.NUMBA_AVAILABLE
    try:
        simulate(cfg, "mfs", 2.0, 0)                     # warm up
        t0 = time.perf_counter()
        simulate(cfg, "mfs", 2.0, 1)
        return time.perf_counter() - t0
    finally:
        _kernels.USE_NUMBA = old


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--flows", type=int, nargs="+", default=[100, 400, 1600])
    ap.add_argument("--repeat", type=int, default=30)
    ap.add_argument("--skip-sim", action="store_true")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba available: {_kernels.NUMBA_AVAILABLE}")
    print(f"{'flows':>6} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for n in args.flows:
        inst = random_instance(n, 32, 6, rng)
        t_np, r_np = time_allocate(inst, False, args.repeat)
        t_nb, r_nb = time_allocate(inst, True, args.repeat)
        diff = float(np.max(np.abs(r_np - r_nb))) if n else 0.0
        print(f"{n:>6} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} {t_np / t_nb:>8.1f} {diff:>11.2e}")
    if not args.skip_sim:
        t_np, t_nb = time_sim(False), time_sim(True)
        print(f"end-to-end mfs, 300 requests x 8 layers: numpy {t_np:.2f}s  numba {t_nb:.2f}s  "
              f"speedup {t_np / t_nb:.1f}x")


if __name__ == "__main__":
    main()
