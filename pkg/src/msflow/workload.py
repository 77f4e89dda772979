"""Synthetic and trace-driven request streams, SLO derivation and FIFO batch packing."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import INF, Batch, Request
from .engine import Simulator
from .pipeline import CostModel, PrefillPipeline, WorkloadError
from .policies.baselines import FairShare


@dataclass
class WorkloadSpec:
    rate: float                       # requests/s per prefill unit
    request_count: int = 1000
    units: int = 8
    layers: int = 16
    prompt_mean: float = 2048.0
    prompt_sigma: float = 0.6         # 0 gives constant prompts
    prompt_min: int = 16
    max_tokens: int = 8192
    reuse_mean: float = 0.5
    reuse_concentration: float = 4.0
    reuse_skew: float = 1.2           # Zipf exponent over peer units
    horizon: Optional[float] = None   # stop at this arrival time instead of a count
    token_quantum: int = 64           # prompts are whole KV blocks; 0 disables
    reuse_quantum: float = 0.125      # reuse fractions snap to this grid; 0 disables
    seed: int = 0

    def __post_init__(self):
        if not self.rate > 0:
            raise WorkloadError("rate must be positive")
        if not 0.0 <= self.reuse_mean <= 1.0:
            raise WorkloadError("reuse_mean must lie in [0, 1]")
        if self.units < 1 or self.layers < 1:
            raise WorkloadError("units and layers must be >= 1")
        if self.request_count < 0:
            raise WorkloadError("request_count must be >= 0")
        if self.prompt_mean > self.max_tokens:
            raise WorkloadError("prompt_mean exceeds max_tokens")
        if self.token_quantum < 0 or not 0 <= self.reuse_quantum <= 1:
            raise WorkloadError("token_quantum must be >= 0 and reuse_quantum in [0, 1]")


def zipf_weights(n, s):
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def _arrivals(rng, spec):
    lam = spec.rate * spec.units
    if spec.horizon is None:
        return np.cumsum(rng.exponential(1.0 / lam, spec.request_count))
    out, t = [], 0.0
    while True:
        t += rng.exponential(1.0 / lam)
        if t > spec.horizon:
            return np.array(out)
        out.append(t)


def generate_workload(spec: WorkloadSpec) -> list:
    """Poisson arrivals spread uniformly over units; lognormal prompts; Beta reuse fractions.

    Reuse sources follow a Zipf law over a fixed global popularity ranking of
    units, so a few units become hot sources.
    """
    rng = np.random.default_rng(spec.seed)
    arrivals = _arrivals(rng, spec)
    n = arrivals.size
    units = rng.integers(0, spec.units, n)
    if spec.prompt_sigma > 0:
        mu = np.log(spec.prompt_mean) - spec.prompt_sigma ** 2 / 2
        prompts = rng.lognormal(mu, spec.prompt_sigma, n)
    else:
        prompts = np.full(n, spec.prompt_mean)
    q = spec.token_quantum
    if q > 0:
        prompts = np.maximum(np.rint(prompts / q), 1) * q
        prompts = np.minimum(prompts, spec.max_tokens // q * q)
    prompts = np.clip(np.rint(prompts), spec.prompt_min, spec.max_tokens).astype(np.int64)
    m = spec.reuse_mean
    if m in (0.0, 1.0) or spec.units < 2:
        reuse = np.full(n, m if spec.units >= 2 else 0.0)
    else:
        c = spec.reuse_concentration
        reuse = rng.beta(m * c, (1 - m) * c, n)
        if spec.reuse_quantum > 0:
            reuse = np.rint(reuse / spec.reuse_quantum) * spec.reuse_quantum
    popularity = zipf_weights(spec.units, spec.reuse_skew)
    src_draw = rng.random(n)
    out = []
    for i in range(n):
        u = int(units[i])
        src = None
        if reuse[i] > 0:
            w = popularity.copy()
            w[u] = 0.0
            w /= w.sum()
            src = int(min(np.searchsorted(np.cumsum(w), src_draw[i], side="right"), spec.units - 1))
            if src == u:
                src = int(np.flatnonzero(w)[-1])
        out.append(Request(i, float(arrivals[i]), int(prompts[i]), spec.layers,
                           reuse_fraction=float(reuse[i]), prefill_unit=u, reuse_source=src))
    return out


def load_trace(path, layers, units, max_tokens=8192) -> list:
    """Read ``arrival_s,prompt_tokens,reuse_fraction,source_unit`` rows (optional ``unit``)."""
    out = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            try:
                tokens = int(row["prompt_tokens"])
                frac = float(row["reuse_fraction"])
                src = row.get("source_unit", "")
                src = int(src) if src not in ("", None) else None
                unit = int(row["unit"]) if row.get("unit") not in ("", None) else i % units
                arrival = float(row["arrival_s"])
            except (KeyError, ValueError) as e:
                raise WorkloadError(f"{path}: bad row {i + 1}: {e}") from None
            if tokens > max_tokens:
                raise WorkloadError(f"{path}: row {i + 1} prompt exceeds {max_tokens} tokens")
            if frac > 0 and src is None:
                raise WorkloadError(f"{path}: row {i + 1} has reuse but no source_unit")
            out.append(Request(i, arrival, tokens, layers, reuse_fraction=frac,
                               prefill_unit=unit, reuse_source=src if frac > 0 else None))
    out.sort(key=lambda r: (r.arrival, r.id))
    return [replace(r, id=k) for k, r in enumerate(out)]


class SloOracle:
    """Contention-free TTFT from an isolated run of each request, cached by shape.

    On a star with uniform prefill links every unit looks alike, so the unit
    ids drop out of the cache key.
    """

    def __init__(self, topo, cost: CostModel, max_batch_tokens=8192):
        self.topo = topo
        self.cost = cost
        self.max_batch_tokens = max_batch_tokens
        self.symmetric = topo.kind == "star" and self._uniform_prefill()
        self.cache = {}
        self.runs = 0

    def _uniform_prefill(self):
        hosts = [h for u in self.topo.prefill_units for h in u]
        caps = {self.topo.links[2 * h].capacity for h in hosts} | {self.topo.links[2 * h + 1].capacity for h in hosts}
        return len(caps) == 1

    def _key(self, r):
        dec = r.id % len(self.topo.decode_units) if self.topo.decode_units else -1
        if self.symmetric:
            return (r.prompt_tokens, r.reuse_fraction, r.layer_count, r.reuse_source is not None)
        return (r.prompt_tokens, r.reuse_fraction, r.layer_count, r.prefill_unit, r.reuse_source, dec)

    def ttft_low(self, r: Request) -> float:
        key = self._key(r)
        hit = self.cache.get(key)
        if hit is None:
            hit = self._isolated(r)
            self.cache[key] = hit
        return hit

    def _isolated(self, r):
        sim = Simulator(self.topo, FairShare())
        pipe = PrefillPipeline(sim, self.cost, max_batch_tokens=self.max_batch_tokens)
        solo = replace(r, arrival=0.0, deadline=INF, ttft=None)
        pipe.submit([solo])
        sim.run()
        self.runs += 1
        if solo.ttft is None:
            raise WorkloadError(f"request {r.id} did not finish in isolation")
        return solo.ttft


def derive_slo(r: Request, multiplier: float, oracle: SloOracle) -> float:
    """Absolute deadline: arrival plus ``multiplier`` times the contention-free TTFT."""
    if not multiplier > 0:
        raise WorkloadError("SLO multiplier must be positive")
    return r.arrival + multiplier * oracle.ttft_low(r)


def assign_deadlines(requests, multiplier, oracle):
    return [replace(r, deadline=derive_slo(r, multiplier, oracle)) for r in requests]


def admit_batches(pending, max_batch_tokens=8192) -> list:
    """Pack each unit's FIFO queue into consecutive batches under the token cap."""
    for r in pending:
        if r.prompt_tokens > max_batch_tokens:
            raise WorkloadError(f"request {r.id}: {r.prompt_tokens} tokens exceed cap {max_batch_tokens}")
    by_unit = defaultdict(list)
    for r in pending:
        by_unit[r.prefill_unit].append(r)
    out = []
    for unit in sorted(by_unit):
        cur, tokens = [], 0
        for r in by_unit[unit]:
            if cur and tokens + r.prompt_tokens > max_batch_tokens:
                out.append(Batch(len(out), [x.id for x in cur], cur[0].arrival, unit))
                cur, tokens = [], 0
            cur.append(r)
            tokens += r.prompt_tokens
        if cur:
            out.append(Batch(len(out), [x.id for x in cur], cur[0].arrival, unit))
    return out
