"""Inter-request scheduling: batch ordering by robust effective deadline, feasibility
estimation and selective pruning under a drop budget."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import INF


@dataclass
class RedScore:
    k_star: int
    tight_set: list
    loose_set: list
    f: float
    d_tight_min: float
    d_loose_min: float
    red: float


def red_score(deadlines, ids=None) -> RedScore:
    """Split a batch at its largest deadline gap and blend the two sub-batch minima.

    ``k_star`` is the number of requests in the tight set. When the batch has
    a single request or all deadlines are equal the whole batch is tight.
    """
    d = np.asarray(deadlines, dtype=np.float64)
    if d.size == 0:
        raise ValueError("red_score needs at least one deadline")
    ids = list(range(d.size)) if ids is None else list(ids)
    order = sorted(range(d.size), key=lambda i: (d[i], ids[i]))
    ds = d[order]
    gaps = np.diff(ds)
    if gaps.size == 0 or gaps.max() <= 0:
        return RedScore(d.size, [ids[i] for i in order], [], 1.0, ds[0], ds[0], float(ds[0]))
    k = int(np.argmax(gaps)) + 1
    f = k / d.size
    red = f * ds[0] + (1.0 - f) * ds[k]
    return RedScore(k, [ids[i] for i in order[:k]], [ids[i] for i in order[k:]], f,
                    float(ds[0]), float(ds[k]), float(red))


def _ratios(S, L, bw):
    load = np.asarray(S, np.float64) + np.asarray(L, np.float64)
    bw = np.asarray(bw, np.float64)
    out = np.zeros(load.shape)
    pos = load > 0
    with np.errstate(divide="ignore"):
        out[pos] = np.where(bw[pos] > 0, load[pos] / np.where(bw[pos] > 0, bw[pos], 1.0), INF)
    return out


def est_finish_time(now, comp, S, L, bw):
    """Worst-case finish: compute time plus the bottleneck port's drain time.

    Returns ``(F_hat, u_star)`` with ``u_star`` a 0-based port index.
    """
    r = _ratios(S, L, bw)
    if r.size == 0:
        return now + comp, -1
    u = int(np.argmax(r))
    return now + comp + r[u], u


@dataclass
class BatchInput:
    id: int
    deadlines: dict          # request id -> absolute deadline
    comp: float              # remaining compute time
    admit_time: float = 0.0


@dataclass
class ScheduleDecision:
    sigma: list
    pruned: list
    drop_budget: int
    red: dict = field(default_factory=dict)
    f_hat: dict = field(default_factory=dict)
    trace: Optional[list] = None


def inter_scheduling(batches, loads, drop_budget, now, bw, record=False) -> ScheduleDecision:
    """Order batches by RED and prune the heaviest requests on each infeasible batch's
    bottleneck port until its estimate meets the loose-set deadline.

    ``loads`` maps request id to a per-port byte vector; ``bw`` holds port
    bandwidths. Pruning stops early when the bottleneck carries no load, since
    removing requests can no longer move the estimate.
    """
    if drop_budget < 0:
        raise ValueError("drop_budget must be >= 0")
    bw = np.asarray(bw, np.float64)
    reds = {}
    for b in batches:
        rids = list(b.deadlines)
        reds[b.id] = red_score([b.deadlines[r] for r in rids], rids)
    sigma = sorted(batches, key=lambda b: (reds[b.id].red, b.admit_time, b.id))
    S = np.zeros(bw.shape)
    pool = []
    pruned = []
    f_hat = {}
    trace = [] if record else None
    for b in sigma:
        members = sorted(b.deadlines)
        for r in members:
            if r not in loads:
                raise KeyError(f"no traffic vector for request {r}")
        pool.extend(members)
        mine = set(members)
        L = np.zeros(bw.shape)
        for r in members:
            L += loads[r]
        F, u = est_finish_time(now, b.comp, S, L, bw)
        target = reds[b.id].d_loose_min
        while F > target and len(pruned) < drop_budget and pool:
            ratios = _ratios(S, L, bw)
            u = int(np.argmax(ratios))
            if ratios[u] <= 0:
                break
            victim = max(pool, key=lambda r: (loads[r][u], -r))
            if loads[victim][u] <= 0:
                break
            pruned.append(victim)
            pool.remove(victim)
            if victim in mine:
                L = np.maximum(L - loads[victim], 0.0)
            else:
                S = np.maximum(S - loads[victim], 0.0)
            F_new, _ = est_finish_time(now, b.comp, S, L, bw)
            if trace is not None:
                trace.append((b.id, victim, u, F, F_new))
            F = F_new
        f_hat[b.id] = F
        S = S + L
    return ScheduleDecision([b.id for b in sigma], pruned, drop_budget,
                            {k: v.red for k, v in reds.items()}, f_hat, trace)


def scavenger_service(flows, request_deadlines=None):
    """Order pruned flows by their request's original deadline; served from residual capacity."""
    from .policies.base import classes_from_keys, columns_from_flows   # policies import this module

    if not flows:
        return []
    c = columns_from_flows(flows, request_deadlines)
    return classes_from_keys(flows, [c.req_deadline, c.release])
