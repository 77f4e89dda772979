"""Defer-and-Promote scheduling over a reverse multi-level queue.

Flows enter low-priority levels and only ever move up. Early-stage flows are
placed by how many layers separate them from the executing layer; P2D flows
by the minimum link share they need to finish on time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from ..core import (ACTIVE, COLLECTIVE, DEFERRED, DONE, EARLY, INF, P2D, REUSE, SCAVENGER, URGENT,
                    Band, Flow, PriorityKey)
from ..inter import BatchInput, inter_scheduling
from .. import _kernels
from .base import Policy, group_classes

TRIGGERS = ("layer-boundary", "periodic-tick")


@dataclass
class RmlqConfig:
    K: int = 8
    E: float = 4.0
    U: float = 0.5

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 2:
            raise ValueError("K must be an integer >= 2")
        self.K = int(self.K)
        if not self.E > 1:
            raise ValueError("E must be > 1")
        if not 0 < self.U <= 1:
            raise ValueError("U must be in (0, 1]")

    @property
    def thresholds(self) -> np.ndarray:
        """Q_1..Q_{K-1}, strictly decreasing."""
        return np.array([float(q) for q in self.thresholds_exact])

    @property
    def thresholds_exact(self) -> list:
        """The same ladder in rational arithmetic, for checks that need exact ratios."""
        u, e = Fraction(self.U), Fraction(self.E)
        return [u / e ** i for i in range(1, self.K)]


def geometric_spacing(u_min, u_max, K):
    """K levels from ``u_min`` to ``u_max`` with equal adjacent ratios."""
    if not 0 < u_min < u_max or K < 2:
        raise ValueError("need 0 < u_min < u_max and K >= 2")
    r = (u_max / u_min) ** (1.0 / (K - 1))
    out = u_min * r ** np.arange(K)
    out[-1] = u_max
    return out


def worst_ratio(levels) -> float:
    levels = np.asarray(levels, np.float64)
    return float(np.max(levels[1:] / levels[:-1]))


# -- MLU ----------------------------------------------------------------------

@dataclass
class MluSample:
    size_rem: float
    time_rem: float
    capacity: float
    rho: float
    value: float
    overdue: bool = False
    link: Optional[int] = None


def mlu_value(size_rem, time_rem, capacity, rho=0.0) -> float:
    if size_rem <= 0:
        return 0.0
    if time_rem <= 0 or rho >= 1 or capacity <= 0:
        return INF
    return size_rem / (time_rem * capacity * (1.0 - rho))


def mlu_to_level(v, cfg: RmlqConfig):
    """Smallest i with v >= Q_i; K when v is below every threshold. Works on arrays."""
    q = cfg.thresholds
    arr = np.asarray(v, np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("MLU must be >= 0")
    level = cfg.K - np.searchsorted(q[::-1], arr, side="right")
    return int(level) if arr.ndim == 0 else level


def _urgent_position(f: Flow) -> PriorityKey:
    """Where ``f`` would sit if it were urgent: flows strictly ahead of this make up rho."""
    return PriorityKey(Band.URGENT_P2D, 1, (f.explicit_deadline, f.release_time, f.id))


def compute_mlu(f: Flow, now, topo, alloc, flows=()) -> MluSample:
    """MLU of a P2D flow against the residual capacity left by urgent traffic ahead of it.

    ``alloc`` is a :class:`RateAllocation`; ``flows`` are the flows it covers.
    The bottleneck is the route link with the least residual capacity.
    """
    from ..alloc import load_fraction

    if f.stage != P2D or f.explicit_deadline is None:
        raise ValueError("MLU is defined for P2D flows with an explicit deadline")
    time_rem = f.explicit_deadline - now
    above = _urgent_position(f)
    best = None
    for lid in topo.route(f.src, f.dst):
        cap = topo.links[lid].capacity
        if not np.isfinite(cap):
            continue
        rho = load_fraction(lid, alloc, above, [g for g in flows if g.id != f.id], topo)
        eff = cap * (1.0 - rho)
        if best is None or eff < best[0]:
            best = (eff, lid, cap, rho)
    if best is None:
        return MluSample(f.remaining, time_rem, INF, 0.0, 0.0)
    _, lid, cap, rho = best
    value = mlu_value(f.remaining, time_rem, cap, rho)
    overdue = time_rem <= 0 and f.remaining > 0
    return MluSample(f.remaining, time_rem, cap, rho, value, overdue, lid)


# -- RLI and keys ----------------------------------------------------------------

@dataclass
class RliValue:
    value: int
    capped_level: int


def rli(target_layer, current_layer, cfg: RmlqConfig) -> RliValue:
    v = max(int(target_layer) - int(current_layer), 0)
    return RliValue(v, min(v, cfg.K - 1))


@dataclass
class MfsContext:
    """Inputs for the object-level API. ``mlu`` maps a flow to its MLU value."""

    cfg: RmlqConfig = field(default_factory=RmlqConfig)
    current_layer: dict = field(default_factory=dict)   # request id -> L_curr
    rank: dict = field(default_factory=dict)            # request id -> inter-request rank
    mlu: Optional[Callable[[Flow], float]] = None


def _natural_key(f: Flow, ctx: MfsContext) -> PriorityKey:
    if f.stage == P2D:
        if ctx.mlu is None:
            raise ValueError("P2D placement needs an MLU source")
        level = mlu_to_level(ctx.mlu(f), ctx.cfg)
        band = Band.URGENT_P2D if level == 1 else Band.DEFERRED_P2D
        return PriorityKey(band, level, (f.explicit_deadline, f.release_time, f.id))
    if f.stage == COLLECTIVE:
        level = 1
    else:
        level = rli(f.target_layer, ctx.current_layer.get(f.request_id, 1), ctx.cfg).capped_level + 1
    return PriorityKey(Band.EARLY, level, (ctx.rank.get(f.request_id, 0), f.release_time, f.id))


def assign_initial_priority(f: Flow, ctx: MfsContext) -> PriorityKey:
    key = _natural_key(f, ctx)
    f.priority = key
    return key


def promote(f: Flow, trigger: str, ctx: MfsContext) -> Optional[PriorityKey]:
    """Raise ``f`` to its recomputed level if that is more urgent; never demote."""
    if trigger not in TRIGGERS:
        raise ValueError(f"unknown promotion trigger {trigger!r}")
    if f.priority is None:
        return assign_initial_priority(f, ctx)
    fresh = _natural_key(f, ctx)
    if fresh.urgency < f.priority.urgency:
        f.promote_to(fresh)
        return fresh
    return None


def arbitrate(flows, pruned=(), request_deadlines=None):
    """Priority classes, most urgent first.

    Flows of ``pruned`` requests go last, ordered by request deadline. Collectives
    keep their place: they gate the whole batch, not just the pruned request.
    """
    if not flows:
        return []
    pruned = set(pruned)
    rd = request_deadlines or {}
    cols = [[], [], [], []]
    for f in flows:
        if f.priority is None:
            raise ValueError(f"flow {f.id} has no priority key")
        if f.request_id in pruned and f.stage != COLLECTIVE:
            dl = rd.get(f.request_id, f.explicit_deadline if f.explicit_deadline is not None else INF)
            row = (SCAVENGER, 0, dl, f.release_time)
        else:
            k = f.priority
            row = (int(k.band), k.level, float(k.tiebreak[0]), f.release_time)
        for c, v in zip(cols, row):
            c.append(v)
    order, starts = group_classes([np.asarray(c) for c in cols])
    return [[flows[i] for i in order[starts[c]:starts[c + 1]]] for c in range(len(starts) - 1)]


# -- engine policy ------------------------------------------------------------------

def _grow(arr, n, fill):
    if n <= arr.shape[0]:
        return arr
    out = np.full(max(n, 2 * arr.shape[0]), fill, dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


class MFS(Policy):
    """Engine binding of the reverse multi-level queue with optional batch pruning."""

    name = "mfs"
    uses_ticks = True

    def __init__(self, cfg: Optional[RmlqConfig] = None, *, drop_budget_frac=0.05,
                 enable_pruning=True):
        if not 0 <= drop_budget_frac <= 1:
            raise ValueError("drop_budget_frac must be in [0, 1]")
        self.cfg = cfg or RmlqConfig()
        self.drop_budget_frac = drop_budget_frac
        self.enable_pruning = enable_pruning
        self.pruned = np.zeros(64, bool)         # by request id
        self.batch_rank = np.zeros(64, np.float64)
        self.pruned_ids = []
        self.promotions = 0
        self.decisions = 0

    # -- level computation -----------------------------------------------------

    def bind(self, sim):
        super().bind(sim)
        self._q_asc = np.ascontiguousarray(self.cfg.thresholds[::-1])

    def _ensure(self, n_requests):
        if n_requests > self.pruned.shape[0]:
            self.pruned = _grow(self.pruned, n_requests, False)

    def _mlu(self, ids, now):
        t = self.sim.table
        act = self.sim.active
        urg = act[t.band[act] == URGENT]
        if urg.size and self.pruned_ids:
            urg = urg[~self.pruned[t.request[urg]]]
        return _kernels.mlu(ids, now, t.remaining, t.deadline, t.release, t.ref_rate, urg, t.rate,
                            t.route_start, t.route_len, t.route_links, t.link_cap,
                            use_numba=self.sim.use_numba)

    def _natural_levels(self, ids, now):
        t = self.sim.table
        st = t.stage[ids]
        lv = np.ones(len(ids), np.int64)
        reuse = st == REUSE
        if reuse.any():
            r = ids[reuse]
            curr = self.sim.context.current_layer(t.request[r])
            lv[reuse] = np.minimum(np.maximum(t.target[r] - curr, 0), self.cfg.K - 1) + 1
        p2d = st == P2D
        if p2d.any():
            lv[p2d] = self.cfg.K - np.searchsorted(self._q_asc, self._mlu(ids[p2d], now), side="right")
        return lv

    def _set_bands(self, ids):
        t = self.sim.table
        p2d = t.stage[ids] == P2D
        t.band[ids] = np.where(p2d, np.where(t.level[ids] == 1, URGENT, DEFERRED),
                               EARLY)

    def on_release(self, ids, now):
        t = self.sim.table
        self._ensure(int(t.request[ids].max()) + 1)
        t.level[ids] = self._natural_levels(ids, now)
        self._set_bands(ids)

    def _promote(self, ids, now) -> bool:
        if len(ids) == 0:
            return False
        t = self.sim.table
        ids = np.asarray(ids, np.int64)
        new = np.minimum(t.level[ids], self._natural_levels(ids, now))
        up = new < t.level[ids]
        if not up.any():
            return False
        moved = ids[up]
        t.level[moved] = new[up]
        self._set_bands(moved)
        self.promotions += int(up.sum())
        return True

    def _candidates(self, request_ids, with_reuse):
        t = self.sim.table
        out = []
        for r in request_ids:
            if r < self.pruned.shape[0] and self.pruned[r]:
                continue
            out.extend(self.sim.flows_of_request.get(int(r), ()))
        if not out:
            return np.zeros(0, np.int64)
        ids = np.asarray(out, np.int64)
        st = t.stage[ids]
        keep = (t.state[ids] == ACTIVE) & (t.level[ids] > 1) & ((st == P2D) | ((st == REUSE) & with_reuse))
        return ids[keep]

    def on_layer_boundary(self, request_ids, now) -> bool:
        return self._promote(self._candidates(request_ids, True), now)

    def on_tick(self, request_id, now) -> bool:
        return self._promote(self._candidates([request_id], False), now)

    def wants_ticks(self, request_id) -> bool:
        if request_id < self.pruned.shape[0] and self.pruned[request_id]:
            return False
        t = self.sim.table
        ids = np.asarray(self.sim.flows_of_request.get(int(request_id), ()), np.int64)
        if ids.size == 0:
            return False
        live = (t.stage[ids] == P2D) & (t.state[ids] != DONE) & (t.level[ids] != 1)
        return bool(live.any())

    # -- inter-request ---------------------------------------------------------

    def on_batch_event(self, now) -> bool:
        """Re-rank in-flight batches and prune under the drop budget."""
        batches = [b for b in self.sim.context.active_batches()]
        if not batches:
            return False
        t = self.sim.table
        self.pruned = _grow(self.pruned, max(max(b.request_ids) for b in batches) + 1, False)
        inflight = [r for b in batches for r in b.request_ids]
        already = sum(1 for r in inflight if self.pruned[r])
        budget = 0
        if self.enable_pruning:
            budget = max(math.ceil(self.drop_budget_frac * len(inflight)) - already, 0)
        loads = self._request_loads(batches)
        inputs = []
        for b in batches:
            live = [r for r in b.request_ids if not self.pruned[r]]
            if not live:
                continue
            inputs.append(BatchInput(b.id, {r: b.deadlines[r] for r in live},
                                     b.remaining_compute(now), b.admit_time))
        if not inputs:
            return False
        dec = inter_scheduling(inputs, loads, budget, now, t.link_cap)
        self.decisions += 1
        self.batch_rank = _grow(self.batch_rank, max(b.id for b in batches) + 1, 0.0)
        changed = False
        for pos, bid in enumerate(dec.sigma):
            if self.batch_rank[bid] != pos:
                self.batch_rank[bid] = pos
                changed = True
        for r in dec.pruned:
            self.pruned[r] = True
            self.pruned_ids.append(int(r))
            changed = True
        return changed

    def _request_loads(self, batches):
        """Outstanding bytes per link for each in-flight request; a batch's collective
        bytes are split over its members by prompt share."""
        t = self.sim.table
        nl = t.n_links
        loads = {}
        for b in batches:
            ids = np.asarray(self.sim.flows_of_batch.get(b.id, ()), np.int64)
            if ids.size:
                ids = ids[t.state[ids] != DONE]
            rids = list(b.request_ids)
            idx = {r: k for k, r in enumerate(rids)}
            mat = np.zeros((len(rids) + 1, nl))
            if ids.size:
                coll = t.stage[ids] == COLLECTIVE
                row = np.array([len(rids) if c else idx[int(r)] for r, c in zip(t.request[ids], coll)],
                               np.int64)
                from .._kernels import _expand
                rows, links, _ = _expand(ids, t.route_start, t.route_len, t.route_links)
                np.add.at(mat, (row[rows], links), t.remaining[ids][rows])
            share = b.token_share()
            for r in rids:
                loads[r] = mat[idx[r]] + share[r] * mat[-1]
        return loads

    def scavenger(self, request_ids) -> np.ndarray:
        r = np.asarray(request_ids, np.int64)
        out = np.zeros(r.shape, bool)
        inside = r < self.pruned.shape[0]
        out[inside] = self.pruned[r[inside]]
        return out

    def classify(self, table, active, now):
        t = table
        keys = _kernels.mfs_keys(active, t.band, t.level, t.batch, self.batch_rank, t.deadline,
                                 t.release, t.request, t.stage, t.req_deadline, self.pruned,
                                 bool(self.pruned_ids), use_numba=self.sim.use_numba)
        return keys, None
