"""Layered prefill execution: per-layer flow bundles, dependency gating, compute timing,
TTFT and stall bookkeeping."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import COLLECTIVE, INF, P2D, REUSE, Batch, Flow, MsFlowLayer, Request, Stage
from .engine import EventKind, Simulator
from .topology import SimulationError


class WorkloadError(ValueError):
    pass


@dataclass
class CostModel:
    alpha: float = 1.0          # per-layer fixed compute time
    beta: float = 0.0           # compute time per batched token
    kappa_r: float = 0.0        # reuse bytes per token per layer
    kappa_p: float = 0.0        # P2D bytes per token per layer
    kappa_c: float = 0.0        # collective bytes per token per layer

    def __post_init__(self):
        for k in ("alpha", "beta", "kappa_r", "kappa_p", "kappa_c"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")
        if self.alpha <= 0 and self.beta <= 0:
            raise ValueError("compute cost must be positive")

    def layer_time(self, batch_tokens: int) -> float:
        c = self.alpha + self.beta * batch_tokens
        if not c > 0:
            raise ValueError("compute cost must be positive")
        return c


@dataclass
class FlowSpec:
    """Hand-written flow for scenario plans; ``layer`` is the target (reuse) or producing layer."""

    stage: Stage
    layer: int
    size: float
    src: int
    dst: int
    request_id: Optional[int] = None
    deadline: Optional[float] = None


class _Ids:
    def __init__(self, start=0):
        self.next = start

    def take(self):
        i = self.next
        self.next += 1
        return i


def build_msflows(r: Request, batch: Batch, cost: CostModel, topo, next_id=0) -> list:
    """Per-layer reuse and P2D flows for ``r``; collectives are built per batch.

    Reuse is pulled from ``r.reuse_source`` into ``r``'s unit; P2D goes to the
    decode unit ``r.id mod #decode units``. Host ``(l-1) mod hosts`` serves layer l.
    """
    if r.reuse_fraction > 0 and r.reuse_source is None:
        raise WorkloadError(f"request {r.id}: reuse_fraction > 0 but no reuse_source")
    ids = next_id if isinstance(next_id, _Ids) else _Ids(next_id)
    own = topo.prefill_units[r.prefill_unit]
    dec = topo.decode_units[r.id % len(topo.decode_units)] if topo.decode_units else own
    reuse_size = r.reuse_fraction * r.prompt_tokens * cost.kappa_r
    p2d_size = r.prompt_tokens * cost.kappa_p
    out = []
    for l in range(1, r.layer_count + 1):
        layer = MsFlowLayer(l)
        host = own[(l - 1) % len(own)]
        if reuse_size > 0:
            src_hosts = topo.prefill_units[r.reuse_source]
            layer.reuse_flows.append(Flow(ids.take(), r.id, REUSE, src_hosts[(l - 1) % len(src_hosts)],
                                          host, reuse_size, batch.admit_time, None, l,
                                          batch_id=batch.id))
        if p2d_size > 0:
            layer.p2d_flows.append(Flow(ids.take(), r.id, P2D, host, dec[(l - 1) % len(dec)],
                                        p2d_size, batch.admit_time, r.deadline, l, batch_id=batch.id))
        out.append(layer)
    return out


def build_collectives(batch: Batch, batch_tokens: int, layers: int, cost: CostModel, hosts,
                      next_id=0, coflow_base=0) -> dict:
    """One coflow per layer with a flow for every ordered host pair of the unit."""
    ids = next_id if isinstance(next_id, _Ids) else _Ids(next_id)
    size = batch_tokens * cost.kappa_c
    out = {}
    if size <= 0 or len(hosts) < 2:
        return out
    owner = batch.request_ids[0]
    for l in range(1, layers + 1):
        cid = coflow_base + l - 1
        out[l] = [Flow(ids.take(), owner, COLLECTIVE, a, b, size, batch.admit_time, None, l,
                       coflow_id=cid, batch_id=batch.id)
                  for a in hosts for b in hosts if a != b]
    return out


@dataclass
class BatchRun:
    """Runtime state of one admitted batch."""

    batch: Batch
    requests: list
    costs: list
    layers: int
    tokens: dict
    deadlines: dict
    compute_done: list = field(default_factory=list)
    coll_left: list = field(default_factory=list)        # outstanding collective flows per layer
    coll_release: list = field(default_factory=list)
    coll_finish: list = field(default_factory=list)
    reuse_left: list = field(default_factory=list)       # outstanding reuse flows per target layer
    p2d_by_layer: dict = field(default_factory=dict)
    coll_by_layer: dict = field(default_factory=dict)
    layer_start: list = field(default_factory=list)
    layer_end: list = field(default_factory=list)
    curr: int = 1
    computing: int = 0
    finished_compute: bool = False

    @property
    def id(self):
        return self.batch.id

    @property
    def request_ids(self):
        return self.batch.request_ids

    @property
    def admit_time(self):
        return self.batch.admit_time

    def token_share(self):
        total = sum(self.tokens.values())
        if total <= 0:
            n = len(self.tokens)
            return {r: 1.0 / n for r in self.tokens}
        return {r: v / total for r, v in self.tokens.items()}

    def remaining_compute(self, now) -> float:
        rest = 0.0
        for l in range(1, self.layers + 1):
            if self.compute_done[l]:
                continue
            if l == self.computing:
                rest += max(self.layer_start[l] + self.costs[l - 1] - now, 0.0)
            else:
                rest += self.costs[l - 1]
        return rest

    def layer_is_done(self, l) -> bool:
        return self.compute_done[l] and self.coll_left[l] == 0


class PrefillPipeline:
    """Drives batches through layers on top of a :class:`Simulator`.

    The pipeline is also the simulator's context: policies read current
    layers and in-flight batches from it.
    """

    def __init__(self, sim: Simulator, cost: CostModel, *, max_batch_tokens=8192,
                 hosts_per_collective=None, n_units=None):
        self.sim = sim
        self.topo = sim.topo
        self.cost = cost
        self.max_batch_tokens = max_batch_tokens
        self.requests = {}
        self.runs = {}
        self.active = {}                 # batch id -> BatchRun, admission order
        self.req_batch = {}
        self.req_left = {}               # request id -> outstanding own flows
        self.req_layer = np.ones(64, np.int64)
        self.queues = {}
        self.busy = {}
        self.n_batches = 0
        self.n_coflows = 0
        self.collectives = []            # (batch id, layer, release, finish)
        self.finished = []
        sim.context = self
        sim.flow_listeners.append(self._on_flows_done)
        sim.on(EventKind.REQUEST_ARRIVAL, self._on_arrival)
        sim.on(EventKind.BATCH_ADMIT, self._on_admit)
        sim.on(EventKind.COMPUTE_COMPLETE, self._on_compute)
        sim.on(EventKind.BATCH_DEPART, self._on_depart)

    # -- context interface ------------------------------------------------------

    def current_layer(self, request_ids):
        r = np.asarray(request_ids, np.int64)
        out = np.ones(r.shape, np.int64)
        inside = r < self.req_layer.shape[0]
        out[inside] = self.req_layer[r[inside]]
        return out

    def compute_finished(self, request_id):
        b = self.req_batch.get(request_id)
        return b is not None and self.runs[b].finished_compute

    def active_batches(self):
        return list(self.active.values())

    # -- submission ---------------------------------------------------------------

    def submit(self, requests):
        """Queue arrivals; batches form per prefill unit in FIFO order."""
        for r in requests:
            if r.prompt_tokens > self.max_batch_tokens:
                raise WorkloadError(f"request {r.id}: {r.prompt_tokens} tokens exceed batch cap "
                                    f"{self.max_batch_tokens}")
            if r.reuse_fraction > 0 and r.reuse_source is None:
                raise WorkloadError(f"request {r.id}: reuse_fraction > 0 but no reuse_source")
            self.requests[r.id] = r
            self.sim.schedule(r.arrival, EventKind.REQUEST_ARRIVAL, r.id)

    def run_plan(self, request: Request, plan, costs=None, admit_time=None):
        """Admit ``request`` alone with hand-written flows (scenario replays)."""
        self.requests[request.id] = request
        t = request.arrival if admit_time is None else admit_time
        self.sim.schedule(t, EventKind.BATCH_ADMIT, ([request.id], list(plan), costs))

    def _on_arrival(self, rid):
        r = self.requests[rid]
        q = self.queues.setdefault(r.prefill_unit, deque())
        q.append(rid)
        if not self.busy.get(r.prefill_unit):
            self.busy[r.prefill_unit] = True
            self.sim.schedule(self.sim.now, EventKind.BATCH_ADMIT, r.prefill_unit)

    def _take_batch(self, unit):
        q = self.queues.get(unit)
        if not q:
            return []
        out, tokens = [], 0
        while q and tokens + self.requests[q[0]].prompt_tokens <= self.max_batch_tokens:
            rid = q.popleft()
            tokens += self.requests[rid].prompt_tokens
            out.append(rid)
        return out

    # -- admission ----------------------------------------------------------------

    def _on_admit(self, payload):
        if isinstance(payload, tuple):
            rids, plan, costs = payload
        else:
            rids = self._take_batch(payload)
            plan, costs = None, None
            if not rids:
                self.busy[payload] = False
                return
        self._admit(rids, plan, costs)

    def _admit(self, rids, plan=None, costs=None):
        sim = self.sim
        now = sim.now
        reqs = [self.requests[r] for r in rids]
        L = reqs[0].layer_count
        if any(r.layer_count != L for r in reqs):
            raise WorkloadError("requests in one batch must have the same layer count")
        bid = self.n_batches
        self.n_batches += 1
        unit = reqs[0].prefill_unit
        batch = Batch(bid, list(rids), now, unit)
        tokens = {r.id: r.prompt_tokens for r in reqs}
        btok = sum(tokens.values())
        if costs is None:
            if reqs[0].compute_costs and len(reqs) == 1:
                costs = list(reqs[0].compute_costs)
            else:
                costs = [self.cost.layer_time(btok)] * L
        if len(costs) != L or min(costs) <= 0:
            raise WorkloadError("need one positive compute cost per layer")
        run = BatchRun(batch, reqs, list(costs), L, tokens, {r.id: r.deadline for r in reqs},
                       compute_done=[True] + [False] * L, coll_left=[0] * (L + 1),
                       coll_release=[INF] * (L + 1), coll_finish=[INF] * (L + 1),
                       reuse_left=[0] * (L + 2), layer_start=[INF] * (L + 1),
                       layer_end=[INF] * (L + 1))
        self.runs[bid] = run
        self.active[bid] = run
        grow = max(rids) + 1
        if grow > self.req_layer.shape[0]:
            self.req_layer = np.concatenate([self.req_layer, np.ones(max(grow, self.req_layer.shape[0]), np.int64)])
        for r in rids:
            self.req_batch[r] = bid
            self.req_layer[r] = 1
            self.req_left[r] = 0

        ids = _Ids(sim.table.n)
        reuse, p2d, coll = [], {}, {}
        if plan is None:
            for r in reqs:
                for layer in build_msflows(r, batch, self.cost, self.topo, ids):
                    reuse.extend(layer.reuse_flows)
                    p2d.setdefault(layer.layer_index, []).extend(layer.p2d_flows)
            coll = build_collectives(batch, btok, L, self.cost, self.topo.prefill_units[unit], ids,
                                     self.n_coflows)
        else:
            owner = rids[0]
            for s in plan:
                stage = Stage(s.stage)
                rid = owner if s.request_id is None else s.request_id
                if not 1 <= s.layer <= L:
                    raise WorkloadError(f"flow layer {s.layer} outside 1..{L}")
                dl = (s.deadline if s.deadline is not None else self.requests[rid].deadline) \
                    if stage == P2D else None
                f = Flow(ids.take(), rid, stage, s.src, s.dst, s.size, now, dl, s.layer,
                         coflow_id=self.n_coflows + s.layer - 1 if stage == COLLECTIVE else None,
                         batch_id=bid)
                if stage == REUSE:
                    reuse.append(f)
                elif stage == P2D:
                    p2d.setdefault(s.layer, []).append(f)
                else:
                    coll.setdefault(s.layer, []).append(f)
        self.n_coflows += L
        flows = reuse + [f for l in sorted(p2d) for f in p2d[l]] + [f for l in sorted(coll) for f in coll[l]]
        flows.sort(key=lambda f: f.id)
        batch_dl = min(run.deadlines.values())
        rd = np.array([batch_dl if f.stage == COLLECTIVE else run.deadlines[f.request_id]
                       for f in flows])
        if flows:
            sim.add_flows(flows, rd)
        for f in reuse:
            run.reuse_left[f.target_layer] += 1
            self.req_left[f.request_id] += 1
        for l, fs in p2d.items():
            run.p2d_by_layer[l] = [f.id for f in fs]
            for f in fs:
                self.req_left[f.request_id] += 1
        for l, fs in coll.items():
            run.coll_by_layer[l] = [f.id for f in fs]
            run.coll_left[l] = len(fs)
        if reuse:
            sim.release([f.id for f in reuse])
        self._maybe_start(run)
        if sim.policy.on_batch_event(now):
            sim.mark_dirty()

    # -- progress -------------------------------------------------------------------

    def _maybe_start(self, run: BatchRun):
        nxt = run.curr
        if run.computing or nxt > run.layers or run.compute_done[nxt]:
            return
        if nxt > 1 and not run.layer_is_done(nxt - 1):
            return
        if run.reuse_left[nxt]:
            return
        run.computing = nxt
        run.layer_start[nxt] = self.sim.now
        self.sim.schedule(self.sim.now + run.costs[nxt - 1], EventKind.COMPUTE_COMPLETE, (run.id, nxt))

    def _on_compute(self, payload):
        bid, l = payload
        run = self.runs[bid]
        if run.computing != l:
            raise SimulationError(f"batch {bid}: compute completion for layer {l} out of order")
        run.computing = 0
        run.compute_done[l] = True
        now = self.sim.now
        coll = run.coll_by_layer.get(l, ())
        if coll:
            run.coll_release[l] = now
            self.sim.release(coll)
        p2d = run.p2d_by_layer.get(l, ())
        if p2d:
            self.sim.release(p2d)
        if l == run.layers:
            run.finished_compute = True
            if self.sim.policy.uses_ticks:
                for r in run.request_ids:
                    if self.sim.policy.wants_ticks(r):
                        self.sim.schedule_promotion_ticks(r)
        self._check_layer(run)

    def _check_layer(self, run: BatchRun):
        advanced = False
        while run.curr <= run.layers and run.layer_is_done(run.curr):
            run.layer_end[run.curr] = self.sim.now
            run.curr += 1
            advanced = True
        if advanced:
            for r in run.request_ids:
                self.req_layer[r] = run.curr
            if run.curr > run.layers:
                self._free_unit(run)
                for r in run.request_ids:
                    self._maybe_finish(r)
            else:
                if self.sim.policy.on_layer_boundary(run.request_ids, self.sim.now):
                    self.sim.mark_dirty()
        self._maybe_start(run)

    def _free_unit(self, run):
        unit = run.batch.prefill_unit
        if unit in self.busy:
            self.sim.schedule(self.sim.now, EventKind.BATCH_ADMIT, unit)

    def _on_flows_done(self, ids, now):
        t = self.sim.table
        touched = {}
        for i in ids:
            st = t.stage[i]
            b = int(t.batch[i])
            if b < 0:
                continue
            run = self.runs[b]
            if st == COLLECTIVE:
                l = int(t.target[i])
                run.coll_left[l] -= 1
                if run.coll_left[l] == 0:
                    run.coll_finish[l] = now
                    self.collectives.append((b, l, run.coll_release[l], now))
                touched[b] = run
            else:
                r = int(t.request[i])
                self.req_left[r] -= 1
                if st == REUSE:
                    run.reuse_left[int(t.target[i])] -= 1
                    touched[b] = run
                else:
                    self._maybe_finish(r)
        for run in touched.values():
            self._check_layer(run)

    def _maybe_finish(self, rid):
        run = self.runs[self.req_batch[rid]]
        r = self.requests[rid]
        if r.ttft is not None or self.req_left[rid] or run.curr <= run.layers:
            return
        r.ttft = self.sim.now - r.arrival
        self.finished.append(rid)
        if all(self.requests[x].ttft is not None for x in run.request_ids):
            self.sim.schedule(self.sim.now, EventKind.BATCH_DEPART, run.id)

    def _on_depart(self, bid):
        self.active.pop(bid, None)
        if self.sim.policy.on_batch_event(self.sim.now):
            self.sim.mark_dirty()

    # -- accounting ---------------------------------------------------------------

    def stall_accounting(self, rid) -> dict:
        """Non-overlapped time per collective layer of the request's batch.

        Compute is batch-synchronous and a layer cannot start before its
        predecessor's collective ends, so each collective's stall is its full
        completion time.
        """
        run = self.runs[self.req_batch[rid]]
        return {l: run.coll_finish[l] - run.coll_release[l]
                for l in run.coll_by_layer if np.isfinite(run.coll_finish[l])}

    def stall_total(self, rid) -> float:
        return float(sum(self.stall_accounting(rid).values()))
