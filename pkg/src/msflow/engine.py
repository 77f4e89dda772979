"""Single-queue discrete-event engine with a fluid, priority-aware network model."""
from __future__ import annotations

import heapq
from collections import defaultdict
from enum import IntEnum

import numpy as np

from . import _kernels
from .core import ACTIVE, DONE, INF, PENDING
from .flowtable import FlowTable
from .topology import SimulationError

DONE_TOL = 1e-9


class EventKind(IntEnum):
    """Event kinds; the value is the tie-break order at equal timestamps."""

    FLOW_COMPLETE = 0
    COMPUTE_COMPLETE = 1
    BATCH_DEPART = 2
    REQUEST_ARRIVAL = 3
    BATCH_ADMIT = 4
    FLOW_RELEASE = 5
    PROMOTION_TICK = 6


class StaticContext:
    """Pipeline stand-in for flow-level scenarios: fixed current layers, no compute."""

    def __init__(self, current_layer=None, compute_finished=()):
        self.layers = dict(current_layer or {})
        self.finished = set(compute_finished)

    def current_layer(self, request_ids):
        return np.array([self.layers.get(int(r), 1) for r in request_ids], np.int64)

    def compute_finished(self, request_id):
        return request_id in self.finished

    def active_batches(self):
        return []


class Simulator:
    """Owns the clock, the event queue and the network state.

    Handlers for pipeline events are registered with :meth:`on`; flow
    completions are broadcast to callables in ``flow_listeners``.
    """

    def __init__(self, topo, policy, *, tick_interval=1e-3, horizon=INF,
                 max_stalled_events=10**6, use_numba=None, record=False):
        if not tick_interval > 0:
            raise ValueError("tick_interval must be positive")
        self.topo = topo
        self.table = FlowTable(topo)
        self.policy = policy
        self.tick_interval = tick_interval
        self.horizon = horizon
        self.max_stalled_events = max_stalled_events
        self.use_numba = use_numba
        self.now = 0.0
        self.active = np.zeros(0, np.int64)
        self.context = StaticContext()
        self.flow_listeners = []
        self.flows_of_request = defaultdict(list)
        self.flows_of_batch = defaultdict(list)
        self.events_processed = 0
        self.recomputes = 0
        self.record = record
        self.trace = []
        self._heap = []
        self._seq = 0
        self._epoch = 0
        self._dirty = False
        self._handlers = {
            EventKind.FLOW_COMPLETE: self._on_flow_complete,
            EventKind.FLOW_RELEASE: self._on_flow_release,
            EventKind.PROMOTION_TICK: self._on_tick,
        }
        policy.bind(self)

    # -- scheduling ------------------------------------------------------------

    def on(self, kind, handler):
        self._handlers[EventKind(kind)] = handler

    def schedule(self, time, kind, payload=None):
        if time < self.now:
            raise SimulationError(f"event {EventKind(kind).name} at {time} is before now={self.now}")
        self._seq += 1
        heapq.heappush(self._heap, (time, int(kind), self._seq, payload))

    def mark_dirty(self):
        self._dirty = True

    # -- flows -------------------------------------------------------------------

    def add_flows(self, flows, req_deadline=None):
        ids = self.table.add(flows, req_deadline)
        req = self.table.request
        bat = self.table.batch
        for i in ids:
            self.flows_of_request[int(req[i])].append(int(i))
            if bat[i] >= 0:
                self.flows_of_batch[int(bat[i])].append(int(i))
        return ids

    def release(self, ids):
        """Activate pending flows now. Flows with nothing to constrain them finish instantly."""
        ids = np.asarray(ids, np.int64)
        if ids.size == 0:
            return
        t = self.table
        if np.any(t.state[ids] != PENDING):
            raise SimulationError("release of a flow that is not pending")
        t.release[ids] = self.now
        t.state[ids] = ACTIVE
        self.policy.on_release(ids, self.now)
        instant = (t.route_len[ids] == 0) | (t.remaining[ids] <= 0)
        self.active = np.concatenate([self.active, ids[~instant]])
        self._dirty = True
        if self.record:
            self.trace.append((self.now, "release", tuple(int(i) for i in ids)))
        if instant.any():
            self._complete(ids[instant])

    def schedule_releases(self, ids_by_time):
        for time, ids in sorted(ids_by_time.items()):
            self.schedule(time, EventKind.FLOW_RELEASE, np.asarray(ids, np.int64))

    def schedule_promotion_ticks(self, request_id, interval=None):
        """Recurring ticks for a request whose compute has finished."""
        dt = self.tick_interval if interval is None else interval
        if not dt > 0:
            raise ValueError("tick interval must be positive")
        self.schedule(self.now + dt, EventKind.PROMOTION_TICK, (request_id, dt))

    def completion_times(self):
        """Projected completion time of every active flow (``inf`` when stalled)."""
        return {int(i): float(self.table.eta[i]) for i in self.active}

    def rates(self):
        return {int(i): float(self.table.rate[i]) for i in self.active}

    def _complete(self, ids):
        t = self.table
        left = t.remaining[ids]
        if np.any(left > DONE_TOL * np.maximum(t.size[ids], 1e-300) + 1e-12):
            raise SimulationError(f"flow completed with {left.max()} bytes outstanding")
        t.remaining[ids] = 0.0
        t.rate[ids] = 0.0
        t.eta[ids] = INF
        t.state[ids] = DONE
        t.done_time[ids] = self.now
        self._dirty = True
        if self.record:
            self.trace.append((self.now, "complete", tuple(int(i) for i in ids)))
        for fn in self.flow_listeners:
            fn(ids, self.now)

    # -- event handlers -------------------------------------------------------------

    def _on_flow_complete(self, epoch):
        if epoch != self._epoch or self.active.size == 0:
            return
        t = self.table
        act = self.active
        done = (t.eta[act] <= self.now) | (t.remaining[act] <= DONE_TOL * t.size[act])
        if not done.any():
            return
        self.active = act[~done]
        self._complete(act[done])

    def _on_flow_release(self, ids):
        self.release(ids)

    def _on_tick(self, payload):
        request_id, dt = payload
        if self.policy.on_tick(request_id, self.now):
            self._dirty = True
        if self.record:
            self.trace.append((self.now, "tick", request_id))
        if self.policy.wants_ticks(request_id):
            self.schedule(self.now + dt, EventKind.PROMOTION_TICK, payload)

    # -- network ----------------------------------------------------------------------

    def _advance(self, time):
        dt = time - self.now
        act = self.active
        if act.size and dt > 0:
            t = self.table
            rem = t.remaining[act] - t.rate[act] * dt
            t.remaining[act] = np.maximum(rem, 0.0)
        self.now = time

    def on_rate_change(self):
        """Recompute the allocation and every active flow's projected completion."""
        self._dirty = False
        self.recomputes += 1
        self._epoch += 1
        act = self.active
        if act.size == 0:
            return
        t = self.table
        keys, caps = self.policy.classify(t, act, self.now)
        keys = np.asarray(keys, dtype=np.float64).reshape(-1, act.size)
        caps = np.full(act.size, INF) if caps is None else np.asarray(caps, np.float64)
        nxt = _kernels.allocate_into(keys, act, caps, t.route_start, t.route_len, t.route_links,
                                     t.link_cap, t.remaining, t.rate, t.eta, self.now,
                                     use_numba=self.use_numba)
        if np.isfinite(nxt):
            self.schedule(max(nxt, self.now), EventKind.FLOW_COMPLETE, self._epoch)
        if self.record:
            self.trace.append((self.now, "rates", {int(f): float(t.rate[f]) for f in act}))

    # -- main loop ----------------------------------------------------------------------

    def run(self):
        stalled = 0
        heap = self._heap
        while heap:
            time = heap[0][0]
            if time > self.horizon:
                break
            if time > self.now:
                self._advance(time)
                stalled = 0
            else:
                stalled += 1
                if stalled > self.max_stalled_events:
                    raise SimulationError(
                        f"livelock: {stalled} events at t={self.now} without time advancing")
            _, kind, _, payload = heapq.heappop(heap)
            self.events_processed += 1
            self._handlers[kind](payload)
            if self._dirty and (not heap or heap[0][0] > self.now):
                self.on_rate_change()
        return self


def run_flow_scenario(topo, policy, flows, *, context=None, tick_requests=(), tick_interval=1.0,
                      req_deadlines=None, record=False):
    """Run bare flows (no compute pipeline) to quiescence; returns the simulator.

    ``flows`` carry their own release times. ``tick_requests`` get promotion
    ticks from t=0 as if their compute had already finished.
    """
    sim = Simulator(topo, policy, tick_interval=tick_interval, record=record)
    if context is not None:
        sim.context = context
    rd = None
    if req_deadlines is not None:
        rd = np.array([req_deadlines.get(f.request_id, INF) for f in flows])
    ids = sim.add_flows(flows, rd)
    by_time = defaultdict(list)
    for f, i in zip(flows, ids):
        by_time[f.release_time].append(i)
    sim.schedule_releases(by_time)
    for r in tick_requests:
        sim.schedule_promotion_ticks(r)
    return sim.run()
