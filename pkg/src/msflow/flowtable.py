"""Column store holding every flow of a run; the engine's authoritative flow state."""
from __future__ import annotations

import numpy as np

from .core import INF, Band, Flow, FlowState, PriorityKey, Stage
from . import _kernels

_COLUMNS = {
    "request": np.int64,
    "batch": np.int64,
    "coflow": np.int64,
    "stage": np.int8,
    "src": np.int64,
    "dst": np.int64,
    "size": np.float64,
    "remaining": np.float64,
    "release": np.float64,
    "deadline": np.float64,
    "req_deadline": np.float64,
    "target": np.int64,
    "band": np.int8,
    "level": np.int64,
    "state": np.int8,
    "rate": np.float64,
    "eta": np.float64,
    "done_time": np.float64,
    "route_start": np.int64,
    "route_len": np.int64,
    "ref_rate": np.float64,
}


class FlowTable:
    """Struct-of-arrays flow storage indexed by flow id (ids are row numbers).

    Routes are packed CSR-style into ``route_links``; only finite-capacity
    links are stored, so uncapacitated hops never constrain a flow.
    """

    def __init__(self, topo, capacity: int = 1024):
        self.topo = topo
        self.n = 0
        self.link_cap = np.array(topo.capacities, dtype=np.float64)
        self.n_links = self.link_cap.shape[0]
        for name, dt in _COLUMNS.items():
            setattr(self, name, np.zeros(capacity, dtype=dt))
        self.route_links = np.zeros(4 * capacity, dtype=np.int64)
        self.n_route = 0
        self._route_cache = {}

    def _grow(self, need):
        cap = self.size.shape[0]
        if need > cap:
            new = max(need, 2 * cap)
            for name in _COLUMNS:
                old = getattr(self, name)
                arr = np.zeros(new, dtype=old.dtype)
                arr[: self.n] = old[: self.n]
                setattr(self, name, arr)

    def _finite_route(self, src, dst):
        key = (src, dst)
        hit = self._route_cache.get(key)
        if hit is None:
            path = [l for l in self.topo.route(src, dst) if np.isfinite(self.link_cap[l])]
            ref = min((self.link_cap[l] for l in path), default=INF)
            hit = (path, ref)
            self._route_cache[key] = hit
        return hit

    def add(self, flows, req_deadline=None) -> np.ndarray:
        """Append ``flows`` (their ids must continue the table's numbering)."""
        k = len(flows)
        start = self.n
        self._grow(start + k)
        for off, f in enumerate(flows):
            if f.id != start + off:
                raise ValueError(f"flow id {f.id} out of sequence (expected {start + off})")
        rows = slice(start, start + k)
        self.request[rows] = [f.request_id for f in flows]
        self.batch[rows] = [-1 if f.batch_id is None else f.batch_id for f in flows]
        self.coflow[rows] = [-1 if f.coflow_id is None else f.coflow_id for f in flows]
        self.stage[rows] = [int(f.stage) for f in flows]
        self.src[rows] = [f.src for f in flows]
        self.dst[rows] = [f.dst for f in flows]
        self.size[rows] = [f.size for f in flows]
        self.remaining[rows] = [f.remaining for f in flows]
        self.release[rows] = [f.release_time for f in flows]
        self.deadline[rows] = [INF if f.explicit_deadline is None else f.explicit_deadline for f in flows]
        if req_deadline is None:
            self.req_deadline[rows] = self.deadline[rows]
        else:
            self.req_deadline[rows] = req_deadline
        self.target[rows] = [f.target_layer for f in flows]
        self.band[rows] = int(Band.EARLY)
        self.level[rows] = 0
        self.state[rows] = [int(f.state) for f in flows]
        self.rate[rows] = 0.0
        self.eta[rows] = INF
        self.done_time[rows] = INF
        for i, f in enumerate(flows, start):
            path, ref = self._finite_route(f.src, f.dst)
            ln = len(path)
            if self.n_route + ln > self.route_links.shape[0]:
                grown = np.zeros(max(2 * self.route_links.shape[0], self.n_route + ln), np.int64)
                grown[: self.n_route] = self.route_links[: self.n_route]
                self.route_links = grown
            self.route_links[self.n_route: self.n_route + ln] = path
            self.route_start[i] = self.n_route
            self.route_len[i] = ln
            self.ref_rate[i] = ref
            self.n_route += ln
        self.n = start + k
        return np.arange(start, start + k)

    # -- queries -------------------------------------------------------------

    def link_load(self, flows, weights) -> np.ndarray:
        return _kernels.link_load(np.asarray(flows, np.int64), weights, self.route_start,
                                  self.route_len, self.route_links, self.n_links)

    def routes_of(self, i) -> np.ndarray:
        s = self.route_start[i]
        return self.route_links[s: s + self.route_len[i]]

    def key_of(self, i, rank=0) -> PriorityKey:
        return PriorityKey(Band(int(self.band[i])), int(self.level[i]), (rank, float(self.release[i]), int(i)))

    def snapshot(self, i) -> Flow:
        """Materialize row ``i`` as a :class:`Flow` value."""
        dl = self.deadline[i]
        f = Flow(
            id=int(i), request_id=int(self.request[i]), stage=Stage(int(self.stage[i])),
            src=int(self.src[i]), dst=int(self.dst[i]), size=float(self.size[i]),
            release_time=float(self.release[i]),
            explicit_deadline=float(dl) if self.stage[i] == Stage.P2D else None,
            target_layer=int(self.target[i]),
            coflow_id=None if self.coflow[i] < 0 else int(self.coflow[i]),
            batch_id=None if self.batch[i] < 0 else int(self.batch[i]),
            remaining=float(self.remaining[i]), state=FlowState(int(self.state[i])),
        )
        if self.level[i] > 0:
            f.priority = self.key_of(i)
        return f
