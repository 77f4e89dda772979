"""Object-level front end to the progressive-filling allocator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import INF, PriorityKey
from .topology import SimulationError


@dataclass
class RateAllocation:
    rates: dict = field(default_factory=dict)      # flow id -> bytes/s
    valid_from: float = 0.0
    keys: dict = field(default_factory=dict)       # flow id -> PriorityKey (when classes carry one)

    def rate(self, flow_id) -> float:
        return self.rates.get(flow_id, 0.0)


def _pack(flows, topo):
    lens = np.zeros(len(flows), np.int64)
    links = []
    for i, f in enumerate(flows):
        path = topo.route(f.src, f.dst)
        if path is None:
            raise SimulationError(f"flow {f.id} has no route {f.src}->{f.dst}")
        path = [l for l in path if np.isfinite(topo.links[l].capacity)]
        lens[i] = len(path)
        links.extend(path)
    starts = np.cumsum(lens) - lens
    return starts, lens, np.asarray(links, np.int64)


def allocate_rates(flows, topo, policy_order, rate_caps=None, now=0.0) -> RateAllocation:
    """Strict priority across ``policy_order`` classes, max-min within each.

    ``policy_order`` is a list of lists of flows partitioning ``flows``.
    ``rate_caps`` maps flow id to an upper bound on its rate.
    """
    flows = list(flows)
    pos = {f.id: i for i, f in enumerate(flows)}
    if len(pos) != len(flows):
        raise ValueError("duplicate flow ids")
    seen = [f.id for cls in policy_order for f in cls]
    if sorted(seen) != sorted(pos):
        raise ValueError("policy_order must partition the flow set")
    rate_caps = rate_caps or {}
    if any(c < 0 for c in rate_caps.values()):
        raise ValueError("rate caps must be >= 0")
    starts, lens, links = _pack(flows, topo)
    order = np.array([pos[i] for i in seen], np.int64)
    class_start = np.cumsum([0] + [len(c) for c in policy_order]).astype(np.int64)
    caps = np.array([rate_caps.get(i, INF) for i in seen], np.float64)
    link_cap = np.array(topo.capacities, np.float64)
    rates = _kernels.progressive_fill(order, class_start, caps, starts, lens, links, link_cap)
    out = RateAllocation({fid: float(r) for fid, r in zip(seen, rates)}, now)
    for f in flows:
        if f.priority is not None:
            out.keys[f.id] = f.priority
    return out


def load_fraction(link, alloc: RateAllocation, above: PriorityKey, flows, topo) -> float:
    """Fraction of ``link``'s capacity used by flows whose key is strictly ahead of ``above``."""
    lid = link if isinstance(link, (int, np.integer)) else link.id
    cap = topo.links[lid].capacity
    if not np.isfinite(cap):
        return 0.0
    used = 0.0
    for f in flows:
        key = alloc.keys.get(f.id, f.priority)
        if key is None or not key < above:
            continue
        if lid in topo.route(f.src, f.dst):
            used += alloc.rate(f.id)
    return min(max(used / cap, 0.0), 1.0)
