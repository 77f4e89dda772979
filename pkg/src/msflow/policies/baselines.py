"""Stage-agnostic baselines: Fair Sharing, SJF, EDF and Karuna."""
from __future__ import annotations

import numpy as np

from ..core import INF
from .. import _kernels
from .._kernels import _expand
from .base import Policy, classes_from_keys, columns_from_flows, sig_round


def fair_share_keys(n):
    return [np.zeros(n, np.int8)]


def sjf_keys(remaining, release):
    # earlier release wins among equal remaining sizes
    return [sig_round(remaining), np.asarray(release, np.float64)]


def edf_keys(deadline, release):
    deadline = np.asarray(deadline, np.float64)
    implicit = ~np.isfinite(deadline)
    return [
        implicit.astype(np.int8),
        np.where(implicit, 0.0, deadline),
        np.where(implicit, 0.0, release),
    ]


def karuna_caps(remaining, deadline, now, route_start, route_len, route_links, link_cap, ids):
    """Minimum just-in-time rate for each deadline flow, scaled down on oversubscribed links.

    Flows past their deadline with work left get an uncapped share (``inf``).
    Returns ``(reserved_mask, caps)``.
    """
    deadline = np.asarray(deadline, np.float64)
    reserved = np.isfinite(deadline)
    caps = np.full(len(deadline), INF)
    slack = deadline - now
    live = reserved & (slack > 0)
    caps[live] = remaining[live] / slack[live]
    if live.any():
        rows, links, lens = _expand(ids[live], route_start, route_len, route_links)
        demand = np.bincount(links, weights=caps[live][rows], minlength=len(link_cap))
        factor = np.ones(len(link_cap))
        over = demand > link_cap
        factor[over] = link_cap[over] / demand[over]
        per = np.ones(int(live.sum()))
        has = lens > 0
        if has.any():
            starts = (np.cumsum(lens) - lens)[has]
            per[has] = np.minimum.reduceat(factor[links], starts)
        caps[live] *= per
    return reserved, caps


def karuna_keys(reserved, remaining, release):
    return [
        (~reserved).astype(np.int8),
        np.where(reserved, 0.0, sig_round(remaining)),
        np.where(reserved, 0.0, release),
    ]


# -- list API -----------------------------------------------------------------

def fair_share_order(flows):
    """All flows in one max-min class."""
    return classes_from_keys(flows, fair_share_keys(len(flows))) if flows else []


def sjf_order(flows):
    """Classes by ascending remaining bytes, earlier release first on ties."""
    if not flows:
        return []
    c = columns_from_flows(flows)
    return classes_from_keys(flows, sjf_keys(c.remaining, c.release))


def edf_order(flows, request_deadlines=None):
    """Explicit-deadline flows by ascending deadline, then one fair class of the rest.

    With ``request_deadlines`` (request id -> deadline) every flow is ordered by
    its request's deadline instead of its own explicit deadline.
    """
    if not flows:
        return []
    c = columns_from_flows(flows, request_deadlines)
    dl = c.req_deadline if request_deadlines is not None else c.deadline
    return classes_from_keys(flows, edf_keys(dl, c.release))


def karuna_rates(flows, now, topo):
    """Return ``(classes, caps)`` with ``caps`` mapping flow id to its reserved rate."""
    if not flows:
        return [], {}
    c = columns_from_flows(flows)
    routes = [topo.route(f.src, f.dst) for f in flows]
    lens = np.array([len(r) for r in routes], np.int64)
    starts = np.cumsum(lens) - lens
    links = np.array([l for r in routes for l in r], np.int64)
    link_cap = np.array(topo.capacities, np.float64)
    local = np.arange(len(flows), dtype=np.int64)
    reserved, caps = karuna_caps(c.remaining, c.deadline, now, starts, lens, links, link_cap, local)
    classes = classes_from_keys(flows, karuna_keys(reserved, c.remaining, c.release))
    return classes, {f.id: float(caps[i]) for i, f in enumerate(flows) if reserved[i]}


# -- engine policies ------------------------------------------------------------

class FairShare(Policy):
    name = "fs"

    def classify(self, table, active, now):
        return fair_share_keys(len(active)), None


class SJF(Policy):
    name = "sjf"

    def classify(self, table, active, now):
        return sjf_keys(table.remaining[active], table.release[active]), None


class EDF(Policy):
    name = "edf"

    def __init__(self, deadline_source="flow"):
        if deadline_source not in ("flow", "request"):
            raise ValueError("deadline_source must be 'flow' or 'request'")
        self.deadline_source = deadline_source

    def classify(self, table, active, now):
        dl = table.deadline if self.deadline_source == "flow" else table.req_deadline
        return edf_keys(dl[active], table.release[active]), None


class Karuna(Policy):
    name = "karuna"

    def classify(self, table, active, now):
        if _kernels.USE_NUMBA if self.sim.use_numba is None else self.sim.use_numba:
            reserved, caps = _kernels._karuna_caps_jit(active, table.remaining, table.deadline, now,
                                                       table.route_start, table.route_len,
                                                       table.route_links, table.link_cap)
        else:
            reserved, caps = karuna_caps(table.remaining[active], table.deadline[active], now,
                                         table.route_start, table.route_len, table.route_links,
                                         table.link_cap, active)
        return karuna_keys(reserved, table.remaining[active], table.release[active]), caps
