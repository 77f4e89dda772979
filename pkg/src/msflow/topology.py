"""Topologies (star, fat-tree), deterministic shortest-path routing and cluster layout."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .core import INF


class ConfigError(ValueError):
    """Raised for malformed configuration; the message names the offending key."""


class SimulationError(RuntimeError):
    pass


class Role(str, Enum):
    PREFILL = "PrefillGPU"
    DECODE = "DecodeGPU"
    SWITCH = "Switch"


@dataclass
class Node:
    id: int
    role: Role
    name: str = ""


@dataclass
class Link:
    id: int
    src: int
    dst: int
    capacity: float

    @property
    def endpoints(self):
        return (self.src, self.dst)


@dataclass
class Topology:
    nodes: list
    links: list
    prefill_units: list = field(default_factory=list)
    decode_units: list = field(default_factory=list)
    kind: str = "custom"
    _adj: dict = field(default_factory=dict, repr=False)
    _routes: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        ids = [l.id for l in self.links]
        if ids != list(range(len(ids))):
            raise ConfigError("links: ids must be 0..n-1 in order")
        for l in self.links:
            if not l.capacity > 0:
                raise ConfigError(f"links[{l.id}].capacity must be positive")
        self._adj = {n.id: [] for n in self.nodes}
        for l in self.links:
            self._adj[l.src].append(l)
        for out in self._adj.values():
            out.sort(key=lambda l: l.id)

    @property
    def capacities(self):
        return [l.capacity for l in self.links]

    def route(self, src: int, dst: int) -> list:
        """Shortest path as a list of link ids; BFS visits links in id order."""
        key = (src, dst)
        if key in self._routes:
            return self._routes[key]
        if src == dst:
            path = []
        else:
            prev = {src: None}
            q = deque([src])
            while q and dst not in prev:
                u = q.popleft()
                for l in self._adj[u]:
                    if l.dst not in prev:
                        prev[l.dst] = l
                        q.append(l.dst)
            if dst not in prev:
                raise SimulationError(f"no route from node {src} to node {dst}")
            path = []
            v = dst
            while prev[v] is not None:
                path.append(prev[v].id)
                v = prev[v].src
            path.reverse()
        self._routes[key] = path
        return path

    def bottleneck_capacity(self, src: int, dst: int) -> float:
        caps = [self.links[i].capacity for i in self.route(src, dst)]
        return min(caps) if caps else INF

    def unit_host(self, unit: int, index: int, decode: bool = False) -> int:
        hosts = (self.decode_units if decode else self.prefill_units)[unit]
        return hosts[index % len(hosts)]


def _duplex(links, a, b, cap_ab, cap_ba=None):
    links.append(Link(len(links), a, b, cap_ab))
    links.append(Link(len(links), b, a, cap_ab if cap_ba is None else cap_ba))


def single_link(capacity: float = 1.0) -> Topology:
    """Two hosts joined by one directed link (host 0 -> host 1) plus its reverse."""
    nodes = [Node(0, Role.PREFILL, "h0"), Node(1, Role.PREFILL, "h1")]
    links = []
    _duplex(links, 0, 1, capacity)
    return Topology(nodes, links, prefill_units=[[0], [1]], kind="link")


def star(n_hosts: int, capacity: float = 1.0, host_caps: Optional[list] = None,
         roles: Optional[list] = None) -> Topology:
    """``n_hosts`` hosts on one switch. Host i owns links 2i (up) and 2i+1 (down)."""
    roles = roles or [Role.PREFILL] * n_hosts
    nodes = [Node(i, roles[i], f"h{i}") for i in range(n_hosts)]
    sw = n_hosts
    nodes.append(Node(sw, Role.SWITCH, "sw"))
    links = []
    for i in range(n_hosts):
        cap = capacity if host_caps is None else host_caps[i]
        _duplex(links, i, sw, cap)
    return Topology(nodes, links, kind="star")


def fat_tree(k: int, capacity: float = 1.0, n_hosts: Optional[int] = None,
             roles: Optional[list] = None, host_caps: Optional[list] = None) -> Topology:
    """k-ary fat-tree. Hosts get ids 0..n_hosts-1; switches follow."""
    if k < 2 or k % 2:
        raise ConfigError("topology.k must be an even integer >= 2")
    half = k // 2
    max_hosts = k * half * half
    n_hosts = max_hosts if n_hosts is None else n_hosts
    if n_hosts > max_hosts:
        raise ConfigError(f"topology.hosts={n_hosts} exceeds fat-tree capacity {max_hosts}")
    roles = roles or [Role.PREFILL] * n_hosts
    nodes = [Node(i, roles[i], f"h{i}") for i in range(n_hosts)]

    def add_switch(name):
        nodes.append(Node(len(nodes), Role.SWITCH, name))
        return nodes[-1].id

    core = [add_switch(f"core{i}") for i in range(half * half)]
    links = []
    h = 0
    for p in range(k):
        aggs = [add_switch(f"agg{p}.{i}") for i in range(half)]
        edges = [add_switch(f"edge{p}.{i}") for i in range(half)]
        for e in edges:
            for _ in range(half):
                if h < n_hosts:
                    cap = capacity if host_caps is None else host_caps[h]
                    _duplex(links, h, e, cap)
                h += 1
            for a in aggs:
                _duplex(links, e, a, capacity)
        for i, a in enumerate(aggs):
            for j in range(half):
                _duplex(links, a, core[i * half + j], capacity)
    return Topology(nodes, links, kind="fattree")


def _get(cfg: dict, key: str, default=None, cast=None, positive=False):
    node = cfg
    for part in key.split("."):
        if not isinstance(node, dict) or part not in node:
            node = default
            break
        node = node[part]
    if node is None:
        raise ConfigError(f"{key}: missing")
    if cast is not None:
        try:
            node = cast(node)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: cannot interpret {node!r}") from None
    if positive and not node > 0:
        raise ConfigError(f"{key}: must be positive, got {node!r}")
    return node


def build_topology(cfg: dict) -> Topology:
    """Build a cluster topology from a nested config dict.

    Host links carry ``link_gbps * nics_per_host`` (converted to bytes/s);
    switch links carry ``link_gbps``. Prefill units come first in host order,
    followed by decode units. When ``cluster.decode_infinite`` is set (the
    default) decode hosts' NIC links are uncapacitated.
    """
    kind = _get(cfg, "topology.kind", "star", str)
    gbps = _get(cfg, "topology.link_gbps", 100.0, float, positive=True)
    nics = _get(cfg, "topology.nics_per_host", 1, int, positive=True)
    n_pre = _get(cfg, "cluster.prefill_units", 8, int, positive=True)
    n_dec = _get(cfg, "cluster.decode_units", n_pre, int, positive=True)
    per_unit = _get(cfg, "cluster.hosts_per_unit", 2, int, positive=True)
    dec_inf = bool(_get(cfg, "cluster.decode_infinite", True))
    needed = (n_pre + n_dec) * per_unit
    hosts = _get(cfg, "topology.hosts", needed, int, positive=True)
    if hosts < needed:
        raise ConfigError(f"topology.hosts={hosts} is fewer than the {needed} hosts the cluster needs")

    link_cap = gbps * 1e9 / 8.0
    n_pre_hosts = n_pre * per_unit
    roles, host_caps = [], []
    for h in range(hosts):
        decode = n_pre_hosts <= h < needed
        roles.append(Role.DECODE if decode else Role.PREFILL)
        host_caps.append(INF if decode and dec_inf else link_cap * nics)
    if kind == "star":
        topo = star(hosts, link_cap * nics, host_caps=host_caps, roles=roles)
    elif kind == "fattree":
        k = _get(cfg, "topology.k", 0, int)
        if k == 0:
            k = 2
            while k * (k // 2) ** 2 < hosts:
                k += 2
        topo = fat_tree(k, link_cap, n_hosts=hosts, roles=roles, host_caps=host_caps)
    else:
        raise ConfigError(f"topology.kind: unknown kind {kind!r} (expected star or fattree)")
    topo.prefill_units = [list(range(u * per_unit, (u + 1) * per_unit)) for u in range(n_pre)]
    topo.decode_units = [
        list(range(n_pre_hosts + u * per_unit, n_pre_hosts + (u + 1) * per_unit)) for u in range(n_dec)
    ]
    return topo
