import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import check_capacity, check_max_min, check_work_conserving, random_alloc_instance
from msflow import _kernels
from msflow.alloc import allocate_rates, load_fraction
from msflow.core import Band, Flow, PriorityKey, Stage
from msflow.topology import SimulationError, Topology, single_link, star


def flows_on(pairs):
    return [Flow(i, i, Stage.REUSE, s, d, 1.0) for i, (s, d) in enumerate(pairs)]


def test_two_equal_flows_split():
    fl = flows_on([(0, 1), (0, 1)])
    r = allocate_rates(fl, single_link(), [fl]).rates
    assert r == {0: 0.5, 1: 0.5}


def test_strict_priority():
    fl = flows_on([(0, 1), (0, 1)])
    r = allocate_rates(fl, single_link(), [[fl[0]], [fl[1]]]).rates
    assert r == {0: 1.0, 1: 0.0}


def test_bottleneck_elsewhere():
    # host 3's uplink caps flow 0 at 0.2; the rest of host 4's downlink is split evenly
    t = star(5, host_caps=[1.0, 1.0, 1.0, 0.2, 1.0])
    fl = flows_on([(3, 4), (0, 4), (1, 4)])
    r = allocate_rates(fl, t, [fl]).rates
    assert r[0] == pytest.approx(0.2) and r[1] == pytest.approx(0.4) and r[2] == pytest.approx(0.4)


def test_caps_respected_and_leftover_reused():
    fl = flows_on([(0, 1), (0, 1)])
    r = allocate_rates(fl, single_link(), [fl], {0: 0.1}).rates
    assert r[0] == pytest.approx(0.1) and r[1] == pytest.approx(0.9)


def test_partition_enforced():
    fl = flows_on([(0, 1), (0, 1)])
    with pytest.raises(ValueError):
        allocate_rates(fl, single_link(), [[fl[0]]])


def test_missing_route_is_simulation_error():
    t = Topology(single_link().nodes, [], prefill_units=[[0], [1]])
    with pytest.raises(SimulationError):
        allocate_rates(flows_on([(0, 1)]), t, [flows_on([(0, 1)])])


def test_load_fraction_examples():
    t = single_link()
    fl = flows_on([(0, 1), (0, 1)])
    fl[0].priority = PriorityKey(Band.URGENT_P2D, 1, (0, 0.0, 0))
    fl[1].priority = PriorityKey(Band.EARLY, 1, (0, 0.0, 1))
    alloc = allocate_rates(fl, t, [[fl[0]], [fl[1]]], {0: 0.3})
    assert load_fraction(0, alloc, PriorityKey(Band.EARLY, 1), fl, t) == pytest.approx(0.3)
    assert load_fraction(0, alloc, PriorityKey(Band.URGENT_P2D, 1), fl, t) == 0.0
    empty = allocate_rates([], t, [])
    assert load_fraction(0, empty, PriorityKey(Band.EARLY, 1), [], t) == 0.0


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_allocator_invariants(seed):
    topo, flows, order, caps = random_alloc_instance(np.random.default_rng(seed))
    rates = allocate_rates(flows, topo, order, caps).rates
    assert not check_capacity(topo, flows, rates)
    assert not check_work_conserving(topo, flows, rates, caps)
    assert not check_max_min(topo, order, rates, caps)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_numba_and_numpy_agree(seed):
    rng = np.random.default_rng(seed)
    n, links = int(rng.integers(1, 40)), int(rng.integers(2, 12))
    lens = rng.integers(0, 4, n)
    starts = (np.cumsum(lens) - lens).astype(np.int64)
    route = rng.integers(0, links, int(lens.sum())).astype(np.int64)
    keys = rng.integers(0, 3, (2, n)).astype(np.float64)
    caps = np.where(rng.random(n) < 0.3, rng.uniform(0, 1, n), math.inf)
    link_cap = np.where(rng.random(links) < 0.1, math.inf, rng.uniform(0.1, 2, links))
    active = np.arange(n, dtype=np.int64)
    args = (keys, active, caps, starts, lens.astype(np.int64), route, link_cap)
    la, ra = _kernels.allocate(*args, use_numba=True)
    lb, rb = _kernels.allocate(*args, use_numba=False)
    assert np.array_equal(la, lb)
    np.testing.assert_allclose(ra, rb, rtol=1e-12, atol=1e-12)


def test_env_flag_parsing(monkeypatch):
    monkeypatch.setenv("MSFLOW_NUMBA", "0")
    assert not _kernels._env_enabled()
    monkeypatch.setenv("MSFLOW_NUMBA", "1")
    assert _kernels._env_enabled()
