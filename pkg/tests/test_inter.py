import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import random_pruning_instance
from msflow.core import Flow, Stage
from msflow.engine import run_flow_scenario
from msflow.inter import BatchInput, est_finish_time, inter_scheduling, red_score, scavenger_service
from msflow.policies import MFS
from msflow.topology import single_link


def test_red_example():
    r = red_score([7, 12, 12, 18])
    assert (r.k_star, r.f, r.red) == (3, 0.75, 9.75)
    assert sorted(r.tight_set) == [0, 1, 2] and r.loose_set == [3]


def test_red_piggyback_values():
    assert red_score([5, 100, 100, 100]).red == 76.25
    assert red_score([50] * 4).red == 50


def test_red_degenerate():
    assert red_score([3.5]).red == 3.5
    r = red_score([4, 4])
    assert r.f == 1.0 and r.loose_set == []
    with pytest.raises(ValueError):
        red_score([])


def test_red_earliest_gap_wins_ties():
    assert red_score([1, 2, 3]).k_star == 1


@settings(max_examples=200)
@given(st.lists(st.floats(0.01, 1e4), min_size=1, max_size=12), st.floats(0.1, 100))
def test_red_bounds_and_scale_invariance(ds, c):
    r = red_score(ds)
    assert min(ds) <= r.red <= max(ds)
    assert set(r.tight_set).isdisjoint(r.loose_set)
    assert len(r.tight_set) + len(r.loose_set) == len(ds)


@settings(max_examples=100)
@given(st.lists(st.lists(st.integers(1, 1000), min_size=1, max_size=6), min_size=2, max_size=6),
       st.sampled_from([0.5, 2.0, 4.0, 1024.0]))
def test_sigma_scale_invariant(batches, c):
    # power-of-two scaling keeps every product exact, so ties stay ties
    def sigma(scale):
        b = [BatchInput(i, {10 * i + j: d * scale for j, d in enumerate(ds)}, 0.0)
             for i, ds in enumerate(batches)]
        loads = {r: np.zeros(1) for x in b for r in x.deadlines}
        return inter_scheduling(b, loads, 0, 0.0, [1.0]).sigma
    assert sigma(1.0) == sigma(c)


def test_est_finish_examples():
    assert est_finish_time(0.0, 2.0, [3, 1], [1, 4], [1, 1]) == (7.0, 1)
    assert est_finish_time(1.0, 2.0, [3, 1], [0, 0], [1, 1])[0] == 6.0
    assert est_finish_time(0.0, 1.0, [0], [4], [2])[0] == 3.0


def test_est_finish_zero_bandwidth_infeasible():
    f, u = est_finish_time(0.0, 1.0, [0, 0], [1, 0], [0, 1])
    assert math.isinf(f) and u == 0


def test_single_prune_meets_loose_deadline():
    # batch 0 leaves S = [3, 1]; batch 1 brings L = [1, 4] with compute 2, so F_hat = 7 > D_lo = 6.
    # Requests 10 and 11 tie on port 2; the lower id goes and F_hat drops to 2 + max(4, 3) = 6.
    b0 = BatchInput(0, {0: 4.0}, 0.0)
    b1 = BatchInput(1, {10: 6.0, 11: 5.0}, 2.0)
    loads = {0: np.array([3.0, 1.0]), 10: np.array([0.0, 2.0]), 11: np.array([1.0, 2.0])}
    d = inter_scheduling([b0, b1], loads, 2, 0.0, [1.0, 1.0], record=True)
    assert d.sigma == [0, 1]
    assert d.trace == [(1, 10, 1, 7.0, 6.0)]
    assert d.pruned == [10] and d.f_hat[1] == 6.0


def test_budget_zero_keeps_red_order():
    b = [BatchInput(0, {0: 9.0}, 1.0), BatchInput(1, {1: 3.0}, 1.0, admit_time=1.0)]
    d = inter_scheduling(b, {0: np.array([1.0]), 1: np.array([1.0])}, 0, 0.0, [1.0])
    assert d.sigma == [1, 0] and d.pruned == []


def test_budget_exhausted_tolerates_infeasibility():
    b = [BatchInput(0, {0: 1.0, 1: 1.0, 2: 1.0}, 0.0)]
    loads = {r: np.array([5.0]) for r in range(3)}
    d = inter_scheduling(b, loads, 1, 0.0, [1.0])
    assert len(d.pruned) == 1 and d.f_hat[0] > 1.0 and d.sigma == [0]


def test_missing_load_vector():
    with pytest.raises(KeyError):
        inter_scheduling([BatchInput(0, {0: 1.0}, 0.0)], {}, 0, 0.0, [1.0])


def test_negative_budget():
    with pytest.raises(ValueError):
        inter_scheduling([], {}, -1, 0.0, [1.0])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pruning_properties(seed):
    batches, loads, budget, bw = random_pruning_instance(np.random.default_rng(seed), feasible_budget=False)
    d = inter_scheduling(batches, loads, budget, 0.0, bw, record=True)
    assert len(d.pruned) <= budget
    assert len(set(d.pruned)) == len(d.pruned)
    for _, _, _, before, after in d.trace:
        assert after <= before + 1e-12
    assert sorted(d.sigma) == sorted(b.id for b in batches)


def test_scavenger_orders_by_deadline():
    flows = [Flow(0, 0, Stage.REUSE, 0, 1, 1.0), Flow(1, 1, Stage.REUSE, 0, 1, 1.0)]
    out = scavenger_service(flows, {0: 9.0, 1: 4.0})
    assert [[f.id for f in c] for c in out] == [[1], [0]]
    assert scavenger_service([]) == []


def _scavenger_run():
    pol = MFS(enable_pruning=False)
    flows = [Flow(0, 0, Stage.P2D, 0, 1, 2.0, 0.0, 5.0), Flow(1, 1, Stage.REUSE, 0, 1, 1.0)]
    pol.pruned[0] = True
    pol.pruned_ids.append(0)
    return run_flow_scenario(single_link(), pol, flows, req_deadlines={0: 5.0, 1: 9.0}, record=True)


def test_scavenger_gets_only_residual():
    sim = _scavenger_run()
    first = next(e for e in sim.trace if e[1] == "rates")
    assert first[2] == {0: 0.0, 1: 1.0}


def test_pruned_request_still_served_when_link_idles():
    sim = _scavenger_run()
    assert sim.table.done_time[1] == 1.0
    assert sim.table.done_time[0] == 3.0 <= 5.0
