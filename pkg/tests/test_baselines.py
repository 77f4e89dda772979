import numpy as np
import pytest

from msflow.core import Flow, Stage
from msflow.policies import EDF, SJF, FairShare, Karuna
from msflow.policies.baselines import edf_order, fair_share_order, karuna_caps, karuna_rates, sjf_order
from msflow.scenarios import run_contention, contention_flows, contention_met
from msflow.topology import single_link


def f(i, size, stage=Stage.REUSE, dl=None, release=0.0):
    return Flow(i, i, stage, 0, 1, size, release, dl)


def ids(classes):
    return [[x.id for x in c] for c in classes]


def test_fair_share_one_class():
    assert ids(fair_share_order([f(0, 1), f(1, 2), f(2, 3)])) == [[0, 1, 2]]
    assert fair_share_order([]) == []


def test_sjf_orders_by_size_then_release():
    assert ids(sjf_order([f(0, 2), f(1, 1)])) == [[1], [0]]
    assert ids(sjf_order([f(0, 1, release=1.0), f(1, 1)])) == [[1], [0]]


def test_edf_explicit_first_then_fair():
    out = edf_order([f(0, 1), f(1, 1, Stage.P2D, 5.0), f(2, 1)])
    assert ids(out) == [[1], [0, 2]]


def test_edf_implicit_only_is_fair_share():
    assert ids(edf_order([f(0, 1), f(1, 2)])) == [[0, 1]]


def test_edf_request_deadlines():
    out = edf_order(contention_flows(), {1: 18.0, 2: 12.0, 4: 7.0})
    assert ids(out) == [[2], [1], [0]]


def test_karuna_cap_division():
    reserved, caps = karuna_caps(np.array([4.0]), np.array([8.0]), 0.0, np.array([0]), np.array([1]),
                                 np.array([0]), np.array([1.0]), np.array([0]))
    assert reserved[0] and caps[0] == 0.5


def test_karuna_scales_oversubscribed_link():
    rem = np.array([1.0, 2.0])
    _, caps = karuna_caps(rem, np.array([2.0, 2.0]), 0.0, np.array([0, 1]), np.array([1, 1]),
                          np.array([0, 0]), np.array([1.0]), np.array([0, 1]))
    assert caps == pytest.approx([0.5 * 2 / 3, 1.0 * 2 / 3])


def test_karuna_residual_to_shortest():
    flows = [f(0, 4, Stage.P2D, 8.0), f(1, 1), f(2, 2)]
    classes, caps = karuna_rates(flows, 0.0, single_link())
    assert ids(classes) == [[0], [1], [2]] and caps == {0: 0.5}
    sim_done = _run(Karuna(), flows)
    assert sim_done[1] == 2.0 and sim_done[1] < sim_done[2]


def test_karuna_overdue_flow_uncapped():
    _, caps = karuna_caps(np.array([1.0]), np.array([1.0]), 2.0, np.array([0]), np.array([1]),
                          np.array([0]), np.array([1.0]), np.array([0]))
    assert np.isinf(caps[0])


def _run(policy, flows):
    from msflow.engine import run_flow_scenario
    sim = run_flow_scenario(single_link(), policy, flows)
    return {i: float(sim.table.done_time[i]) for i in range(len(flows))}


@pytest.mark.parametrize("policy", [FairShare, SJF, EDF, Karuna])
def test_stage_agnostic(policy):
    base = [f(0, 2), f(1, 3), f(2, 1)]
    swapped = [Flow(0, 0, Stage.COLLECTIVE, 0, 1, 2), Flow(1, 1, Stage.REUSE, 0, 1, 3),
               Flow(2, 2, Stage.COLLECTIVE, 0, 1, 1)]
    assert _run(policy(), base) == _run(policy(), swapped)


def test_contention_baselines():
    assert run_contention(FairShare()) == {"A": 6.0, "B": 9.0, "C": 8.0}
    assert run_contention(SJF()) == {"A": 2.0, "B": 9.0, "C": 5.0}
    assert run_contention(EDF("request")) == {"A": 9.0, "B": 7.0, "C": 3.0}
    assert not contention_met(run_contention(FairShare()))["C"]


def test_edf_source_validated():
    with pytest.raises(ValueError):
        EDF("batch")
