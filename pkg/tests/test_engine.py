import math

import pytest

from msflow.core import Flow, Stage
from msflow.engine import EventKind, Simulator, StaticContext, run_flow_scenario
from msflow.policies import FairShare, SJF
from msflow.scenarios import mfs_for_plans
from msflow.topology import SimulationError, single_link


def reuse(i, size, release=0.0, req=None):
    return Flow(i, i if req is None else req, Stage.REUSE, 0, 1, size, release)


def test_fair_share_finish_times():
    sim = run_flow_scenario(single_link(), FairShare(), [reuse(0, 1.0), reuse(1, 2.0)])
    assert list(sim.table.done_time[:2]) == [2.0, 3.0]


def test_sjf_finish_times():
    sim = run_flow_scenario(single_link(), SJF(), [reuse(0, 2.0), reuse(1, 1.0)])
    assert list(sim.table.done_time[:2]) == [3.0, 1.0]


def test_late_release_reschedules_completion():
    # the ingress example collective: at t=1 one unit of reuse remains and the collective joins
    sim = run_flow_scenario(single_link(), FairShare(), [reuse(0, 2.0), reuse(1, 1.0, release=1.0)])
    assert list(sim.table.done_time[:2]) == [3.0, 3.0]


def test_preempted_flow_has_no_completion():
    sim = Simulator(single_link(), SJF())
    sim.add_flows([reuse(0, 1.0), reuse(1, 5.0)])
    sim.release([0, 1])
    sim.on_rate_change()
    eta = sim.completion_times()
    assert eta[0] == 1.0 and math.isinf(eta[1])


def test_rate_doubling_with_half_left_keeps_eta():
    shared = Simulator(single_link(), FairShare())
    shared.add_flows([Flow(0, 0, Stage.REUSE, 0, 1, 4.0, remaining=2.0), reuse(1, 10.0)])
    shared.release([0, 1])
    shared.on_rate_change()
    alone = Simulator(single_link(), FairShare())
    alone.add_flows([reuse(0, 4.0)])
    alone.release([0])
    alone.on_rate_change()
    assert shared.rates()[0] * 2 == alone.rates()[0]
    assert shared.completion_times()[0] == alone.completion_times()[0] == 4.0


def test_stale_completion_events_ignored():
    sim = Simulator(single_link(), FairShare(), record=True)
    sim.add_flows([reuse(0, 2.0), reuse(1, 2.0, release=1.0)])
    sim.schedule_releases({0.0: [0], 1.0: [1]})
    sim.run()
    completes = [e for e in sim.trace if e[1] == "complete"]
    assert [c[0] for c in completes] == [3.0, 4.0]


def test_zero_size_flow_completes_on_release():
    sim = run_flow_scenario(single_link(), FairShare(), [reuse(0, 0.0)])
    assert sim.table.done_time[0] == 0.0


def test_event_tie_order():
    assert EventKind.FLOW_COMPLETE < EventKind.COMPUTE_COMPLETE < EventKind.BATCH_DEPART \
        < EventKind.REQUEST_ARRIVAL < EventKind.BATCH_ADMIT < EventKind.FLOW_RELEASE \
        < EventKind.PROMOTION_TICK


def test_event_in_past_rejected():
    sim = Simulator(single_link(), FairShare())
    sim._advance(5.0)
    with pytest.raises(SimulationError):
        sim.schedule(1.0, EventKind.FLOW_RELEASE, [])


def test_ticks_follow_interval_and_stop():
    ctx = StaticContext({0: 1}, compute_finished=[0])
    flows = [Flow(0, 0, Stage.P2D, 0, 1, 2.5, 0.0, 100.0)]
    sim = run_flow_scenario(single_link(), mfs_for_plans(), flows, context=ctx,
                            tick_requests=[0], tick_interval=1.0, record=True)
    ticks = [e[0] for e in sim.trace if e[1] == "tick"]
    assert ticks[:2] == [1.0, 2.0]
    assert max(ticks) <= 3.0 + 1e-9        # no ticks once the flow is gone


def test_tick_promotion_triggers_recompute():
    # a deferred P2D waits behind early-stage reuse until its MLU reaches the top threshold
    ctx = StaticContext({0: 1, 1: 1}, compute_finished=[0])
    flows = [Flow(0, 0, Stage.P2D, 0, 1, 1.0, 0.0, 10.0), Flow(1, 1, Stage.REUSE, 0, 1, 10.0, 0.0,
                                                                  target_layer=8)]
    sim = run_flow_scenario(single_link(), mfs_for_plans(K=4, E=2.0, U=1.0), flows, context=ctx,
                            tick_requests=[0], tick_interval=1.0, record=True)
    rate_times = [e[0] for e in sim.trace if e[1] == "rates"]
    tick_times = [e[0] for e in sim.trace if e[1] == "tick"]
    assert 8.0 in tick_times and 8.0 in rate_times
    assert sim.table.done_time[0] == 9.0


def test_livelock_guard():
    sim = Simulator(single_link(), FairShare(), max_stalled_events=10)

    def again(_):
        sim.schedule(sim.now, EventKind.BATCH_ADMIT, None)

    sim.on(EventKind.BATCH_ADMIT, again)
    sim.schedule(0.0, EventKind.BATCH_ADMIT, None)
    with pytest.raises(SimulationError, match="livelock"):
        sim.run()
