"""Small hand-built instances used for replays and oracle checks."""
from __future__ import annotations

from dataclasses import dataclass

from .core import Flow, Request, Stage
from .engine import Simulator, StaticContext, run_flow_scenario
from .pipeline import CostModel, FlowSpec, PrefillPipeline
from .policies.mfs import MFS, RmlqConfig
from .topology import single_link

# Three flows contending for a unit link. Request deadlines are end-to-end;
# each flow's effective deadline subtracts the downstream time it still needs.
CONTENTION_REQUEST_DEADLINE = {1: 18.0, 2: 12.0, 4: 7.0}
CONTENTION_EFFECTIVE_DEADLINE = {"A": 9.0, "B": 6.0, "C": 7.0}
# Thresholds fine enough to keep C deferred until its laxity runs out.
CONTENTION_MFS = RmlqConfig(K=8, E=1.25, U=1.0)


def contention_flows():
    return [
        Flow(0, 1, Stage.REUSE, 0, 1, 2.0, 0.0, None, target_layer=3),
        Flow(1, 2, Stage.COLLECTIVE, 0, 1, 4.0, 0.0, None, target_layer=1, coflow_id=0),
        Flow(2, 4, Stage.P2D, 0, 1, 3.0, 0.0, 7.0, target_layer=1),
    ]


def run_contention(policy, tick=1.0):
    """Finish time of A, B and C under ``policy``."""
    ctx = StaticContext({1: 1, 2: 1, 4: 1}, compute_finished=[4])
    ticks = [4] if policy.uses_ticks else []
    sim = run_flow_scenario(single_link(1.0), policy, contention_flows(), context=ctx,
                            tick_requests=ticks, tick_interval=tick,
                            req_deadlines=CONTENTION_REQUEST_DEADLINE)
    done = sim.table.done_time
    return {"A": float(done[0]), "B": float(done[1]), "C": float(done[2])}


def contention_met(finish):
    return {k: finish[k] <= CONTENTION_EFFECTIVE_DEADLINE[k] + 1e-9 for k in finish}


@dataclass
class PlanResult:
    sim: Simulator
    pipeline: PrefillPipeline
    request: Request

    @property
    def run(self):
        return self.pipeline.runs[0]

    @property
    def ttft(self):
        return self.request.ttft


def run_plan(policy, layers, costs, plan, deadline=float("inf"), tick=1.0, topo=None):
    """One request on ``topo`` (default: a unit link 0->1) with hand-written flows."""
    topo = topo or single_link(1.0)
    sim = Simulator(topo, policy, tick_interval=tick)
    pipe = PrefillPipeline(sim, CostModel(alpha=1.0))
    req = Request(0, 0.0, 1, layers, list(costs), deadline=deadline)
    pipe.run_plan(req, plan)
    sim.run()
    return PlanResult(sim, pipe, req)


def ingress_example(policy):
    """Reuse for layer 3 released at 0 meets layer 1's collective at t=1 on the ingress link.

    Returns the start time of layer 2.
    """
    plan = [FlowSpec(Stage.REUSE, 3, 2.0, 0, 1), FlowSpec(Stage.COLLECTIVE, 1, 1.0, 0, 1)]
    res = run_plan(policy, 3, [1.0, 1.0, 1.0], plan)
    return res.run.layer_start[2]


def egress_example(policy):
    """A loose P2D transfer from layer 1 shares the egress link with layer 2's collective.

    Returns ``(layer-2 finish, total stall)``.
    """
    plan = [FlowSpec(Stage.P2D, 1, 2.0, 0, 1), FlowSpec(Stage.COLLECTIVE, 2, 1.0, 0, 1)]
    res = run_plan(policy, 2, [1.0, 1.0], plan, deadline=100.0)
    return res.run.layer_end[2], res.pipeline.stall_total(0)


def mfs_for_plans(**kw):
    return MFS(RmlqConfig(**kw) if kw else None, enable_pruning=False)
