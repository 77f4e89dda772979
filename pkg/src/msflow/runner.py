"""Assemble a full simulation from a config: topology, workload, SLOs, policy, engine."""
from __future__ import annotations

from dataclasses import dataclass, replace

from .engine import Simulator
from .metrics import MetricsReport, report_from_run
from .pipeline import CostModel, PrefillPipeline
from .policies import EDF, MFS, SJF, FairShare, Karuna, RmlqConfig
from .topology import ConfigError, _get, build_topology
from .workload import SloOracle, WorkloadSpec, assign_deadlines, generate_workload, load_trace

POLICY_NAMES = ("fs", "sjf", "edf", "karuna", "mfs")


def make_policy(name: str, cfg: dict):
    if name == "fs":
        return FairShare()
    if name == "sjf":
        return SJF()
    if name == "edf":
        return EDF()
    if name == "karuna":
        return Karuna()
    if name == "mfs":
        rm = RmlqConfig(_get(cfg, "mfs.K", 8, int), _get(cfg, "mfs.E", 4.0, float),
                        _get(cfg, "mfs.U", 0.5, float))
        return MFS(rm, drop_budget_frac=_get(cfg, "inter.drop_budget_frac", 0.05, float),
                   enable_pruning=bool(_get(cfg, "inter.enable_pruning", True)))
    raise ConfigError(f"unknown policy {name!r} (expected one of {', '.join(POLICY_NAMES)})")


def cost_model(cfg: dict) -> CostModel:
    kv = _get(cfg, "model.kv_bytes_per_token_layer", cast=float)
    return CostModel(alpha=_get(cfg, "model.alpha_ms", cast=float) / 1e3,
                     beta=_get(cfg, "model.beta_us_per_token", cast=float) / 1e6,
                     kappa_r=kv, kappa_p=kv,
                     kappa_c=_get(cfg, "model.coll_bytes_per_token_layer", cast=float))


@dataclass
class Workload:
    requests: list
    oracle: SloOracle


def build_workload(cfg: dict, rate: float, seed: int, topo=None, oracle=None) -> Workload:
    """Requests with SLO deadlines; the same (config, rate, seed) always gives the same list."""
    topo = topo or build_topology(cfg)
    cost = cost_model(cfg)
    layers = _get(cfg, "model.layers", cast=int)
    units = len(topo.prefill_units)
    cap = _get(cfg, "cluster.max_batch_tokens", 8192, int)
    trace = (cfg.get("workload") or {}).get("trace") or ""
    if trace:
        reqs = load_trace(trace, layers, units, cap)
    else:
        spec = WorkloadSpec(rate=rate, request_count=_get(cfg, "workload.requests", cast=int),
                            units=units, layers=layers,
                            prompt_mean=_get(cfg, "workload.prompt_mean", cast=float),
                            prompt_sigma=_get(cfg, "workload.prompt_sigma", cast=float),
                            max_tokens=cap,
                            reuse_mean=_get(cfg, "workload.reuse_mean", cast=float),
                            reuse_skew=_get(cfg, "workload.reuse_skew", cast=float),
                            token_quantum=_get(cfg, "workload.token_quantum", 64, int),
                            reuse_quantum=_get(cfg, "workload.reuse_quantum", 0.125, float),
                            seed=seed)
        reqs = generate_workload(spec)
    oracle = oracle or SloOracle(topo, cost, cap)
    reqs = assign_deadlines(reqs, _get(cfg, "workload.slo_multiplier", cast=float), oracle)
    return Workload(reqs, oracle)


@dataclass
class RunOutput:
    report: MetricsReport
    sim: Simulator
    pipeline: PrefillPipeline


def simulate(cfg: dict, policy: str, rate: float, seed: int, workload: Workload = None,
             topo=None) -> RunOutput:
    topo = topo or build_topology(cfg)
    wl = workload or build_workload(cfg, rate, seed, topo)
    pol = make_policy(policy, cfg)
    reqs = [r for r in wl.requests]
    last = max((r.arrival for r in reqs), default=0.0)
    horizon = last + _get(cfg, "sim.horizon_s", cast=float)
    sim = Simulator(topo, pol, tick_interval=_get(cfg, "sim.promotion_tick_ms", cast=float) / 1e3,
                    horizon=horizon)
    pipe = PrefillPipeline(sim, cost_model(cfg),
                           max_batch_tokens=_get(cfg, "cluster.max_batch_tokens", 8192, int))
    live = [replace(r, ttft=None) for r in reqs]
    pipe.submit(live)
    sim.run()
    pruned = len(getattr(pol, "pruned_ids", ()))
    report = report_from_run(policy, seed, live, pipe, pruned)
    return RunOutput(report, sim, pipe)
