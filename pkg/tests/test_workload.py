import numpy as np
import pytest

from msflow.core import Request
from msflow.pipeline import CostModel
from msflow.topology import star
from msflow.workload import (SloOracle, WorkloadError, WorkloadSpec, admit_batches, assign_deadlines,
                             derive_slo, generate_workload, load_trace, zipf_weights)

# chi-square(30) quantiles at 0.0005 and 0.9995: a two-sided test at p = 0.001
CHI2_30_LO, CHI2_30_HI = 10.804, 62.162


def test_poisson_counts_chi_square():
    rate, units, horizon = 3.0, 4, 20.0
    mu = rate * units * horizon
    counts = [len(generate_workload(WorkloadSpec(rate=rate, units=units, horizon=horizon, seed=s)))
              for s in range(30)]
    stat = sum((n - mu) ** 2 / mu for n in counts)
    assert CHI2_30_LO < stat < CHI2_30_HI


def test_seeded_reproducible():
    a = generate_workload(WorkloadSpec(rate=2.0, request_count=50, seed=7))
    b = generate_workload(WorkloadSpec(rate=2.0, request_count=50, seed=7))
    c = generate_workload(WorkloadSpec(rate=2.0, request_count=50, seed=8))
    assert a == b and a != c


def test_zero_reuse_mean_gives_no_sources():
    reqs = generate_workload(WorkloadSpec(rate=2.0, request_count=100, reuse_mean=0.0))
    assert all(r.reuse_fraction == 0 and r.reuse_source is None for r in reqs)


def test_reuse_sources_skewed_and_remote():
    reqs = generate_workload(WorkloadSpec(rate=2.0, request_count=3000, units=8, reuse_skew=1.2))
    src = [r.reuse_source for r in reqs if r.reuse_source is not None]
    assert all(r.reuse_source != r.prefill_unit for r in reqs if r.reuse_source is not None)
    freq = np.bincount(src, minlength=8)
    assert freq[0] > 2 * freq[7]


def test_quantised_prompts_and_reuse():
    reqs = generate_workload(WorkloadSpec(rate=2.0, request_count=200))
    assert all(r.prompt_tokens % 64 == 0 for r in reqs)
    assert all(abs(r.reuse_fraction * 8 - round(r.reuse_fraction * 8)) < 1e-12 for r in reqs)


def test_zipf_weights():
    w = zipf_weights(3, 1.0)
    assert w.sum() == pytest.approx(1.0) and w[0] == pytest.approx(2 * w[1])


@pytest.mark.parametrize("kw", [{"rate": 0.0}, {"rate": 1.0, "reuse_mean": 1.5},
                                {"rate": 1.0, "prompt_mean": 1e5}])
def test_spec_validation(kw):
    with pytest.raises(WorkloadError):
        WorkloadSpec(**kw)


class FixedOracle:
    def ttft_low(self, r):
        return 0.1


def test_derive_slo_multiplier():
    r = Request(0, 2.0, 64, 2)
    assert derive_slo(r, 3.0, FixedOracle()) == pytest.approx(2.3)
    assert derive_slo(r, 1.0, FixedOracle()) == pytest.approx(2.1)
    with pytest.raises(WorkloadError):
        derive_slo(r, 0.0, FixedOracle())


def _oracle():
    t = star(6)
    t.prefill_units = [[0, 1], [2, 3]]
    t.decode_units = [[4, 5]]
    return SloOracle(t, CostModel(alpha=1e-3, beta=1e-6, kappa_r=100, kappa_p=100, kappa_c=50))


def test_oracle_identical_requests_identical_ttft():
    o = _oracle()
    a = Request(0, 0.0, 512, 4, reuse_fraction=0.5, prefill_unit=0, reuse_source=1)
    b = Request(1, 5.0, 512, 4, reuse_fraction=0.5, prefill_unit=1, reuse_source=0)
    assert o.ttft_low(a) == o.ttft_low(b)
    assert o.runs == 1


def test_oracle_matches_isolated_run():
    o = _oracle()
    r = Request(0, 0.0, 256, 3)
    o.symmetric = False
    assert o.ttft_low(r) == o._isolated(r) > 0


def test_assign_deadlines_keeps_order():
    reqs = [Request(i, float(i), 64, 2) for i in range(3)]
    out = assign_deadlines(reqs, 3.0, FixedOracle())
    assert [r.deadline for r in out] == pytest.approx([0.3, 1.3, 2.3])


def req(i, tokens, unit=0):
    return Request(i, float(i), tokens, 1, prefill_unit=unit)


def test_admit_two_fit_in_one_batch():
    assert [b.request_ids for b in admit_batches([req(0, 4000), req(1, 4000)], 8192)] == [[0, 1]]


def test_admit_overflow_splits():
    assert [b.request_ids for b in admit_batches([req(0, 5000), req(1, 5000)], 8192)] == [[0], [1]]


def test_admit_per_unit_fifo():
    out = admit_batches([req(0, 100, 1), req(1, 100, 0), req(2, 100, 1)], 8192)
    assert [(b.prefill_unit, b.request_ids) for b in out] == [(0, [1]), (1, [0, 2])]


def test_admit_oversized_rejected():
    with pytest.raises(WorkloadError):
        admit_batches([req(0, 9000)], 8192)


def test_load_trace(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("arrival_s,prompt_tokens,reuse_fraction,source_unit\n"
                 "0.5,128,0.5,1\n0.1,64,0,\n")
    reqs = load_trace(p, layers=4, units=2)
    assert [r.arrival for r in reqs] == [0.1, 0.5]
    assert [r.id for r in reqs] == [0, 1]
    assert reqs[1].reuse_source == 1 and reqs[0].reuse_source is None


@pytest.mark.parametrize("body", ["0.1,abc,0,\n", "0.1,64,0.5,\n", "0.1,99999,0,\n"])
def test_load_trace_errors(tmp_path, body):
    p = tmp_path / "t.csv"
    p.write_text("arrival_s,prompt_tokens,reuse_fraction,source_unit\n" + body)
    with pytest.raises(WorkloadError, match="row 1"):
        load_trace(p, layers=4, units=2)
