"""Per-request metrics, report files and a verifier that rebuilds aggregates from them."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

REQUEST_HEADER = ["request_id", "arrival_s", "ttft_s", "deadline_s", "slo_met", "earliness_s", "stall_s"]
COLLECTIVE_HEADER = ["batch_id", "layer", "release_s", "finish_s", "cct_s"]
SUMMARY_KEYS = ["policy", "seed", "slo_attainment", "ttft_mean_s", "ttft_p99_s", "cct_mean_s",
                "cct_p99_s", "earliness_nonneg_mean_s", "pruned_count"]


def fmt(x) -> str:
    return f"{float(x):.9g}"


@dataclass
class RequestRow:
    request_id: int
    arrival: float
    ttft: float          # relative to arrival; inf when unfinished
    deadline: float      # absolute
    stall: float = 0.0

    @property
    def slo_met(self) -> bool:
        return self.earliness >= 0

    @property
    def earliness(self) -> float:
        return self.deadline - (self.arrival + self.ttft)


@dataclass
class MetricsReport:
    policy: str
    seed: int
    rows: list = field(default_factory=list)
    collectives: list = field(default_factory=list)    # (batch, layer, release, finish)
    pruned_count: int = 0

    def summary(self) -> dict:
        return summarize(self.policy, self.seed,
                         [(r.ttft, r.slo_met, r.earliness) for r in self.rows],
                         [f - s for _, _, s, f in self.collectives], self.pruned_count)


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else None


def _p99(xs):
    return float(np.percentile(xs, 99)) if len(xs) else None


def summarize(policy, seed, rows, ccts, pruned_count) -> dict:
    """``rows`` are ``(ttft, slo_met, earliness)``; unfinished requests count as misses."""
    ttfts = [t for t, _, _ in rows if math.isfinite(t)]
    early = [e for _, met, e in rows if met and math.isfinite(e)]
    return {
        "policy": policy,
        "seed": seed,
        "slo_attainment": (sum(1 for _, met, _ in rows if met) / len(rows)) if rows else None,
        "ttft_mean_s": _mean(ttfts),
        "ttft_p99_s": _p99(ttfts),
        "cct_mean_s": _mean(ccts),
        "cct_p99_s": _p99(ccts),
        "earliness_nonneg_mean_s": _mean(early),
        "pruned_count": int(pruned_count),
    }


def report_from_run(policy, seed, requests, pipeline, pruned_count=0) -> MetricsReport:
    rows = []
    for r in sorted(requests, key=lambda r: r.id):
        ttft = math.inf if r.ttft is None else r.ttft
        stall = pipeline.stall_total(r.id) if r.id in pipeline.req_batch else 0.0
        rows.append(RequestRow(r.id, r.arrival, ttft, r.deadline, stall))
    colls = sorted(pipeline.collectives)
    return MetricsReport(policy, seed, rows, colls, pruned_count)


def _rounded(x):
    return float(fmt(x))


def emit_report(report: MetricsReport, out_dir) -> dict:
    """Write requests.csv, collectives.csv and summary.json; returns the summary.

    Aggregates are computed from the 9-digit values written to the CSVs so a
    reader can rebuild them exactly.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
        req_path = os.path.join(out_dir, "requests.csv")
        with open(req_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REQUEST_HEADER)
            rows = []
            for r in report.rows:
                vals = [_rounded(r.arrival), _rounded(r.ttft), _rounded(r.deadline)]
                earliness = _rounded(r.earliness)
                met = r.slo_met
                w.writerow([r.request_id, fmt(vals[0]), fmt(vals[1]), fmt(vals[2]), int(met),
                            fmt(earliness), fmt(r.stall)])
                rows.append((vals[1], met, earliness))
        with open(os.path.join(out_dir, "collectives.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLLECTIVE_HEADER)
            ccts = []
            for b, l, s, f in report.collectives:
                c = _rounded(f - s)
                ccts.append(c)
                w.writerow([b, l, fmt(s), fmt(f), fmt(c)])
        summary = summarize(report.policy, report.seed, rows, ccts, report.pruned_count)
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=False)
            fh.write("\n")
    except OSError as e:
        raise OSError(e.errno, f"cannot write report to {out_dir}: {e.strerror}", e.filename) from None
    return summary


def read_requests(out_dir):
    with open(os.path.join(out_dir, "requests.csv"), newline="") as fh:
        return list(csv.DictReader(fh))


def verify_report(out_dir, tol=1e-9) -> list:
    """Rebuild every aggregate from the CSVs; return a list of mismatch messages."""
    problems = []
    with open(os.path.join(out_dir, "summary.json")) as fh:
        summary = json.load(fh)
    if list(summary) != SUMMARY_KEYS:
        problems.append(f"summary keys {list(summary)} != {SUMMARY_KEYS}")
    rows = []
    for row in read_requests(out_dir):
        ttft, dl, arr = float(row["ttft_s"]), float(row["deadline_s"]), float(row["arrival_s"])
        met = row["slo_met"] == "1"
        e = float(row["earliness_s"])
        if (e < 0) == met:
            problems.append(f"request {row['request_id']}: earliness sign disagrees with slo_met")
        if met != (arr + ttft <= dl + 1e-6 * max(abs(dl), 1.0)):
            problems.append(f"request {row['request_id']}: slo_met disagrees with ttft and deadline")
        rows.append((ttft, met, e))
    ccts = []
    with open(os.path.join(out_dir, "collectives.csv"), newline="") as fh:
        ccts = [float(r["cct_s"]) for r in csv.DictReader(fh)]
    again = summarize(summary["policy"], summary["seed"], rows, ccts, summary["pruned_count"])
    for k in SUMMARY_KEYS:
        a, b = summary.get(k), again[k]
        if isinstance(b, float) and a is not None:
            if not math.isclose(a, b, rel_tol=tol, abs_tol=tol):
                problems.append(f"{k}: summary {a} != rebuilt {b}")
        elif a != b:
            problems.append(f"{k}: summary {a!r} != rebuilt {b!r}")
    return problems
