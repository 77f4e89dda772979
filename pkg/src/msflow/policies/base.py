"""Policy protocol and helpers for turning per-flow sort keys into priority classes."""
from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from .. import _kernels
from ..core import INF, Stage


class Policy:
    """A scheduling policy. ``classify`` is called whenever rates are recomputed.

    ``classify`` returns ``(keys, caps)``: ``keys`` is a list of equal-length
    arrays, most significant first; flows with identical keys share one
    max-min class. ``caps`` is an array of per-flow rate caps or None.
    """

    name = "base"
    uses_ticks = False

    def bind(self, sim):
        self.sim = sim

    def on_release(self, ids, now):
        pass

    def on_layer_boundary(self, request_ids, now) -> bool:
        return False

    def on_tick(self, request_id, now) -> bool:
        return False

    def wants_ticks(self, request_id) -> bool:
        return False

    def on_batch_event(self, now) -> bool:
        return False

    def classify(self, table, active, now):
        raise NotImplementedError


def sig_round(x, digits=10):
    """Round to ``digits`` significant figures so float drift does not split classes."""
    x = np.asarray(x, dtype=np.float64)
    if _kernels.USE_NUMBA and x.ndim == 1:
        return _kernels._sig_round_jit(x, digits)
    out = x.copy()
    pos = np.isfinite(x) & (x > 0)
    if pos.any():
        mag = 10.0 ** np.floor(np.log10(x[pos]))
        out[pos] = np.round(x[pos] / mag, digits - 1) * mag
    return out


def group_classes(keys):
    """Sort by ``keys`` (most significant first); return ``(order, class_start)``."""
    n = len(keys[0])
    if n == 0:
        return np.zeros(0, np.int64), np.zeros(1, np.int64)
    order = np.lexsort(tuple(reversed([np.asarray(k) for k in keys])))
    change = np.zeros(n, dtype=bool)
    change[0] = True
    for k in keys:
        ks = np.asarray(k)[order]
        change[1:] |= ks[1:] != ks[:-1]
    starts = np.flatnonzero(change)
    return order, np.append(starts, n).astype(np.int64)


def columns_from_flows(flows, request_deadlines=None):
    """Column view over a list of :class:`Flow` for the list-based policy API."""
    rd = request_deadlines or {}
    return SimpleNamespace(
        remaining=np.array([f.remaining for f in flows], dtype=np.float64),
        release=np.array([f.release_time for f in flows], dtype=np.float64),
        deadline=np.array([INF if f.explicit_deadline is None else f.explicit_deadline for f in flows]),
        req_deadline=np.array([rd.get(f.request_id, INF if f.explicit_deadline is None else f.explicit_deadline)
                               for f in flows], dtype=np.float64),
        stage=np.array([int(f.stage) for f in flows], dtype=np.int8),
        ids=np.array([f.id for f in flows], dtype=np.int64),
    )


def classes_from_keys(flows, keys):
    order, starts = group_classes(keys)
    return [[flows[i] for i in order[starts[c]:starts[c + 1]]] for c in range(len(starts) - 1)]


def is_p2d(stage):
    return np.asarray(stage) == int(Stage.P2D)
