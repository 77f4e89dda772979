"""Hot numeric kernels: progressive filling and per-link load sums.

Each kernel has a numba ``@njit`` version and a pure-numpy version with the
same signature. The numba path is used when numba imports and the
``MSFLOW_NUMBA`` environment variable is not ``0``.
"""
import os

import numpy as np

SAT_TOL = 1e-12

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f


def _env_enabled():
    return os.environ.get("MSFLOW_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


USE_NUMBA = NUMBA_AVAILABLE and _env_enabled()


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _fill_jit(order, class_start, caps, route_start, route_len, route_links, link_cap):
    # Live flows of a class always share one water level, so flows freeze in
    # cap order or when a link on their route saturates; a link->flow index
    # finds the latter without rescanning the class.
    n = order.shape[0]
    n_links = link_cap.shape[0]
    resid = link_cap.copy()
    cnt = np.zeros(n_links, np.int64)
    seen = np.zeros(n_links, np.bool_)
    touched = np.empty(n_links, np.int64)
    off = np.zeros(n_links + 1, np.int64)
    fill = np.zeros(n_links, np.int64)
    rates = np.zeros(n)
    alive = np.zeros(n, np.bool_)
    work = np.empty(n, np.int64)
    hit = np.empty(n_links, np.int64)
    adj = np.empty(route_links.shape[0] + 1, np.int64)
    for c in range(class_start.shape[0] - 1):
        lo = class_start[c]
        hi = class_start[c + 1]
        m = 0
        nt = 0
        for j in range(lo, hi):
            f = order[j]
            s = route_start[f]
            ln = route_len[f]
            if ln == 0:
                rates[j] = caps[j]
                continue
            if caps[j] <= 0.0:
                continue
            blocked = False
            for q in range(s, s + ln):
                if resid[route_links[q]] <= SAT_TOL * link_cap[route_links[q]]:
                    blocked = True
                    break
            if blocked:
                continue
            work[m] = j
            m += 1
            alive[j] = True
            for q in range(s, s + ln):
                l = route_links[q]
                cnt[l] += 1
                if not seen[l]:
                    seen[l] = True
                    touched[nt] = l
                    nt += 1
        if m == 0:
            for k in range(nt):
                seen[touched[k]] = False
            continue
        # link -> flow adjacency over the touched links
        pos = 0
        for k in range(nt):
            l = touched[k]
            off[l] = pos
            fill[l] = pos
            pos += cnt[l]
        for k in range(m):
            j = work[k]
            f = order[j]
            for q in range(route_start[f], route_start[f] + route_len[f]):
                l = route_links[q]
                adj[fill[l]] = j
                fill[l] += 1
        by_cap = work[:m][np.argsort(caps[work[:m]], kind="mergesort")]
        ptr = 0
        live = m
        level = 0.0
        while live > 0:
            while ptr < m and not alive[by_cap[ptr]]:
                ptr += 1
            delta = np.inf
            for k in range(nt):
                l = touched[k]
                if cnt[l] > 0:
                    share = resid[l] / cnt[l]
                    if share < delta:
                        delta = share
            if ptr < m:
                head = caps[by_cap[ptr]] - level
                if head < delta:
                    delta = head
            level += delta
            nh = 0
            for k in range(nt):
                l = touched[k]
                if cnt[l] > 0:
                    resid[l] -= delta * cnt[l]
                    if resid[l] <= SAT_TOL * link_cap[l]:
                        resid[l] = 0.0
                        hit[nh] = l
                        nh += 1
            while ptr < m:
                j = by_cap[ptr]
                if alive[j]:
                    if level < caps[j] * (1.0 - SAT_TOL):
                        break
                    alive[j] = False
                    rates[j] = level
                    live -= 1
                    f = order[j]
                    for q in range(route_start[f], route_start[f] + route_len[f]):
                        cnt[route_links[q]] -= 1
                ptr += 1
            for h in range(nh):
                l = hit[h]
                for a in range(off[l], off[l] + fill[l] - off[l]):
                    j = adj[a]
                    if alive[j]:
                        alive[j] = False
                        rates[j] = level
                        live -= 1
                        f = order[j]
                        for q in range(route_start[f], route_start[f] + route_len[f]):
                            cnt[route_links[q]] -= 1
        for k in range(nt):
            seen[touched[k]] = False
    return rates


@njit(cache=True)
def _classes_jit(keys):
    k = keys.shape[0]
    n = keys.shape[1]
    order = np.arange(n)
    for j in range(k - 1, -1, -1):
        col = keys[j][order]
        order = order[np.argsort(col, kind="mergesort")]
    starts = np.empty(n + 1, np.int64)
    m = 0
    for i in range(n):
        new = i == 0
        if not new:
            a = order[i - 1]
            b = order[i]
            for j in range(k):
                if keys[j, a] != keys[j, b]:
                    new = True
                    break
        if new:
            starts[m] = i
            m += 1
    starts[m] = n
    return order, starts[: m + 1]


@njit(cache=True)
def _allocate_jit(keys, active, caps, route_start, route_len, route_links, link_cap):
    local, class_start = _classes_jit(keys)
    rates = _fill_jit(active[local], class_start, caps[local], route_start, route_len,
                      route_links, link_cap)
    return local, rates


@njit(cache=True)
def _allocate_into_jit(keys, active, caps, route_start, route_len, route_links, link_cap,
                       remaining, rate_out, eta_out, now):
    local, rates = _allocate_jit(keys, active, caps, route_start, route_len, route_links, link_cap)
    nxt = np.inf
    for k in range(local.shape[0]):
        f = active[local[k]]
        r = rates[k]
        rate_out[f] = r
        if r > 0.0:
            e = now + remaining[f] / r
        else:
            e = np.inf
        eta_out[f] = e
        if e < nxt:
            nxt = e
    return nxt


@njit(cache=True)
def _sig_round_jit(x, digits):
    out = x.copy()
    for i in range(x.shape[0]):
        v = x[i]
        if v > 0.0 and np.isfinite(v):
            mag = 10.0 ** np.floor(np.log10(v))
            out[i] = np.round(v / mag, digits - 1) * mag
    return out


@njit(cache=True)
def _karuna_caps_jit(active, remaining, deadline, now, route_start, route_len, route_links, link_cap):
    n = active.shape[0]
    caps = np.full(n, np.inf)
    reserved = np.zeros(n, np.bool_)
    demand = np.zeros(link_cap.shape[0])
    for k in range(n):
        f = active[k]
        d = deadline[f]
        if np.isfinite(d):
            reserved[k] = True
            slack = d - now
            if slack > 0.0:
                caps[k] = remaining[f] / slack
                for q in range(route_start[f], route_start[f] + route_len[f]):
                    demand[route_links[q]] += caps[k]
    for k in range(n):
        f = active[k]
        if reserved[k] and np.isfinite(caps[k]):
            scale = 1.0
            for q in range(route_start[f], route_start[f] + route_len[f]):
                l = route_links[q]
                if demand[l] > link_cap[l]:
                    sc = link_cap[l] / demand[l]
                    if sc < scale:
                        scale = sc
            caps[k] *= scale
    return reserved, caps


@njit(cache=True)
def _mfs_keys_jit(active, band, level, batch, batch_rank, deadline, release, request, stage,
                  req_deadline, pruned, scavenge):
    n = active.shape[0]
    keys = np.empty((4, n))
    nb = batch_rank.shape[0]
    for k in range(n):
        f = active[k]
        b = band[f]
        keys[0, k] = b
        keys[1, k] = level[f]
        keys[3, k] = release[f]
        if b == 1:
            bid = batch[f]
            keys[2, k] = batch_rank[bid] if 0 <= bid < nb else 0.0
        else:
            keys[2, k] = deadline[f]
        # collectives are shared by batch-mates and keep their place
        if scavenge and pruned[request[f]] and stage[f] != 2:
            keys[0, k] = 3
            keys[1, k] = 0
            keys[2, k] = req_deadline[f]
    return keys


@njit(cache=True)
def _link_load_jit(flows, weights, route_start, route_len, route_links, n_links):
    out = np.zeros(n_links)
    for k in range(flows.shape[0]):
        f = flows[k]
        w = weights[k]
        s = route_start[f]
        for q in range(s, s + route_len[f]):
            out[route_links[q]] += w
    return out


@njit(cache=True)
def _mlu_jit(ids, now, remaining, deadline, release, ref_rate, urg, rate, route_start, route_len,
             route_links, link_cap):
    n = ids.shape[0]
    out = np.zeros(n)
    for j in range(n):
        i = ids[j]
        rem = remaining[i]
        if rem <= 0.0:
            continue
        d = deadline[i]
        left = d - now
        cap = ref_rate[i]
        s = route_start[i]
        ln = route_len[i]
        if urg.shape[0] > 0 and ln > 0:
            r = release[i]
            cap = np.inf
            for q in range(s, s + ln):
                l = route_links[q]
                used = 0.0
                for u in urg:
                    du = deadline[u]
                    if du > d or (du == d and (release[u] > r or (release[u] == r and u >= i))):
                        continue
                    for qq in range(route_start[u], route_start[u] + route_len[u]):
                        if route_links[qq] == l:
                            used += rate[u]
                            break
                c = link_cap[l] - used
                if c < cap:
                    cap = c
        if left <= 0.0 or cap <= 0.0:
            out[j] = np.inf
        else:
            out[j] = rem / (left * cap)
    return out


# ---------------------------------------------------------------------------
# numpy fallbacks
# ---------------------------------------------------------------------------

def _expand(flows, route_start, route_len, route_links):
    lens = route_len[flows]
    total = int(lens.sum())
    rows = np.repeat(np.arange(flows.shape[0]), lens)
    offs = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
    links = route_links[np.repeat(route_start[flows], lens) + offs]
    return rows, links, lens


def _fill_numpy(order, class_start, caps, route_start, route_len, route_links, link_cap):
    n_links = link_cap.shape[0]
    resid = link_cap.astype(np.float64).copy()
    rates = np.zeros(order.shape[0])
    floor = SAT_TOL * link_cap
    for c in range(class_start.shape[0] - 1):
        lo, hi = int(class_start[c]), int(class_start[c + 1])
        flows = order[lo:hi]
        cap = caps[lo:hi]
        rows, links, lens = _expand(flows, route_start, route_len, route_links)
        rate = np.zeros(hi - lo)
        empty = lens == 0
        rate[empty] = cap[empty]
        blocked = np.bincount(rows, weights=(resid <= floor)[links], minlength=hi - lo) > 0
        live = ~empty & ~blocked & (cap > 0)
        while live.any():
            on = live[rows]
            cnt = np.bincount(links[on], minlength=n_links)
            used = cnt > 0
            delta = min((resid[used] / cnt[used]).min(), (cap[live] - rate[live]).min())
            rate[live] += delta
            resid -= delta * cnt
            resid[used & (resid <= floor)] = 0.0
            sat = np.bincount(rows, weights=(resid == 0.0)[links], minlength=hi - lo) > 0
            live &= ~sat
            live[live] = rate[live] < cap[live] * (1.0 - SAT_TOL)
        rates[lo:hi] = rate
    return rates


def _link_load_numpy(flows, weights, route_start, route_len, route_links, n_links):
    rows, links, _ = _expand(flows, route_start, route_len, route_links)
    return np.bincount(links, weights=np.asarray(weights, dtype=np.float64)[rows], minlength=n_links)


def progressive_fill(order, class_start, caps, route_start, route_len, route_links, link_cap,
                     use_numba=None):
    """Strict-priority max-min rates for ``order`` (flow ids sorted by class).

    ``class_start`` holds class boundaries into ``order``; ``caps`` is aligned
    with ``order`` (``inf`` = uncapped). Returns rates aligned with ``order``.
    """
    jit = USE_NUMBA if use_numba is None else (use_numba and NUMBA_AVAILABLE)
    fn = _fill_jit if jit else _fill_numpy
    return fn(order, class_start, caps, route_start, route_len, route_links, link_cap)


def _mlu_numpy(ids, now, remaining, deadline, release, ref_rate, urg, rate, route_start, route_len,
               route_links, link_cap):
    rem = remaining[ids]
    left = deadline[ids] - now
    cap = ref_rate[ids].copy()
    if urg.size:
        for j, i in enumerate(ids):
            if route_len[i] == 0:
                continue
            d, r = deadline[i], release[i]
            du, ru = deadline[urg], release[urg]
            ahead = (du < d) | ((du == d) & ((ru < r) | ((ru == r) & (urg < i))))
            sel = urg[ahead]
            load = _link_load_numpy(sel, rate[sel], route_start, route_len, route_links,
                                    link_cap.shape[0])
            route = route_links[route_start[i]: route_start[i] + route_len[i]]
            cap[j] = (link_cap[route] - load[route]).min()
    out = np.zeros(ids.shape[0])
    live = rem > 0
    bad = live & ((left <= 0) | (cap <= 0))
    ok = live & ~bad
    out[bad] = np.inf
    out[ok] = rem[ok] / (left[ok] * cap[ok])
    return out


def mlu(ids, now, remaining, deadline, release, ref_rate, urg, rate, route_start, route_len,
        route_links, link_cap, use_numba=None):
    """Minimal link utilisation of each flow in ``ids``.

    The residual capacity on each route link excludes the rates of ``urg``
    flows ranked strictly ahead by (deadline, release, id).
    """
    jit = USE_NUMBA if use_numba is None else (use_numba and NUMBA_AVAILABLE)
    fn = _mlu_jit if jit else _mlu_numpy
    return fn(ids, now, remaining, deadline, release, ref_rate, urg, rate, route_start, route_len,
              route_links, link_cap)


def _allocate_numpy(keys, active, caps, route_start, route_len, route_links, link_cap):
    from .policies.base import group_classes

    local, class_start = group_classes(list(keys))
    rates = _fill_numpy(active[local], class_start, caps[local], route_start, route_len,
                        route_links, link_cap)
    return local, rates


def allocate(keys, active, caps, route_start, route_len, route_links, link_cap, use_numba=None):
    """Group ``active`` flows by the rows of ``keys`` (most significant first) and fill.

    Returns ``(local, rates)``: ``active[local]`` is the service order and
    ``rates`` is aligned with it.
    """
    jit = USE_NUMBA if use_numba is None else (use_numba and NUMBA_AVAILABLE)
    fn = _allocate_jit if jit else _allocate_numpy
    return fn(keys, active, caps, route_start, route_len, route_links, link_cap)


def _mfs_keys_numpy(active, band, level, batch, batch_rank, deadline, release, request, stage,
                    req_deadline, pruned, scavenge):
    keys = np.empty((4, active.size))
    keys[0] = band[active]
    keys[1] = level[active]
    early = keys[0] == 1
    bid = batch[active]
    ok = (bid >= 0) & (bid < batch_rank.shape[0])
    rank = np.zeros(active.size)
    rank[ok] = batch_rank[bid[ok]]
    keys[2] = np.where(early, rank, deadline[active])
    keys[3] = release[active]
    if scavenge:
        sc = pruned[request[active]] & (stage[active] != 2)
        keys[0, sc] = 3
        keys[1, sc] = 0
        keys[2, sc] = req_deadline[active][sc]
    return keys


def mfs_keys(active, band, level, batch, batch_rank, deadline, release, request, stage,
             req_deadline, pruned, scavenge, use_numba=None):
    """Sort keys (band, level, rank-or-deadline, release) for the multi-level queue.

    Early flows break ties by their batch's rank, the other bands by deadline.
    With ``scavenge`` set, non-collective flows of pruned requests drop to the
    scavenger band ordered by request deadline.
    """
    jit = USE_NUMBA if use_numba is None else (use_numba and NUMBA_AVAILABLE)
    fn = _mfs_keys_jit if jit else _mfs_keys_numpy
    return fn(active, band, level, batch, batch_rank, deadline, release, request, stage,
              req_deadline, pruned, scavenge)


def _allocate_into_numpy(keys, active, caps, route_start, route_len, route_links, link_cap,
                         remaining, rate_out, eta_out, now):
    local, rates = _allocate_numpy(keys, active, caps, route_start, route_len, route_links, link_cap)
    order = active[local]
    rate_out[order] = rates
    with np.errstate(divide="ignore"):
        eta = np.where(rates > 0, now + remaining[order] / np.where(rates > 0, rates, 1.0), np.inf)
    eta_out[order] = eta
    return eta.min() if eta.size else np.inf


def allocate_into(keys, active, caps, route_start, route_len, route_links, link_cap, remaining,
                  rate_out, eta_out, now, use_numba=None):
    """:func:`allocate`, writing rates and projected completions into ``rate_out`` and
    ``eta_out`` (indexed by flow id). Returns the earliest completion."""
    jit = USE_NUMBA if use_numba is None else (use_numba and NUMBA_AVAILABLE)
    fn = _allocate_into_jit if jit else _allocate_into_numpy
    return fn(keys, active, caps, route_start, route_len, route_links, link_cap, remaining,
              rate_out, eta_out, now)


def link_load(flows, weights, route_start, route_len, route_links, n_links, use_numba=None):
    jit = USE_NUMBA if use_numba is None else (use_numba and NUMBA_AVAILABLE)
    fn = _link_load_jit if jit else _link_load_numpy
    return fn(flows, np.asarray(weights, dtype=np.float64), route_start, route_len, route_links, n_links)
