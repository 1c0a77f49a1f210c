"""Compiled inner loops for thinning and pixel matching.

Neighbourhood codes use the Guo-Hall ordering x1..x8 = E, NE, N, NW, W, SW,
S, SE, with x1 in bit 0.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_RING_DY = (0, -1, -1, -1, 0, 1, 1, 1)
_RING_DX = (1, 1, 0, -1, -1, -1, 0, 1)


def _guo_hall_luts() -> tuple[np.ndarray, np.ndarray]:
    first = np.zeros(256, dtype=np.bool_)
    second = np.zeros(256, dtype=np.bool_)
    for code in range(256):
        x = [None] + [(code >> j) & 1 for j in range(8)] + [code & 1]
        crossings = sum((not x[2 * i - 1]) and (x[2 * i] or x[2 * i + 1]) for i in range(1, 5))
        n1 = sum(x[2 * k - 1] or x[2 * k] for k in range(1, 5))
        n2 = sum(x[2 * k] or x[2 * k + 1] for k in range(1, 5))
        if crossings != 1 or not 2 <= min(n1, n2) <= 3:
            continue
        first[code] = not ((x[2] or x[3] or not x[8]) and x[1])
        second[code] = not ((x[6] or x[7] or not x[4]) and x[5])
    return first, second


def _ring_component_counts() -> np.ndarray:
    """Number of 8-connected foreground groups among the 8 neighbours, per code."""
    counts = np.zeros(256, dtype=np.int8)
    for code in range(256):
        on = [j for j in range(8) if (code >> j) & 1]
        seen = set()
        groups = 0
        for start in on:
            if start in seen:
                continue
            groups += 1
            stack = [start]
            seen.add(start)
            while stack:
                a = stack.pop()
                for b in on:
                    if b not in seen and max(abs(_RING_DY[a] - _RING_DY[b]), abs(_RING_DX[a] - _RING_DX[b])) == 1:
                        seen.add(b)
                        stack.append(b)
        counts[code] = groups
    return counts


GUO_HALL_FIRST, GUO_HALL_SECOND = _guo_hall_luts()
RING_GROUPS = _ring_component_counts()


@njit(cache=True)
def _code(img, y, x):
    return (img[y, x + 1] | (img[y - 1, x + 1] << 1) | (img[y - 1, x] << 2) | (img[y - 1, x - 1] << 3)
            | (img[y, x - 1] << 4) | (img[y + 1, x - 1] << 5) | (img[y + 1, x] << 6) | (img[y + 1, x + 1] << 7))


@njit(cache=True)
def _guo_hall_pass(img, ys, xs, n, lut1, lut2):
    """Run Guo-Hall to convergence on a zero-bordered uint8 image. Returns live count."""
    dele = np.empty(n, dtype=np.bool_)
    while True:
        removed = 0
        for sub in range(2):
            lut = lut1 if sub == 0 else lut2
            for i in range(n):
                dele[i] = lut[_code(img, ys[i], xs[i])]
            for i in range(n):
                if dele[i]:
                    img[ys[i], xs[i]] = 0
                    removed += 1
            m = 0
            for i in range(n):
                if img[ys[i], xs[i]]:
                    ys[m] = ys[i]
                    xs[m] = xs[i]
                    m += 1
            n = m
        if removed == 0:
            return n


@njit(cache=True)
def _break_blocks(img, ys, xs, n, ring_groups):
    """Remove pixels of fully-on 2x2 blocks when that keeps 8-connectivity.

    Sequential raster-order scan; returns the number of pixels removed.
    """
    removed = 0
    for i in range(n):
        y = ys[i]
        x = xs[i]
        if not img[y, x]:
            continue
        if not (img[y, x + 1] and img[y + 1, x] and img[y + 1, x + 1]):
            continue
        for k in range(4):
            cy = y + (k >> 1)
            cx = x + (k & 1)
            if ring_groups[_code(img, cy, cx)] == 1:
                img[cy, cx] = 0
                removed += 1
                break
    return removed


@njit(cache=True)
def thin_inplace(img, lut1, lut2, ring_groups):
    """Thin a zero-bordered uint8 image in place."""
    h, w = img.shape
    total = 0
    for y in range(h):
        for x in range(w):
            if img[y, x]:
                total += 1
    ys = np.empty(total, dtype=np.int64)
    xs = np.empty(total, dtype=np.int64)
    k = 0
    for y in range(h):
        for x in range(w):
            if img[y, x]:
                ys[k] = y
                xs[k] = x
                k += 1
    n = total
    while True:
        n = _guo_hall_pass(img, ys, xs, n, lut1, lut2)
        if _break_blocks(img, ys, xs, n, ring_groups) == 0:
            return
        m = 0
        for i in range(n):
            if img[ys[i], xs[i]]:
                ys[m] = ys[i]
                xs[m] = xs[i]
                m += 1
        n = m


@njit(cache=True)
def guo_hall_inplace(img, lut1, lut2):
    """Plain Guo-Hall thinning of a zero-bordered uint8 image, in place."""
    h, w = img.shape
    total = 0
    for y in range(h):
        for x in range(w):
            if img[y, x]:
                total += 1
    ys = np.empty(total, dtype=np.int64)
    xs = np.empty(total, dtype=np.int64)
    k = 0
    for y in range(h):
        for x in range(w):
            if img[y, x]:
                ys[k] = y
                xs[k] = x
                k += 1
    _guo_hall_pass(img, ys, xs, total, lut1, lut2)


@njit(cache=True)
def _slot_table(gt_index, reach):
    """Compact view of layered GT for neighbourhood scans.

    Returns a slot image padded by ``reach`` on every side (-1 where no layer
    has a GT pixel) and CSR ``(slot_start, slot_ids)`` listing the ids at each
    slot in layer order.
    """
    n_layers, h, w = gt_index.shape
    slots = np.full((h + 2 * reach, w + 2 * reach), -1, dtype=np.int32)
    n_slots = 0
    n_ids = 0
    for y in range(h):
        for x in range(w):
            c = 0
            for a in range(n_layers):
                if gt_index[a, y, x] >= 0:
                    c += 1
            if c:
                slots[y + reach, x + reach] = n_slots
                n_slots += 1
                n_ids += c
    slot_start = np.zeros(n_slots + 1, dtype=np.int64)
    slot_ids = np.empty(n_ids, dtype=np.int64)
    f = 0
    for y in range(h):
        for x in range(w):
            sl = slots[y + reach, x + reach]
            if sl >= 0:
                for a in range(n_layers):
                    j = gt_index[a, y, x]
                    if j >= 0:
                        slot_ids[f] = j
                        f += 1
                slot_start[sl + 1] = f
    return slots, slot_start, slot_ids


@njit(cache=True)
def _adjacency(py, px, slots, slot_start, slot_ids, reach, off_dy, off_dx):
    """Candidate GT ids per predicted pixel in ascending offset order.

    Returns CSR ``(start, adj, rank)`` where ``rank`` is each edge's offset
    index; within one offset, layers appear in order. Offsets must not
    exceed ``reach``.
    """
    n = py.shape[0]
    n_off = off_dy.shape[0]
    wp = slots.shape[1]
    flat = slots.ravel()
    lin = np.empty(n_off, dtype=np.int64)
    for k in range(n_off):
        lin[k] = off_dy[k] * wp + off_dx[k]
    start = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        base = (py[i] + reach) * wp + px[i] + reach
        deg = 0
        for k in range(n_off):
            sl = flat[base + lin[k]]
            if sl >= 0:
                deg += slot_start[sl + 1] - slot_start[sl]
        start[i + 1] = start[i] + deg
    adj = np.empty(start[n], dtype=np.int64)
    rank = np.empty(start[n], dtype=np.int64)
    for i in range(n):
        base = (py[i] + reach) * wp + px[i] + reach
        e = start[i]
        for k in range(n_off):
            sl = flat[base + lin[k]]
            if sl >= 0:
                for q in range(slot_start[sl], slot_start[sl + 1]):
                    adj[e] = slot_ids[q]
                    rank[e] = k
                    e += 1
    return start, adj, rank


@njit(cache=True)
def _restrict(start, adj, rank, lo, hi):
    """Sub-graph of edges whose GT id lies in ``[lo, hi)``, ids shifted by ``lo``."""
    n = start.shape[0] - 1
    keep = 0
    for e in range(start[n]):
        if lo <= adj[e] < hi:
            keep += 1
    s2 = np.zeros(n + 1, dtype=np.int64)
    a2 = np.empty(keep, dtype=np.int64)
    r2 = np.empty(keep, dtype=np.int64)
    f = 0
    for i in range(n):
        for e in range(start[i], start[i + 1]):
            if lo <= adj[e] < hi:
                a2[f] = adj[e] - lo
                r2[f] = rank[e]
                f += 1
        s2[i + 1] = f
    return s2, a2, r2


@njit(cache=True)
def _greedy_seed(start, adj, rank, n_off, match_p, match_g):
    """Take candidate pairs shortest offset first, pixels in scan order."""
    n = start.shape[0] - 1
    n_edges = start[n]
    # stable counting sort of edges by offset rank
    bucket = np.zeros(n_off + 1, dtype=np.int64)
    for e in range(n_edges):
        bucket[rank[e] + 1] += 1
    for k in range(n_off):
        bucket[k + 1] += bucket[k]
    order = np.empty(n_edges, dtype=np.int64)
    owner = np.empty(n_edges, dtype=np.int64)
    for i in range(n):
        for e in range(start[i], start[i + 1]):
            k = rank[e]
            order[bucket[k]] = adj[e]
            owner[bucket[k]] = i
            bucket[k] += 1
    for q in range(n_edges):
        i = owner[q]
        j = order[q]
        if match_p[i] < 0 and match_g[j] < 0:
            match_p[i] = j
            match_g[j] = i


@njit(cache=True)
def _transpose(start, adj, n_right):
    n = start.shape[0] - 1
    deg = np.zeros(n_right + 1, dtype=np.int64)
    for e in range(start[n]):
        deg[adj[e] + 1] += 1
    for j in range(n_right):
        deg[j + 1] += deg[j]
    t_adj = np.empty(start[n], dtype=np.int64)
    fill = deg[:n_right].copy()
    for i in range(n):
        for e in range(start[i], start[i + 1]):
            j = adj[e]
            t_adj[fill[j]] = i
            fill[j] += 1
    return deg, t_adj


@njit(cache=True)
def _hopcroft_karp(start, adj, match_l, match_r):
    """Augment ``match_l``/``match_r`` in place to a maximum matching."""
    n = start.shape[0] - 1
    inf = n + 1
    dist = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    it = np.empty(n, dtype=np.int64)
    stack = np.empty(n + 1, dtype=np.int64)
    via = np.empty(n + 1, dtype=np.int64)
    while True:
        head = 0
        tail = 0
        for i in range(n):
            if match_l[i] < 0 and start[i + 1] > start[i]:
                dist[i] = 0
                queue[tail] = i
                tail += 1
            else:
                dist[i] = inf
        found = False
        limit = inf
        while head < tail:
            u = queue[head]
            head += 1
            # layers past the first free vertex cannot lie on a shortest path
            if dist[u] >= limit:
                break
            for e in range(start[u], start[u + 1]):
                wu = match_r[adj[e]]
                if wu < 0:
                    found = True
                    limit = dist[u] + 1
                elif dist[wu] == inf:
                    dist[wu] = dist[u] + 1
                    queue[tail] = wu
                    tail += 1
        if not found:
            return

        for i in range(n):
            it[i] = start[i]
        for s in range(n):
            if match_l[s] >= 0 or dist[s] != 0:
                continue
            top = 0
            stack[0] = s
            while top >= 0:
                u = stack[top]
                if it[u] == start[u + 1]:
                    dist[u] = inf
                    top -= 1
                    continue
                v = adj[it[u]]
                it[u] += 1
                wu = match_r[v]
                if wu < 0:
                    via[top] = v
                    for lvl in range(top + 1):
                        a = stack[lvl]
                        b = via[lvl]
                        match_l[a] = b
                        match_r[b] = a
                    break
                if dist[wu] == dist[u] + 1:
                    via[top] = v
                    top += 1
                    stack[top] = wu


@njit(cache=True)
def _max_matching(start, adj, rank, n_off, n_gt):
    """Greedy seed, then Hopcroft-Karp from the side with fewer free vertices."""
    n = start.shape[0] - 1
    match_p = np.full(n, -1, dtype=np.int64)
    match_g = np.full(n_gt, -1, dtype=np.int64)
    _greedy_seed(start, adj, rank, n_off, match_p, match_g)
    t_start, t_adj = _transpose(start, adj, n_gt)
    free_p = 0
    for i in range(n):
        if match_p[i] < 0 and start[i + 1] > start[i]:
            free_p += 1
    free_g = 0
    for j in range(n_gt):
        if match_g[j] < 0 and t_start[j + 1] > t_start[j]:
            free_g += 1
    if free_g < free_p:
        _hopcroft_karp(t_start, t_adj, match_g, match_p)
    else:
        _hopcroft_karp(start, adj, match_p, match_g)
    return match_p


@njit(cache=True)
def _reach(off_dy, off_dx):
    r = 0
    for k in range(off_dy.shape[0]):
        r = max(r, abs(off_dy[k]), abs(off_dx[k]))
    return r


@njit(cache=True)
def match_pixels(py, px, gt_index, n_gt, off_dy, off_dx):
    """Maximum-cardinality matching of predicted pixels to GT pixels.

    ``gt_index`` has shape ``(layers, h, w)`` and holds the GT pixel id at
    each location of each layer or -1; ids must be unique across layers.
    Offsets must be sorted by ascending length; candidate pairs are seeded
    greedily in that order, then augmenting paths make the matching maximum.
    Returns, per predicted pixel, the matched GT id or -1.
    """
    reach = _reach(off_dy, off_dx)
    slots, slot_start, slot_ids = _slot_table(gt_index, reach)
    start, adj, rank = _adjacency(py, px, slots, slot_start, slot_ids, reach, off_dy, off_dx)
    return _max_matching(start, adj, rank, off_dy.shape[0], n_gt)


@njit(cache=True)
def match_counts(py, px, slots, slot_start, slot_ids, bounds, off_dy, off_dx):
    """Matched counts against layered GT with ids ``bounds[a] <= id < bounds[a+1]``.

    ``slots``/``slot_start``/``slot_ids`` come from :func:`_slot_table`.
    Returns ``(cnt_p, cnt_r)``: predicted pixels covered by one matching
    against all layers together, and the summed sizes of the per-layer
    maximum matchings. One adjacency scan serves every matching.
    """
    n_off = off_dy.shape[0]
    reach = _reach(off_dy, off_dx)
    start, adj, rank = _adjacency(py, px, slots, slot_start, slot_ids, reach, off_dy, off_dx)
    cnt_p = 0
    for m in _max_matching(start, adj, rank, n_off, bounds[-1]):
        if m >= 0:
            cnt_p += 1
    cnt_r = 0
    for a in range(bounds.shape[0] - 1):
        s2, a2, r2 = _restrict(start, adj, rank, bounds[a], bounds[a + 1])
        for m in _max_matching(s2, a2, r2, n_off, bounds[a + 1] - bounds[a]):
            if m >= 0:
                cnt_r += 1
    return cnt_p, cnt_r
