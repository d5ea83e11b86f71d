"""Compiled inner loops: octree construction, moments, traversal and force sums.

Everything here is ``nogil`` so the static-chunk and dataflow backends can run
kernels from several Python threads at once.  Accelerations are accumulated
with a correctly rounded sum (same algorithm as :func:`math.fsum`), which makes
the result independent of source order.
"""
import numpy as np
from numba import njit

MAX_DEPTH = 64
_NPARTIALS = 64

EMPTY, LEAF, INTERNAL = 0, 1, 2


@njit(nogil=True, cache=True)
def _fsum_add(partials, n, x):
    i = 0
    for k in range(n):
        y = partials[k]
        if abs(x) < abs(y):
            x, y = y, x
        hi = x + y
        lo = y - (hi - x)
        if lo != 0.0:
            partials[i] = lo
            i += 1
        x = hi
    partials[i] = x
    return i + 1


@njit(nogil=True, cache=True)
def _fsum_result(partials, n):
    # round-half-even correction, as in CPython's math.fsum
    hi = 0.0
    if n > 0:
        n -= 1
        hi = partials[n]
        lo = 0.0
        while n > 0:
            x = hi
            n -= 1
            y = partials[n]
            hi = x + y
            yr = hi - x
            lo = y - yr
            if lo != 0.0:
                break
        if n > 0 and ((lo < 0.0 and partials[n - 1] < 0.0) or (lo > 0.0 and partials[n - 1] > 0.0)):
            y = lo * 2.0
            x = hi + y
            yr = x - hi
            if y == yr:
                hi = x
    return hi


@njit(nogil=True, cache=True)
def exact_sum(values):
    partials = np.empty(_NPARTIALS)
    n = 0
    for v in values:
        n = _fsum_add(partials, n, v)
    return _fsum_result(partials, n)


@njit(nogil=True, cache=True)
def _octant(p, c):
    k = 0
    if p[0] >= c[0]:
        k |= 1
    if p[1] >= c[1]:
        k |= 2
    if p[2] >= c[2]:
        k |= 4
    return k


@njit(nogil=True, cache=True)
def _grow(center, half, child, kind, leaf, depth):
    cap = 2 * half.shape[0]
    c2 = np.empty((cap, 3))
    c2[: center.shape[0]] = center
    h2 = np.empty(cap)
    h2[: half.shape[0]] = half
    ch2 = np.full((cap, 8), -1, np.int64)
    ch2[: child.shape[0]] = child
    k2 = np.zeros(cap, np.int8)
    k2[: kind.shape[0]] = kind
    l2 = np.full(cap, -1, np.int64)
    l2[: leaf.shape[0]] = leaf
    d2 = np.zeros(cap, np.int64)
    d2[: depth.shape[0]] = depth
    return c2, h2, ch2, k2, l2, d2


@njit(nogil=True, cache=True)
def build_tree(pos, root_center, root_half):
    """Insert particles one at a time; returns node arrays plus an error pair.

    ``err`` is ``(-1, -1)`` on success, else the indices of two particles that
    could not be separated within ``MAX_DEPTH`` levels.
    """
    n = pos.shape[0]
    cap = 2 * n + 16
    center = np.empty((cap, 3))
    half = np.empty(cap)
    child = np.full((cap, 8), -1, np.int64)
    kind = np.zeros(cap, np.int8)
    leaf = np.full(cap, -1, np.int64)
    depth = np.zeros(cap, np.int64)
    center[0] = root_center
    half[0] = root_half
    count = 1
    for i in range(n):
        node = 0
        while True:
            if kind[node] == EMPTY:
                kind[node] = LEAF
                leaf[node] = i
                break
            if kind[node] == LEAF:
                j = leaf[node]
                if depth[node] >= MAX_DEPTH:
                    return center[:count], half[:count], child[:count], kind[:count], leaf[:count], depth[:count], i, j
                if count + 1 > center.shape[0]:
                    center, half, child, kind, leaf, depth = _grow(center, half, child, kind, leaf, depth)
                kind[node] = INTERNAL
                leaf[node] = -1
                o = _octant(pos[j], center[node])
                c = count
                count += 1
                h = 0.5 * half[node]
                for a in range(3):
                    center[c, a] = center[node, a] + (h if (o >> a) & 1 else -h)
                half[c] = h
                kind[c] = LEAF
                leaf[c] = j
                depth[c] = depth[node] + 1
                child[node, o] = c
            o = _octant(pos[i], center[node])
            c = child[node, o]
            if c == -1:
                if count + 1 > center.shape[0]:
                    center, half, child, kind, leaf, depth = _grow(center, half, child, kind, leaf, depth)
                c = count
                count += 1
                h = 0.5 * half[node]
                for a in range(3):
                    center[c, a] = center[node, a] + (h if (o >> a) & 1 else -h)
                half[c] = h
                kind[c] = LEAF
                leaf[c] = i
                depth[c] = depth[node] + 1
                child[node, o] = c
                break
            node = c
    return center[:count], half[:count], child[:count], kind[:count], leaf[:count], depth[:count], -1, -1


@njit(nogil=True, cache=True)
def compute_moments(child, kind, leaf, pos, mass):
    # children always have larger ids than their parent
    m = child.shape[0]
    node_mass = np.zeros(m)
    com = np.zeros((m, 3))
    for node in range(m - 1, -1, -1):
        if kind[node] == LEAF:
            p = leaf[node]
            node_mass[node] = mass[p]
            com[node] = pos[p]
        elif kind[node] == INTERNAL:
            tm = 0.0
            wx = 0.0
            wy = 0.0
            wz = 0.0
            for k in range(8):
                c = child[node, k]
                if c >= 0:
                    mc = node_mass[c]
                    tm += mc
                    wx += mc * com[c, 0]
                    wy += mc * com[c, 1]
                    wz += mc * com[c, 2]
            node_mass[node] = tm
            com[node, 0] = wx / tm
            com[node, 1] = wy / tm
            com[node, 2] = wz / tm
    return node_mass, com


@njit(nogil=True, cache=True)
def preorder(child, kind):
    m = child.shape[0]
    out = np.empty(m, np.int64)
    if m == 0 or kind[0] == EMPTY:
        return out[:0]
    stack = np.empty(8 * MAX_DEPTH + 16, np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    n = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        out[n] = node
        n += 1
        for k in range(7, -1, -1):
            c = child[node, k]
            if c >= 0:
                stack[sp] = c
                sp += 1
    return out[:n]


@njit(nogil=True, cache=True)
def mac_accept(side, com, target, theta):
    if theta <= 0.0:
        return False
    dx = com[0] - target[0]
    dy = com[1] - target[1]
    dz = com[2] - target[2]
    d = np.sqrt(dx * dx + dy * dy + dz * dz)
    if d == 0.0:
        return False
    return side < theta * d


@njit(nogil=True, cache=True)
def _walk(target_idx, target, theta, child, kind, leaf, half, com, buf, stack):
    n = 0
    if kind[0] == EMPTY:
        return buf, 0
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if kind[node] == LEAF:
            if leaf[node] == target_idx:
                continue
        elif not mac_accept(2.0 * half[node], com[node], target, theta):
            for k in range(7, -1, -1):
                c = child[node, k]
                if c >= 0:
                    stack[sp] = c
                    sp += 1
            continue
        if n == buf.shape[0]:
            nb = np.empty(2 * buf.shape[0], np.int64)
            nb[:n] = buf[:n]
            buf = nb
        buf[n] = node
        n += 1
    return buf, n


@njit(nogil=True, cache=True)
def interaction_list(target_idx, target, theta, child, kind, leaf, half, com):
    buf = np.empty(64, np.int64)
    stack = np.empty(8 * MAX_DEPTH + 16, np.int64)
    buf, n = _walk(target_idx, target, theta, child, kind, leaf, half, com, buf, stack)
    return buf[:n].copy()


@njit(nogil=True, cache=True)
def interaction_lists(indices, pos, theta, child, kind, leaf, half, com):
    """CSR form: lists for ``indices`` as ``(offsets, node_ids)``."""
    k = indices.shape[0]
    offsets = np.zeros(k + 1, np.int64)
    out = np.empty(max(64, 16 * k), np.int64)
    buf = np.empty(64, np.int64)
    stack = np.empty(8 * MAX_DEPTH + 16, np.int64)
    total = 0
    for t in range(k):
        i = indices[t]
        buf, n = _walk(i, pos[i], theta, child, kind, leaf, half, com, buf, stack)
        if total + n > out.shape[0]:
            no = np.empty(max(2 * out.shape[0], total + n), np.int64)
            no[:total] = out[:total]
            out = no
        out[total : total + n] = buf[:n]
        total += n
        offsets[t + 1] = total
    return offsets, out[:total].copy()


@njit(nogil=True, cache=True)
def term(px, py, pz, sx, sy, sz, sm, g, eps2):
    """Acceleration contribution of one source; r2 == 0 yields non-finite output."""
    dx = sx - px
    dy = sy - py
    dz = sz - pz
    r2 = dx * dx + dy * dy + dz * dz + eps2
    f = g * sm / (r2 * np.sqrt(r2))
    return f * dx, f * dy, f * dz


@njit(nogil=True, cache=True)
def _two_sum(a, b):
    s = a + b
    bp = s - a
    return s, (a - (s - bp)) + (b - bp)


@njit(nogil=True, cache=True)
def _dd_add(st, k, x):
    # st[k] = (hi, lo, sum|x|) for component k
    s, e = _two_sum(st[k, 0], x)
    lo = st[k, 1] + e
    st[k, 0], st[k, 1] = _two_sum(s, lo)
    st[k, 2] += abs(x)


@njit(nogil=True, cache=True)
def _dd_certain(hi, lo, absum, n):
    """Rounded double-double value if provably equal to the correctly rounded sum, else nan."""
    if absum == 0.0:
        return 0.0
    r, err = _two_sum(hi, lo)
    bound = (n + 2) * 2.0 ** -100 * absum + n * 2.0 ** -1060
    if r == 0.0:
        return np.nan
    gap = abs(r) - abs(np.nextafter(r, 0.0))
    if abs(err) + bound < 0.5 * gap:
        return r
    return np.nan


@njit(nogil=True, cache=True)
def _sum_terms(px, py, pz, sx, sy, sz, sm, g, eps2, out):
    """Correctly rounded sum of per-source terms.

    A double-double accumulator with an a-priori error bound certifies the
    rounding; only uncertifiable sums are redone with exact partials.
    Returns False on a coincident source with zero softening.
    """
    n = sm.shape[0]
    st = np.zeros((3, 3))
    for j in range(n):
        dx = sx[j] - px
        dy = sy[j] - py
        dz = sz[j] - pz
        r2 = dx * dx + dy * dy + dz * dz + eps2
        if r2 == 0.0:
            return False
        f = g * sm[j] / (r2 * np.sqrt(r2))
        _dd_add(st, 0, f * dx)
        _dd_add(st, 1, f * dy)
        _dd_add(st, 2, f * dz)
    for a in range(3):
        out[a] = _dd_certain(st[a, 0], st[a, 1], st[a, 2], n)
    if np.isnan(out[0]) or np.isnan(out[1]) or np.isnan(out[2]):
        parts = np.empty((3, _NPARTIALS))
        counts = np.zeros(3, np.int64)
        for j in range(n):
            tx, ty, tz = term(px, py, pz, sx[j], sy[j], sz[j], sm[j], g, eps2)
            counts[0] = _fsum_add(parts[0], counts[0], tx)
            counts[1] = _fsum_add(parts[1], counts[1], ty)
            counts[2] = _fsum_add(parts[2], counts[2], tz)
        for a in range(3):
            out[a] = _fsum_result(parts[a], counts[a])
    return True


@njit(nogil=True, cache=True)
def accel_from_rows(target, src, g, eps2):
    """``src`` rows are ``(mass, x, y, z, ...)``. Status 0 ok, 1 singular."""
    out = np.zeros(3)
    ok = _sum_terms(target[0], target[1], target[2], src[:, 1], src[:, 2], src[:, 3], src[:, 0], g, eps2, out)
    return out, 0 if ok else 1


@njit(nogil=True, cache=True)
def accel_from_nodes(target, nodes, node_mass, com, g, eps2):
    out = np.zeros(3)
    c = com[nodes]
    ok = _sum_terms(target[0], target[1], target[2], c[:, 0], c[:, 1], c[:, 2], node_mass[nodes], g, eps2, out)
    return out, 0 if ok else 1


@njit(nogil=True, cache=True)
def bh_accel_range(start, stop, pos, theta, child, kind, leaf, half, node_mass, com, g, eps2):
    """Tree walk + force sum for particles ``start..stop-1`` in index order."""
    acc = np.zeros((stop - start, 3))
    lens = np.zeros(stop - start, np.int64)
    buf = np.empty(64, np.int64)
    stack = np.empty(8 * MAX_DEPTH + 16, np.int64)
    sx = np.empty(64)
    sy = np.empty(64)
    sz = np.empty(64)
    sm = np.empty(64)
    for i in range(start, stop):
        buf, n = _walk(i, pos[i], theta, child, kind, leaf, half, com, buf, stack)
        lens[i - start] = n
        if n > sm.shape[0]:
            sx = np.empty(buf.shape[0])
            sy = np.empty(buf.shape[0])
            sz = np.empty(buf.shape[0])
            sm = np.empty(buf.shape[0])
        for t in range(n):
            node = buf[t]
            sx[t] = com[node, 0]
            sy[t] = com[node, 1]
            sz[t] = com[node, 2]
            sm[t] = node_mass[node]
        if not _sum_terms(pos[i, 0], pos[i, 1], pos[i, 2], sx[:n], sy[:n], sz[:n], sm[:n], g, eps2, acc[i - start]):
            return acc, lens, i
    return acc, lens, -1


@njit(nogil=True, cache=True)
def direct_accel(pos, mass, i, g, eps2):
    n = pos.shape[0]
    idx = np.empty(n - 1, np.int64)
    k = 0
    for j in range(n):
        if j != i:
            idx[k] = j
            k += 1
    out = np.zeros(3)
    ok = _sum_terms(pos[i, 0], pos[i, 1], pos[i, 2], pos[idx, 0], pos[idx, 1], pos[idx, 2], mass[idx], g, eps2, out)
    return out, 0 if ok else 1


@njit(nogil=True, cache=True)
def potential_energy(pos, mass, g, eps2):
    n = pos.shape[0]
    parts = np.empty(_NPARTIALS)
    cnt = 0
    for i in range(n):
        row = 0.0
        for j in range(i + 1, n):
            dx = pos[j, 0] - pos[i, 0]
            dy = pos[j, 1] - pos[i, 1]
            dz = pos[j, 2] - pos[i, 2]
            row += mass[j] / np.sqrt(dx * dx + dy * dy + dz * dz + eps2)
        cnt = _fsum_add(parts, cnt, -g * mass[i] * row)
    return _fsum_result(parts, cnt)
