"""Numba kernel implementations.

Scalar mirrors of ``numpy_impl``; see that module for the Philox counter
mapping and the algorithm notes.  Chain ensembles parallelize over chains
with each chain writing its own output slot, so results are independent of
the numba thread count.
"""

import numpy as np
from numba import njit, prange

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_SH32 = np.uint64(32)
_SH11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def _mulhilo(a, b):
    al = a & _MASK32
    ah = a >> _SH32
    bl = b & _MASK32
    bh = b >> _SH32
    ll = al * bl
    lh = al * bh
    hl = ah * bl
    hh = ah * bh
    mid = (ll >> _SH32) + (lh & _MASK32) + (hl & _MASK32)
    hi = hh + (lh >> _SH32) + (hl >> _SH32) + (mid >> _SH32)
    lo = (mid << _SH32) | (ll & _MASK32)
    return hi, lo


@njit(cache=True)
def _philox_word0(k0, k1, c0, c1):
    v0 = c0
    v1 = c1
    v2 = np.uint64(0)
    v3 = np.uint64(0)
    kk0 = k0
    kk1 = k1
    for r in range(10):
        if r > 0:
            kk0 += _W0
            kk1 += _W1
        hi0, lo0 = _mulhilo(_M0, v0)
        hi1, lo1 = _mulhilo(_M1, v2)
        v0 = hi1 ^ v1 ^ kk0
        v1 = lo1
        v2 = hi0 ^ v3 ^ kk1
        v3 = lo0
    return v0


@njit(cache=True)
def _uniform(k0, k1, chain, step):
    w = _philox_word0(k0, k1, step, chain)
    return (w >> _SH11) * _INV53


def uniforms(seed, stream, chain, step):
    """Vectorized counter-based uniforms; matches numpy_impl bit for bit."""
    chain_a = np.asarray(chain, dtype=np.uint64)
    step_a = np.asarray(step, dtype=np.uint64)
    chain_b, step_b = np.broadcast_arrays(chain_a, step_a)
    out = _uniforms_flat(
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
        np.uint64(stream & 0xFFFFFFFFFFFFFFFF),
        np.ascontiguousarray(chain_b.ravel()),
        np.ascontiguousarray(step_b.ravel()),
    )
    return out.reshape(chain_b.shape)


@njit(cache=True)
def _uniforms_flat(k0, k1, chains, steps):
    out = np.empty(chains.size)
    for t in range(chains.size):
        out[t] = _uniform(k0, k1, chains[t], steps[t])
    return out


def uniform_single(seed, stream, chain, step):
    return float(
        _uniform(
            np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
            np.uint64(stream & 0xFFFFFFFFFFFFFFFF),
            np.uint64(chain),
            np.uint64(step),
        )
    )


@njit(cache=True, parallel=True)
def _chain_endpoints(a, b, cp, x_start, n_chains, n_steps, k0, k1):
    out = np.empty(n_chains)
    for c in prange(n_chains):
        x = x_start
        cu = np.uint64(c)
        for s in range(n_steps):
            u = _uniform(k0, k1, cu, np.uint64(s))
            k = np.searchsorted(cp, u, side="right")
            x = a[k] * x + b[k]
        out[c] = x
    return out


def chain_endpoints(a, b, cp, x_start, n_chains, n_steps, seed, stream):
    return _chain_endpoints(
        a,
        b,
        cp,
        float(x_start),
        n_chains,
        n_steps,
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
        np.uint64(stream & 0xFFFFFFFFFFFFFFFF),
    )


@njit(cache=True, parallel=True)
def _chain_trajectories(a, b, cp, x_start, n_chains, n_steps, k0, k1):
    out = np.empty((n_chains, n_steps))
    for c in prange(n_chains):
        x = x_start
        cu = np.uint64(c)
        for s in range(n_steps):
            u = _uniform(k0, k1, cu, np.uint64(s))
            k = np.searchsorted(cp, u, side="right")
            x = a[k] * x + b[k]
            out[c, s] = x
    return out


def chain_trajectories(a, b, cp, x_start, n_chains, n_steps, seed, stream):
    return _chain_trajectories(
        a,
        b,
        cp,
        float(x_start),
        n_chains,
        n_steps,
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
        np.uint64(stream & 0xFFFFFFFFFFFFFFFF),
    )


@njit(cache=True)
def _monotone(x0, w0, x1, w1, q):
    n = w0.size
    m = w1.size
    cw0 = np.cumsum(w0)
    cw1 = np.cumsum(w1)
    cw0 = cw0 / cw0[-1]
    cw1 = cw1 / cw1[-1]
    cap = n + m
    ti = np.empty(cap, np.int64)
    tj = np.empty(cap, np.int64)
    tm = np.empty(cap)
    k = 0
    i = 0
    j = 0
    prev = 0.0
    cost = 0.0
    while i < n and j < m:
        a0 = cw0[i]
        a1 = cw1[j]
        t = a0 if a0 <= a1 else a1
        mass = t - prev
        if mass > 0.0:
            ti[k] = i
            tj[k] = j
            tm[k] = mass
            cost += mass * abs(x0[i] - x1[j]) ** q
            k += 1
        if a0 <= a1:
            i += 1
        else:
            j += 1
        prev = t
    return ti[:k], tj[:k], tm[:k], cost


def monotone_plan(x0, w0, x1, w1, q):
    ti, tj, tm, cost = _monotone(x0, w0, x1, w1, float(q))
    return ti, tj, tm, float(cost)


@njit(cache=True)
def _ssp(w0, w1, C):
    n = w0.size
    m = w1.size
    N = n + m
    rs = w0.copy()
    rd = w1.copy()
    total = 0.0
    for i in range(n):
        total += rs[i]
    # Totals may disagree by a few ulps; residuals below eps count as
    # saturated, perturbing the marginals by at most eps per node.
    eps = 1e-14 * (total if total > 1.0 else 1.0)
    F = np.zeros((n, m))
    h = np.zeros(N)
    INF = np.inf
    dist = np.empty(N)
    done = np.empty(N, np.bool_)
    parent = np.empty(N, np.int64)
    path = np.empty(N + 1, np.int64)
    max_phase = 10 * N + 100
    phase = 0
    status = 0
    while phase < max_phase:
        rem = 0.0
        for i in range(n):
            rem += rs[i]
        if rem <= eps:
            break
        phase += 1
        for v in range(N):
            dist[v] = INF
            done[v] = False
            parent[v] = -1
        for i in range(n):
            if rs[i] > eps:
                dist[i] = 0.0
        target = -1
        while True:
            best = -1
            bd = INF
            for v in range(N):
                if not done[v] and dist[v] < bd:
                    bd = dist[v]
                    best = v
            if best < 0:
                break
            done[best] = True
            if best >= n and rd[best - n] > eps:
                target = best
                break
            if best < n:
                for j in range(m):
                    w = C[best, j] + (h[best] - h[n + j])
                    if w < 0.0:
                        w = 0.0
                    nd = bd + w
                    if nd < dist[n + j]:
                        dist[n + j] = nd
                        parent[n + j] = best
            else:
                jj = best - n
                for i in range(n):
                    if F[i, jj] > 0.0:
                        w = (h[n + jj] - h[i]) - C[i, jj]
                        if w < 0.0:
                            w = 0.0
                        nd = bd + w
                        if nd < dist[i]:
                            dist[i] = nd
                            parent[i] = best
        if target < 0:
            status = 1
            break
        dt = dist[target]
        for v in range(N):
            dv = dist[v]
            h[v] += dv if dv < dt else dt
        plen = 0
        v = target
        path[plen] = v
        plen += 1
        while parent[v] >= 0:
            v = parent[v]
            path[plen] = v
            plen += 1
        src = path[plen - 1]
        delta = rs[src]
        if rd[target - n] < delta:
            delta = rd[target - n]
        for k in range(plen - 1):
            hi_node = path[k]
            lo_node = path[k + 1]
            if hi_node < n and lo_node >= n:
                f = F[hi_node, lo_node - n]
                if f < delta:
                    delta = f
        for k in range(plen - 1):
            hi_node = path[k]
            lo_node = path[k + 1]
            if hi_node >= n and lo_node < n:
                F[lo_node, hi_node - n] += delta
            else:
                F[hi_node, lo_node - n] -= delta
                if F[hi_node, lo_node - n] <= 0.0:
                    F[hi_node, lo_node - n] = 0.0
        rs[src] -= delta
        rd[target - n] -= delta
        if rs[src] <= delta * 1e-15 or rs[src] < 0.0:
            rs[src] = 0.0
        if rd[target - n] <= delta * 1e-15 or rd[target - n] < 0.0:
            rd[target - n] = 0.0
    rem = 0.0
    for i in range(n):
        rem += rs[i]
    if rem > eps:
        status = 1
    nnz = 0
    for i in range(n):
        for j in range(m):
            if F[i, j] > 0.0:
                nnz += 1
    fi = np.empty(nnz, np.int64)
    fj = np.empty(nnz, np.int64)
    fmass = np.empty(nnz)
    cost = 0.0
    k = 0
    for i in range(n):
        for j in range(m):
            if F[i, j] > 0.0:
                fi[k] = i
                fj[k] = j
                fmass[k] = F[i, j]
                cost += F[i, j] * C[i, j]
                k += 1
    return fi, fj, fmass, cost, h, status


def ssp_flow(w0, w1, C):
    fi, fj, fmass, cost, h, status = _ssp(
        np.ascontiguousarray(w0, dtype=np.float64),
        np.ascontiguousarray(w1, dtype=np.float64),
        np.ascontiguousarray(C, dtype=np.float64),
    )
    return fi, fj, fmass, float(cost), h, np.int64(status)
