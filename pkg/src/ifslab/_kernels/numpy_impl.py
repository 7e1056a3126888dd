"""Pure-numpy kernel implementations.

These are the reference implementations: every numba kernel mirrors one of
the functions here and is tested for agreement against it.  The random
number generator is Philox4x64-10 exactly as published; a known-answer test
pins the blocks against numpy's own Philox bit generator.

Counter mapping, fixed across releases:

    key     = (seed, stream)
    counter = (step, chain, 0, 0)
    uniform = (block word 0 >> 11) * 2**-53     in [0, 1)

``seed`` may be any Python integer; it is reduced mod 2**64.
"""

import numpy as np

_M0 = 0xD2E7470EE14C6C93  # Philox4x64 multiplier 0
_M1 = 0xCA5A826395121157  # Philox4x64 multiplier 1
_W0 = 0x9E3779B97F4A7C15  # Weyl increment 0 (golden ratio)
_W1 = 0xBB67AE8584CAA73B  # Weyl increment 1 (sqrt 3 - 1)
_M64 = (1 << 64) - 1
_INV53 = 1.0 / 9007199254740992.0  # 2**-53

_U64_M0 = np.uint64(_M0)
_U64_M1 = np.uint64(_M1)
_MASK32 = np.uint64(0xFFFFFFFF)
_SH32 = np.uint64(32)
_SH11 = np.uint64(11)


def _round_keys(seed, stream):
    """The ten (k0, k1) round keys of the Weyl key schedule.

    Computed in Python integers so no uint64 overflow warnings fire; the
    wraparound is the masking.
    """
    k0 = seed & _M64
    k1 = stream & _M64
    keys = []
    for _ in range(10):
        keys.append((np.uint64(k0), np.uint64(k1)))
        k0 = (k0 + _W0) & _M64
        k1 = (k1 + _W1) & _M64
    return keys


def _mulhilo(a, b):
    """Full 64x64 -> 128 bit product of uint64 ``a`` with uint64 array ``b``.

    Returns (high word, low word).  Written with 32-bit limbs so every
    intermediate fits in uint64 without wraparound.
    """
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


def philox_block(seed, stream, c0, c1, c2=0, c3=0):
    """One Philox4x64-10 block per counter; counters broadcast elementwise.

    Returns the four output words as uint64 arrays.
    """
    v0, v1, v2, v3 = np.broadcast_arrays(
        np.asarray(c0, dtype=np.uint64),
        np.asarray(c1, dtype=np.uint64),
        np.asarray(c2, dtype=np.uint64),
        np.asarray(c3, dtype=np.uint64),
    )
    v0, v1, v2, v3 = v0.copy(), v1.copy(), v2.copy(), v3.copy()
    for k0, k1 in _round_keys(seed, stream):
        hi0, lo0 = _mulhilo(_U64_M0, v0)
        hi1, lo1 = _mulhilo(_U64_M1, v2)
        v0 = hi1 ^ v1 ^ k0
        v1 = lo1
        v2 = hi0 ^ v3 ^ k1
        v3 = lo0
    return v0, v1, v2, v3


def uniforms(seed, stream, chain, step):
    """Uniform [0,1) doubles at counter (step, chain); broadcasts."""
    w0, _, _, _ = philox_block(seed, stream, step, chain)
    return (w0 >> _SH11) * _INV53


def uniform_single(seed, stream, chain, step):
    return float(uniforms(seed, stream, np.uint64(chain), np.uint64(step)))


def chain_endpoints(a, b, cp, x_start, n_chains, n_steps, seed, stream):
    """Endpoints of ``n_chains`` independent affine IFS chains after ``n_steps``.

    Chain c draws index k_s = searchsorted(cp, u(seed, stream, c, s), right)
    and applies x <- a[k] x + b[k].  Vectorized across chains, sequential in
    steps; per-element arithmetic matches the scalar kernel bit for bit.
    """
    x = np.full(n_chains, float(x_start))
    chains = np.arange(n_chains, dtype=np.uint64)
    for s in range(n_steps):
        u = uniforms(seed, stream, chains, s)
        k = np.searchsorted(cp, u, side="right")
        x = a[k] * x + b[k]
    return x


def chain_trajectories(a, b, cp, x_start, n_chains, n_steps, seed, stream):
    """Full paths: row c holds X_1 .. X_{n_steps} of chain c."""
    out = np.empty((n_chains, n_steps))
    x = np.full(n_chains, float(x_start))
    chains = np.arange(n_chains, dtype=np.uint64)
    for s in range(n_steps):
        u = uniforms(seed, stream, chains, s)
        k = np.searchsorted(cp, u, side="right")
        x = a[k] * x + b[k]
        out[:, s] = x
    return out


def monotone_plan(x0, w0, x1, w1, q):
    """Monotone (quantile) coupling of two canonical discrete measures.

    Returns (i, j, mass, cost) with cost = sum mass * |x0[i]-x1[j]|**q.
    Masses are differences of consecutive values in the merged cumulative
    grid, so they are exactly the values the scalar two-pointer merge
    produces; zero-mass segments are dropped, which implements the
    advance-source-first tie rule.
    """
    cw0 = np.cumsum(w0)
    cw1 = np.cumsum(w1)
    # Dividing by the own total makes both grids end at exactly 1.0.
    cw0 = cw0 / cw0[-1]
    cw1 = cw1 / cw1[-1]
    grid = np.sort(np.concatenate([cw0, cw1]), kind="stable")
    prev = np.concatenate([[0.0], grid[:-1]])
    mass = grid - prev
    keep = mass > 0.0
    grid, prev, mass = grid[keep], prev[keep], mass[keep]
    mid = 0.5 * (grid + prev)
    i = np.searchsorted(cw0, mid, side="left")
    j = np.searchsorted(cw1, mid, side="left")
    cost = float(np.sum(mass * np.abs(x0[i] - x1[j]) ** q))
    return i.astype(np.int64), j.astype(np.int64), mass, cost


def ssp_flow(w0, w1, C):
    """Exact min-cost transportation plan by successive shortest paths.

    Dense bipartite graph: sources 0..n-1 with supplies ``w0``, sinks
    0..m-1 with demands ``w1`` (equal totals), arc costs ``C`` >= 0.
    Node potentials keep reduced costs nonnegative so plain Dijkstra finds
    augmenting paths.  The binding constraint of each augmentation is
    zeroed exactly, which caps the number of phases.

    Returns (fi, fj, fmass, cost, potentials, status); status 0 means
    converged, 1 means the phase cap was hit (should never happen).
    """
    n = w0.size
    m = w1.size
    N = n + m
    rs = w0.astype(np.float64).copy()
    rd = w1.astype(np.float64).copy()
    # Totals may disagree by a few ulps; residuals below eps count as
    # saturated, perturbing the marginals by at most eps per node.
    eps = 1e-14 * max(float(np.sum(rs)), 1.0)
    F = np.zeros((n, m))
    h = np.zeros(N)
    INF = np.inf
    max_phase = 10 * N + 100
    phase = 0
    while np.sum(rs) > eps and phase < max_phase:
        phase += 1
        dist = np.full(N, INF)
        done = np.zeros(N, dtype=bool)
        parent = np.full(N, -1, dtype=np.int64)
        dist[:n][rs > eps] = 0.0
        target = -1
        while True:
            masked = np.where(done, INF, dist)
            best = int(np.argmin(masked))
            bd = masked[best]
            if not np.isfinite(bd):
                break
            done[best] = True
            if best >= n and rd[best - n] > eps:
                target = best
                break
            if best < n:
                w = C[best, :] + (h[best] - h[n:])
                np.maximum(w, 0.0, out=w)
                nd = bd + w
                upd = nd < dist[n:]
                if np.any(upd):
                    dist[n:][upd] = nd[upd]
                    parent[n:][upd] = best
            else:
                jj = best - n
                carrier = F[:, jj] > 0.0
                if np.any(carrier):
                    w = (h[n + jj] - h[:n][carrier]) - C[carrier, jj]
                    np.maximum(w, 0.0, out=w)
                    nd = bd + w
                    sub = dist[:n][carrier]
                    upd = nd < sub
                    if np.any(upd):
                        sub[upd] = nd[upd]
                        dist[:n][carrier] = sub
                        par = parent[:n][carrier]
                        par[upd] = best
                        parent[:n][carrier] = par
        if target < 0:
            return (
                np.empty(0, np.int64),
                np.empty(0, np.int64),
                np.empty(0),
                0.0,
                h,
                np.int64(1),
            )
        dt = dist[target]
        h += np.minimum(dist, dt)
        # Walk back to the originating source, find the bottleneck.
        path = [target]
        v = target
        while parent[v] >= 0:
            v = parent[v]
            path.append(v)
        src = path[-1]
        delta = min(rs[src], rd[target - n])
        for k in range(len(path) - 1):
            hi_node, lo_node = path[k], path[k + 1]
            if hi_node >= n and lo_node < n:
                pass  # forward arc lo->hi, unbounded
            elif hi_node < n and lo_node >= n:
                delta = min(delta, F[hi_node, lo_node - n])  # backward arc
        for k in range(len(path) - 1):
            hi_node, lo_node = path[k], path[k + 1]
            if hi_node >= n and lo_node < n:
                F[lo_node, hi_node - n] += delta
            else:
                F[hi_node, lo_node - n] -= delta
                if F[hi_node, lo_node - n] <= 0.0:
                    F[hi_node, lo_node - n] = 0.0
        rs[src] -= delta
        rd[target - n] -= delta
        # Exact zero for whichever constraint was binding.
        if rs[src] <= delta * 1e-15 or rs[src] < 0.0:
            rs[src] = 0.0
        if rd[target - n] <= delta * 1e-15 or rd[target - n] < 0.0:
            rd[target - n] = 0.0
    status = np.int64(0) if float(np.sum(rs)) <= eps else np.int64(1)
    fi, fj = np.nonzero(F > 0.0)
    fmass = F[fi, fj]
    cost = float(np.sum(fmass * C[fi, fj]))
    return fi.astype(np.int64), fj.astype(np.int64), fmass, cost, h, status
