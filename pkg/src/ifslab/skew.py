"""Skew products: deterministic base dynamics driving contracting fibers.

The state is (y, x); the base point y moves autonomously (circle rotation
or a finite Markov shift) and the fiber applies x -> a(y) x + b(y) with
the pre-update y.  When the fiber coefficients contract uniformly in y,
the x-marginal of the evolved product measure converges geometrically to
a stationary profile, with rate and constant computable from sup norms of
the coefficients.

Certification on a continuous base works through a grid plus declared
Lipschitz constants for the coefficient functions: the grid maximum plus
Lipschitz-times-spacing is a true upper bound for the sup, so the
certificate never understates rho or A.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels, measures, transport
from .errors import (
    EmptyConditional,
    InvalidParameter,
    NotFiberContracting,
    UnsupportedExponent,
)


GOLDEN_ANGLE = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Rotation:
    """y -> y + alpha mod 1, defaulting to the golden ratio conjugate.

    Meaningful experiments want alpha irrational; the default is as far
    from rational resonance as an angle gets.
    """

    alpha: float = GOLDEN_ANGLE

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise InvalidParameter("rotation angle must lie in (0, 1)")


class MarkovShift:
    """Finite-state chain given by a row-stochastic matrix.

    ``initial`` defaults to the stationary distribution of the chain, so
    the base starts (and stays) in equilibrium.
    """

    def __init__(self, transition, initial=None):
        P = np.asarray(transition, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
            raise InvalidParameter("transition must be a square matrix")
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise InvalidParameter("transition entries must be finite and >= 0")
        if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
            raise InvalidParameter("transition rows must sum to 1")
        self.transition = P
        self.n_symbols = P.shape[0]
        if initial is None:
            initial = self._stationary_row()
        initial = np.asarray(initial, dtype=np.float64)
        if initial.shape != (self.n_symbols,) or np.any(initial < 0):
            raise InvalidParameter("initial must be a distribution over symbols")
        if abs(initial.sum() - 1.0) > 1e-12:
            raise InvalidParameter("initial must sum to 1")
        self.initial = initial

    def _stationary_row(self):
        # left eigenvector for eigenvalue 1, normalized; the chain need not
        # be irreducible for the solver, but experiments should use one
        vals, vecs = np.linalg.eig(self.transition.T)
        k = int(np.argmin(np.abs(vals - 1.0)))
        v = np.real(vecs[:, k])
        v = np.abs(v)
        return v / v.sum()


@dataclass(frozen=True)
class SmoothFiber:
    """Coefficient functions on the circle with declared Lipschitz bounds.

    The declared constants are trusted inputs to certification; a wrong
    declaration voids the certificate, so built-ins compute them exactly.
    """

    a_fn: object
    b_fn: object
    lip_a: float
    lip_b: float


@dataclass(frozen=True)
class TableFiber:
    """Per-symbol affine coefficients for a Markov base."""

    a: tuple
    b: tuple

    @staticmethod
    def of(a, b):
        a = tuple(float(v) for v in a)
        b = tuple(float(v) for v in b)
        if len(a) != len(b) or not a:
            raise InvalidParameter("coefficient tables must match and be nonempty")
        return TableFiber(a, b)


def cosine_fiber(slope, amp, phase=0.0, offset=0.0):
    """a(y) = slope, b(y) = amp cos(2 pi (y + phase)) + offset, exact bounds."""
    slope = float(slope)
    amp = float(amp)
    phase = float(phase)
    offset = float(offset)

    def a_fn(y):
        return np.full_like(np.asarray(y, dtype=np.float64), slope)

    def b_fn(y):
        return amp * np.cos(2.0 * np.pi * (np.asarray(y, dtype=np.float64) + phase)) + offset

    return SmoothFiber(a_fn, b_fn, 0.0, 2.0 * np.pi * abs(amp))


@dataclass(frozen=True)
class SkewModel:
    base: object
    fiber: object
    x0: float = 0.0
    label: str = ""

    def __post_init__(self):
        if isinstance(self.base, Rotation):
            if not isinstance(self.fiber, SmoothFiber):
                raise InvalidParameter("a rotation base needs a SmoothFiber")
        elif isinstance(self.base, MarkovShift):
            if not isinstance(self.fiber, TableFiber):
                raise InvalidParameter("a Markov base needs a TableFiber")
            if len(self.fiber.a) != self.base.n_symbols:
                raise InvalidParameter("fiber table size must match symbol count")
        else:
            raise InvalidParameter("unsupported base dynamics")


@dataclass(frozen=True)
class SkewCertificate:
    """Uniform fiber contraction data: sup Lip, sup displacement at x0.

    Both are level-1 quantities (no exponent applied); experiments raise
    them to their q as needed.  ``radius`` bounds the support radius of
    the limiting x-marginal around x0.
    """

    rho: float
    A: float
    x0: float
    exact: bool
    grid: int

    @property
    def radius(self):
        return self.A / (1.0 - self.rho)


def certify_skew(model, grid=100000):
    """Certified sup bounds for the fiber coefficients.

    On a rotation base the sup over y is bounded by the grid maximum plus
    the declared Lipschitz constant times half the spacing; on a Markov
    base the maxima are exact.  Raises NotFiberContracting when even the
    certified bound reaches 1.
    """
    x0 = model.x0
    if isinstance(model.base, MarkovShift):
        a = np.asarray(model.fiber.a)
        b = np.asarray(model.fiber.b)
        rho = float(np.max(np.abs(a)))
        A = float(np.max(np.abs(a * x0 + b - x0)))
        exact = True
        grid = len(a)
    else:
        grid = int(grid)
        if grid < 2:
            raise InvalidParameter("need at least 2 grid points")
        ys = (np.arange(grid) + 0.5) / grid
        half = 0.5 / grid
        av = np.asarray(model.fiber.a_fn(ys), dtype=np.float64)
        bv = np.asarray(model.fiber.b_fn(ys), dtype=np.float64)
        rho = float(np.max(np.abs(av)) + model.fiber.lip_a * half)
        A = float(
            np.max(np.abs(av * x0 + bv - x0))
            + (model.fiber.lip_a * abs(x0) + model.fiber.lip_b) * half
        )
        exact = False
    if rho >= 1.0:
        raise NotFiberContracting(
            "certified sup of |a(y)| is %g >= 1; fibers do not contract" % rho
        )
    return SkewCertificate(rho, A, x0, exact, grid)


@dataclass(frozen=True)
class FiberEnsemble:
    """Empirical snapshot of the product state after k steps."""

    base_state: np.ndarray  # y in [0,1) for rotation, int symbols for markov
    x: np.ndarray
    k: int
    model: SkewModel


def _rotation_y(model, y0, step):
    return np.mod(y0 + step * model.base.alpha, 1.0)


def _simulate_snapshots(model, n, ks, seed, x_start):
    """One pass to the largest k, recording requested snapshot states."""
    n = int(n)
    if n < 1:
        raise InvalidParameter("need at least one realization")
    ks = sorted(set(int(k) for k in ks))
    if ks[0] < 0:
        raise InvalidParameter("snapshot steps must be nonnegative")
    k_max = ks[-1]
    want = set(ks)
    out = {}
    x = np.full(n, float(x_start))
    idx = np.arange(n, dtype=np.int64)
    if isinstance(model.base, Rotation):
        y0 = _kernels.active.uniforms(seed, _kernels.STREAM_BASE_INIT, idx, 0)
        for step in range(k_max + 1):
            if step in want:
                out[step] = FiberEnsemble(
                    _rotation_y(model, y0, step), x.copy(), step, model
                )
            if step == k_max:
                break
            y = _rotation_y(model, y0, step)
            x = np.asarray(model.fiber.a_fn(y)) * x + np.asarray(model.fiber.b_fn(y))
    else:
        base = model.base
        cum_init = np.cumsum(base.initial)
        cum_init[-1] = 1.0
        cum_rows = np.cumsum(base.transition, axis=1)
        cum_rows[:, -1] = 1.0
        u0 = _kernels.active.uniforms(seed, _kernels.STREAM_BASE_INIT, idx, 0)
        s = np.searchsorted(cum_init, u0, side="right").astype(np.int64)
        a = np.asarray(model.fiber.a)
        b = np.asarray(model.fiber.b)
        for step in range(k_max + 1):
            if step in want:
                out[step] = FiberEnsemble(s.copy(), x.copy(), step, model)
            if step == k_max:
                break
            x = a[s] * x + b[s]
            u = _kernels.active.uniforms(seed, _kernels.STREAM_BASE_STEP, idx, step)
            s = (cum_rows[s] <= u[:, None]).sum(axis=1).astype(np.int64)
            np.clip(s, 0, base.n_symbols - 1, out=s)
    return out


def simulate_skew(model, x_start, k, n_realizations, seed=0):
    """Evolve n realizations for k steps; base starts in equilibrium.

    ``x_start`` None starts the fiber at the model's base point.
    """
    x_start = model.x0 if x_start is None else float(x_start)
    return _simulate_snapshots(model, n_realizations, [int(k)], seed, x_start)[int(k)]


# -- convergence of the x-marginal ---------------------------------------------


@dataclass(frozen=True)
class SkewConvergenceReport:
    q: float
    ks: tuple
    levels: tuple
    stderrs: tuple
    allowances: tuple
    levels_ok: tuple
    D: float
    rho_tilde: float
    noise_floor: float
    slope: float
    fit_ks: tuple
    truncated: bool
    k_ref: int
    n_realizations: int
    seed: int

    @property
    def all_levels_ok(self):
        return all(self.levels_ok)

    def rows(self):
        return [
            (k, l, s, a, ok)
            for k, l, s, a, ok in zip(
                self.ks, self.levels, self.stderrs, self.allowances, self.levels_ok
            )
        ]


def _empirical_w(x0, x1, q):
    e0 = measures.empirical_from_samples(x0)
    e1 = measures.empirical_from_samples(x1)
    return transport.wq_1d_monotone(e0, e1, q).distance


def skew_convergence_experiment(
    model,
    q,
    k_grid,
    n_realizations=100000,
    seed=0,
    x_start=None,
    ref_extra=50,
    groups=10,
    grid=100000,
):
    """Track W_q(x-marginal at k, reference marginal) against the bound.

    The predicted envelope is D rho^(min(q,1) k) with D assembled from the
    skew certificate and the start point.  The reference is the same
    ensemble evolved ``ref_extra`` steps past the deepest k, so snapshots
    and reference share realizations; that coupling makes the measured
    level track the true distance far below the independent-sampling
    noise floor (estimated by splitting the reference in half).  Slopes
    are fitted only where the signal clears four times that floor, and
    ``truncated`` records whether any grid point was dropped.
    """
    if q < 1.0:
        raise UnsupportedExponent(
            "marginal convergence levels use the monotone route; need q >= 1"
        )
    cert = certify_skew(model, grid=grid)
    x_start = model.x0 if x_start is None else float(x_start)
    ks = sorted(set(int(k) for k in k_grid))
    if len(ks) < 3:
        raise InvalidParameter("need at least 3 grid depths")
    groups = int(groups)
    if groups < 2 or n_realizations // groups < 10:
        raise InvalidParameter("need >= 2 groups with >= 10 realizations each")
    k_ref = ks[-1] + int(ref_extra)
    snaps = _simulate_snapshots(
        model, n_realizations, ks + [k_ref], seed, x_start
    )
    ref = snaps[k_ref].x
    half = len(ref) // 2
    floor = _empirical_w(ref[:half], ref[half:], q)
    rho_t = cert.rho ** min(q, 1.0)
    mq = abs(x_start - cert.x0) ** q
    D = mq ** min(1.0, 1.0 / q) + (cert.A / (1.0 - cert.rho)) ** min(1.0, q)
    bounds_g = np.array_split(np.arange(len(ref)), groups)
    levels, stderrs, allowances, oks = [], [], [], []
    for k in ks:
        xk = snaps[k].x
        level = _empirical_w(xk, ref, q)
        gw = [_empirical_w(xk[g], ref[g], q) for g in bounds_g]
        se = float(np.std(gw, ddof=1) / math.sqrt(groups))
        allowance = D * rho_t**k + 3.0 * se + floor
        levels.append(level)
        stderrs.append(se)
        allowances.append(allowance)
        oks.append(level <= allowance)
    levels_a = np.asarray(levels)
    fit_mask = levels_a > 4.0 * floor
    fit_ks = tuple(int(k) for k, m in zip(ks, fit_mask) if m)
    if len(fit_ks) >= 3:
        slope = float(
            np.polyfit(np.asarray(fit_ks, dtype=np.float64),
                       np.log(levels_a[fit_mask]), 1)[0]
        )
    else:
        slope = float("nan")
    return SkewConvergenceReport(
        float(q),
        tuple(ks),
        tuple(float(v) for v in levels),
        tuple(float(v) for v in stderrs),
        tuple(float(v) for v in allowances),
        tuple(bool(v) for v in oks),
        float(D),
        float(rho_t),
        float(floor),
        slope,
        fit_ks,
        len(fit_ks) < len(ks),
        k_ref,
        int(n_realizations),
        seed,
    )


# -- fiberwise transport distance ----------------------------------------------


@dataclass(frozen=True)
class FiberBinRow:
    bin_id: int
    weight: float
    count0: int
    count1: int
    distance: float


@dataclass(frozen=True)
class FiberEstimate:
    q: float
    value: float
    marginal_value: float
    n_bins: int
    rows: tuple


def fiber_wasserstein_estimate(ens0, ens1, q, n_bins=None, flow_cap=2000):
    """Fiberwise W_q between two ensembles over a common base partition.

    Base points are grouped (arcs for a rotation, symbols for a Markov
    shift) and each bin contributes its conditional transport distance,
    weighted by the averaged bin mass (m0 + m1)/2.  Aggregation follows
    the exponent: (sum w W^q)^(1/q) for q >= 1, sum w W for q < 1.  A bin
    with samples on one side only has no conditional on the other and
    raises EmptyConditional.  ``marginal_value`` is the plain W_q between
    the two reweighted x-marginals, a lower bound for the fiberwise value
    (projection discards base information); both use the same common
    weights so the comparison is internally consistent.
    """
    if ens0.model.base.__class__ is not ens1.model.base.__class__:
        raise InvalidParameter("ensembles live over different base dynamics")
    rotation = isinstance(ens0.model.base, Rotation)
    n0, n1 = len(ens0.x), len(ens1.x)
    if rotation:
        if n_bins is None:
            n_bins = max(1, math.ceil(min(n0, n1) ** (1.0 / 3.0)))
        n_bins = int(n_bins)
        i0 = np.minimum((ens0.base_state * n_bins).astype(np.int64), n_bins - 1)
        i1 = np.minimum((ens1.base_state * n_bins).astype(np.int64), n_bins - 1)
    else:
        n_bins = ens0.model.base.n_symbols
        i0 = ens0.base_state.astype(np.int64)
        i1 = ens1.base_state.astype(np.int64)
    c0 = np.bincount(i0, minlength=n_bins)
    c1 = np.bincount(i1, minlength=n_bins)
    w = 0.5 * (c0 / n0 + c1 / n1)
    rows = []
    agg = 0.0
    marg_x, marg_w = [[], []], [[], []]
    for b in range(n_bins):
        if w[b] == 0.0:
            continue
        if c0[b] == 0 or c1[b] == 0:
            raise EmptyConditional(
                "bin %d has %d vs %d samples; no conditional on one side"
                % (b, int(c0[b]), int(c1[b]))
            )
        x0 = ens0.x[i0 == b]
        x1 = ens1.x[i1 == b]
        e0 = measures.empirical_from_samples(x0)
        e1 = measures.empirical_from_samples(x1)
        if q >= 1.0:
            d = transport.wq_1d_monotone(e0, e1, q).distance
            agg += w[b] * d**q
        else:
            d = transport.wq_exact_flow(e0, e1, q, cap=flow_cap).distance
            agg += w[b] * d
        rows.append(FiberBinRow(b, float(w[b]), int(c0[b]), int(c1[b]), float(d)))
        for side, xs, cnt in ((0, x0, c0[b]), (1, x1, c1[b])):
            marg_x[side].append(xs)
            marg_w[side].append(np.full(len(xs), w[b] / cnt))
    value = agg ** (1.0 / q) if q >= 1.0 else agg
    m0 = measures.canonicalize(
        measures.DiscreteMeasure(
            np.concatenate(marg_x[0]), np.concatenate(marg_w[0])
        )
    )
    m1 = measures.canonicalize(
        measures.DiscreteMeasure(
            np.concatenate(marg_x[1]), np.concatenate(marg_w[1])
        )
    )
    if q >= 1.0:
        marginal = transport.wq_1d_monotone(m0, m1, q).distance
    else:
        marginal = transport.wq_exact_flow(m0, m1, q, cap=flow_cap).distance
    return FiberEstimate(float(q), float(value), float(marginal), n_bins, tuple(rows))
