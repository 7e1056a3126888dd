"""Exact optimal transport between discrete measures on the line.

Two independent routes compute the optimal cost C_q = min over couplings of
integral |x-y|^q:

* ``wq_1d_monotone``: the quantile (monotone) coupling, optimal for convex
  costs, so restricted to q >= 1;
* ``wq_exact_flow``: a min-cost-flow solve of the transportation LP, valid
  for every q > 0 and returning a dual certificate of optimality.

Both report the Wasserstein distance W_q = C_q^min(1, 1/q); for q < 1 the
cost itself is the metric.  The pair is kept deliberately redundant: tests
drive them against each other, and the flow route self-certifies, so a bug
in either is caught rather than silently trusted.
"""

from dataclasses import dataclass, field

import numpy as np

from . import ifs_core, measures
from ._kernels import STREAM_SELFTEST, active as _K
from .errors import (
    IfslabError,
    InconsistentTestFunction,
    InstanceTooLarge,
    InvalidParameter,
    UnsupportedExponent,
    UnsupportedMapKind,
)

# Marginal and cost recomputation tolerance for plan validation.
PLAN_TOL = 1e-10


@dataclass(frozen=True)
class TransportPlan:
    """A coupling of ``src`` and ``tgt`` with entries (i[k], j[k], mass[k])."""

    src: measures.DiscreteMeasure
    tgt: measures.DiscreteMeasure
    i: np.ndarray
    j: np.ndarray
    mass: np.ndarray
    cost: float
    q: float

    @property
    def distance(self):
        """W_q of the plan's cost: cost^min(1, 1/q)."""
        return float(self.cost) ** min(1.0, 1.0 / self.q)

    def validate(self, tol=PLAN_TOL):
        """Recheck marginals and cost; raises IfslabError on violation."""
        r0 = np.zeros(self.src.n_atoms)
        np.add.at(r0, self.i, self.mass)
        r1 = np.zeros(self.tgt.n_atoms)
        np.add.at(r1, self.j, self.mass)
        e0 = float(np.max(np.abs(r0 - self.src.ws)))
        e1 = float(np.max(np.abs(r1 - self.tgt.ws)))
        if e0 > tol or e1 > tol:
            raise IfslabError("plan marginals off by (%g, %g)" % (e0, e1))
        c = float(np.sum(self.mass * np.abs(self.src.xs[self.i] - self.tgt.xs[self.j]) ** self.q))
        if abs(c - self.cost) > tol * (1.0 + abs(self.cost)):
            raise IfslabError("plan cost mismatch: %r vs %r" % (c, self.cost))
        if np.any(self.mass < 0):
            raise IfslabError("plan carries negative mass")


@dataclass(frozen=True)
class FlowPlan(TransportPlan):
    """Flow-solver plan; carries LP duals and the certified optimality gap."""

    dual_src: np.ndarray = field(default=None)
    dual_tgt: np.ndarray = field(default=None)
    optimality_gap: float = 0.0


def _check_q(q):
    q = float(q)
    if not (np.isfinite(q) and q > 0):
        raise InvalidParameter("exponent q must be positive and finite")
    return q


def wq_1d_monotone(m0, m1, q):
    """Optimal plan from the monotone coupling; exact for q >= 1.

    Ties in cumulative weights advance the source pointer first; zero-mass
    entries are dropped, so plans are unique and deterministic.
    """
    q = _check_q(q)
    if q < 1.0:
        raise UnsupportedExponent(
            "monotone coupling is not optimal for concave |x-y|^q (q=%g < 1); "
            "use wq_exact_flow" % q
        )
    measures.require_canonical(m0, "wq_1d_monotone")
    measures.require_canonical(m1, "wq_1d_monotone")
    i, j, mass, cost = _K.monotone_plan(m0.xs, m0.ws, m1.xs, m1.ws, q)
    return TransportPlan(m0, m1, i, j, mass, float(cost), q)


def monotone_cost_upper(m0, m1, q):
    """Transport cost of the monotone coupling, any q > 0.

    The cost of a specific coupling is always an upper bound on the optimal
    cost, so this is a sound (if possibly loose) error-ledger entry for
    q < 1, where the monotone plan need not be optimal and the exact flow
    solve is too expensive at scale.  For q >= 1 it equals the optimum.
    """
    q = _check_q(q)
    measures.require_canonical(m0, "monotone_cost_upper")
    measures.require_canonical(m1, "monotone_cost_upper")
    _, _, _, cost = _K.monotone_plan(m0.xs, m0.ws, m1.xs, m1.ws, q)
    return float(cost)


def min_cost_coupling(w0, w1, cost_matrix):
    """Optimal coupling of two probability vectors for an arbitrary cost matrix.

    Returns (i, j, mass, cost, dual0, dual1).  The solution is verified
    against its own LP dual certificate before being returned: dual
    feasibility everywhere and complementary slackness on the support, both
    within 1e-9 * (1 + max cost).  A certified solve is within twice that
    tolerance of the true optimum, because the duality gap equals the
    flow-weighted sum of reduced costs.
    """
    w0 = np.ascontiguousarray(w0, dtype=np.float64)
    w1 = np.ascontiguousarray(w1, dtype=np.float64)
    C = np.ascontiguousarray(cost_matrix, dtype=np.float64)
    if C.shape != (w0.size, w1.size):
        raise InvalidParameter("cost matrix shape does not match the weight vectors")
    fi, fj, fmass, cost, h, status = _K.ssp_flow(w0, w1, C)
    if int(status) != 0:
        raise IfslabError("flow solver failed to converge; this is a bug")
    u, v = h[: w0.size], h[w0.size :]
    rc = C + u[:, None] - v[None, :]
    tol = 1e-9 * (1.0 + float(np.max(C)) if C.size else 1.0)
    worst_feas = -float(np.min(rc)) if rc.size else 0.0
    worst_slack = float(np.max(np.abs(rc[fi, fj]))) if fi.size else 0.0
    if worst_feas > tol or worst_slack > tol:
        raise IfslabError(
            "flow optimality certificate violated (feas %g, slack %g); this is a bug"
            % (worst_feas, worst_slack)
        )
    gap = float(np.sum(fmass * rc[fi, fj]))
    return fi, fj, fmass, float(cost), u, v, gap


def wq_exact_flow(m0, m1, q, cap=2000):
    """Optimal plan from the exact min-cost-flow solve; any q > 0.

    Refuses instances with more than ``cap`` combined atoms: the solve is
    cubic-ish and a silent multi-minute hang helps nobody.
    """
    q = _check_q(q)
    measures.require_canonical(m0, "wq_exact_flow")
    measures.require_canonical(m1, "wq_exact_flow")
    combined = m0.n_atoms + m1.n_atoms
    if combined > cap:
        raise InstanceTooLarge(
            "%d combined atoms exceed the flow cap %d; quantize first or raise cap"
            % (combined, cap)
        )
    C = np.abs(m0.xs[:, None] - m1.xs[None, :]) ** q
    fi, fj, fmass, cost, u, v, gap = min_cost_coupling(m0.ws, m1.ws, C)
    return FlowPlan(m0, m1, fi, fj, fmass, cost, q, u, v, gap)


def kantorovich_lower_bound(m0, m1, f, lip=1.0):
    """|integral f dm0 - integral f dm1| / lip, a certified lower bound on W_1.

    ``f`` is a callable or an array of values over the sorted union of the
    two supports.  The declared Lipschitz constant is verified on adjacent
    support points (on the line that implies all pairs); violations raise
    InconsistentTestFunction rather than producing a bogus bound.
    """
    measures.require_canonical(m0, "kantorovich_lower_bound")
    measures.require_canonical(m1, "kantorovich_lower_bound")
    if not (np.isfinite(lip) and lip > 0):
        raise InvalidParameter("lip must be positive and finite")
    union = np.union1d(m0.xs, m1.xs)
    if callable(f):
        try:
            vals = np.asarray(f(union), dtype=np.float64)
            if vals.shape != union.shape:
                raise TypeError
        except Exception:
            vals = np.array([float(f(x)) for x in union])
    else:
        vals = np.ascontiguousarray(f, dtype=np.float64)
        if vals.shape != union.shape:
            raise InvalidParameter(
                "f must match the union support (%d points)" % union.size
            )
    if union.size > 1:
        df = np.abs(np.diff(vals))
        dx = np.diff(union)
        scale = 1.0 + float(np.max(np.abs(vals)))
        bad = df > lip * dx + 1e-12 * scale
        if np.any(bad):
            k = int(np.argmax(bad))
            raise InconsistentTestFunction(
                "test function violates Lipschitz bound %g between x=%r and x=%r"
                % (lip, float(union[k]), float(union[k + 1]))
            )
    i0 = np.searchsorted(union, m0.xs)
    i1 = np.searchsorted(union, m1.xs)
    int0 = float(np.sum(m0.ws * vals[i0]))
    int1 = float(np.sum(m1.ws * vals[i1]))
    return abs(int0 - int1) / lip


def map_distance_affine(a0, b0, a1, b1, x0=0.0):
    """sup_x |phi(x) - psi(x)| / (1 + |x - x0|) for two affine maps, exactly.

    With u = x - x0 the ratio is |da*u + c| / (1 + |u|), c = da*x0 + db.
    On each half-line that is a monotone linear-fractional function of u, so
    the supremum sits at u = 0 or at infinity: max(|c|, |da|).
    """
    da = float(a0) - float(a1)
    c = da * float(x0) + (float(b0) - float(b1))
    return max(abs(da), abs(c))


def map_distance_numeric(phi, psi, x0=0.0, refine=True):
    """Grid-certified lower bound on the map distance for arbitrary callables.

    Evaluates the ratio on x0 +- 2^k for k = -20..40 plus x0 itself, then
    golden-section refines around the best grid point.  A supremum over a
    grid can only undershoot; callers needing an upper bound must supply a
    modulus of continuity on top.
    """
    x0 = float(x0)

    def ratio(x):
        return abs(phi(x) - psi(x)) / (1.0 + abs(x - x0))

    pts = [x0]
    for k in range(-20, 41):
        pts.append(x0 + 2.0**k)
        pts.append(x0 - 2.0**k)
    vals = [ratio(x) for x in pts]
    best = int(np.argmax(vals))
    if not refine:
        return float(vals[best])
    lo = pts[best] - max(abs(pts[best] - x0), 1.0)
    hi = pts[best] + max(abs(pts[best] - x0), 1.0)
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = ratio(c), ratio(d)
    for _ in range(80):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = ratio(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = ratio(d)
    return float(max(max(vals), fc, fd))


@dataclass(frozen=True)
class IfsDistanceReport:
    """Optimal coupling of two IFS index distributions under map distance costs."""

    q: float
    x0: float
    cost_matrix: np.ndarray
    i: np.ndarray
    j: np.ndarray
    mass: np.ndarray
    cost: float

    @property
    def distance(self):
        return float(self.cost) ** min(1.0, 1.0 / self.q)


def _pair_distance(map0, map1, x0):
    aff0 = map0.kind == "affine"
    aff1 = map1.kind == "affine"
    if aff0 and aff1:
        return map_distance_affine(map0.a, map0.b, map1.a, map1.b, x0)
    f0 = map0.as_callable()
    f1 = map1.as_callable()
    return map_distance_numeric(f0, f1, x0)


def ifs_distance(ifs0, ifs1, q, x0=None):
    """W_{x0,q} between two IFS: optimal coupling of the index measures.

    Cost of pairing map i with map j is the map distance raised to q;
    affine pairs use the closed form, anything else the certified numeric
    grid (making the result a lower bound in that case).
    """
    q = _check_q(q)
    if x0 is None:
        x0 = ifs0.x0
    D = np.empty((len(ifs0.maps), len(ifs1.maps)))
    for i, mp0 in enumerate(ifs0.maps):
        for j, mp1 in enumerate(ifs1.maps):
            if mp0.kind not in ("affine", "user") or mp1.kind not in ("affine", "user"):
                raise UnsupportedMapKind("unknown map kind %r" % (mp0.kind,))
            D[i, j] = _pair_distance(mp0, mp1, x0) ** q
    fi, fj, fmass, cost, u, v, gap = min_cost_coupling(ifs0.probs, ifs1.probs, D)
    return IfsDistanceReport(q, float(x0), D, fi, fj, fmass, float(cost))


@dataclass(frozen=True)
class SelftestReport:
    pairs: int
    worst_route_gap: float
    worst_marginal_error: float
    worst_triangle_violation: float
    worst_duality_violation: float
    passed: bool


def selftest(seed=0, pairs=40):
    """Deterministic transport self-check; returns a SelftestReport.

    Random canonical measure pairs (counter-based draws, so the instance
    set is identical on every machine) are pushed through both solver
    routes and the Kantorovich bound:

    * monotone cost == flow cost for q >= 1,
    * plan marginals match the measures,
    * W_q triangle inequality on consecutive triples,
    * duality: lower bound <= W_1.
    """

    def make_measure(pair_idx, salt, size):
        u = _K.uniforms(seed, STREAM_SELFTEST, pair_idx * 16 + salt, np.arange(2 * size))
        xs = np.unique(np.floor(u[:size] * 4096.0) / 1024.0 - 2.0)
        ws = u[size : size + xs.size] + 0.01
        return measures.canonicalize(measures.DiscreteMeasure(xs, ws / ws.sum()))

    qs = [0.5, 1.0, 1.5, 2.0, 3.0]
    worst_gap = worst_marg = worst_tri = worst_dual = 0.0
    for p in range(pairs):
        u = _K.uniforms(seed, STREAM_SELFTEST, p * 16, np.arange(3))
        n0 = 2 + int(u[0] * 28)
        n1 = 2 + int(u[1] * 28)
        n2 = 2 + int(u[2] * 28)
        m0 = make_measure(p, 1, n0)
        m1 = make_measure(p, 2, n1)
        m2 = make_measure(p, 3, n2)
        q = qs[p % len(qs)]
        flow01 = wq_exact_flow(m0, m1, q)
        flow12 = wq_exact_flow(m1, m2, q)
        flow02 = wq_exact_flow(m0, m2, q)
        for plan in (flow01, flow12, flow02):
            plan.validate()
            r0 = np.zeros(plan.src.n_atoms)
            np.add.at(r0, plan.i, plan.mass)
            worst_marg = max(worst_marg, float(np.max(np.abs(r0 - plan.src.ws))))
        if q >= 1.0:
            mono = wq_1d_monotone(m0, m1, q)
            mono.validate()
            worst_gap = max(worst_gap, abs(mono.cost - flow01.cost))
        worst_tri = max(
            worst_tri, flow02.distance - (flow01.distance + flow12.distance)
        )
        lb = kantorovich_lower_bound(m0, m1, lambda x: np.abs(x), lip=1.0)
        w1 = wq_1d_monotone(m0, m1, 1.0).distance
        worst_dual = max(worst_dual, lb - w1)
    passed = (
        worst_gap <= 1e-9
        and worst_marg <= PLAN_TOL
        and worst_tri <= 1e-9
        and worst_dual <= 1e-9
    )
    return SelftestReport(pairs, worst_gap, worst_marg, worst_tri, worst_dual, passed)
