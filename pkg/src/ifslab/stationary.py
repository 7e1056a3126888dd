"""Stationary measures with rigorous error ledgers.

The solver iterates the quantized dual transfer operator from a point mass
and tracks a two-part upper bound on W_q(current, stationary):

* contraction term: rho_bar^k * (start distance bound), what remains of
  the initial distance after k contractions;
* quantization term: sum_j rho_bar^(k-j) * eps_j, each iteration's exact
  quantization error, discounted by the contractions applied after it.

The triangle inequality W(Q(L*m), mu) <= eps + rho_bar W(m, mu) makes the
ledger sound at every iteration, not just in the limit.  Nothing in the
report is a heuristic: eps_j is the exact transport distance between the
pushed measure and its quantization.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import ifs_core, measures
from .errors import (
    DivergentMoment,
    HypothesisFailed,
    InvalidParameter,
    TargetUnreachable,
)


@dataclass(frozen=True)
class SolveReport:
    """Solver output: the measure plus its certified error ledger."""

    measure: measures.DiscreteMeasure
    certificate: ifs_core.ContractionCertificate
    iterations: int
    contraction_term: float
    quantization_term: float
    target_error: float
    max_atoms: int
    converged: bool

    @property
    def total_error_bound(self):
        """Certified upper bound on W_q(measure, stationary)."""
        return self.contraction_term + self.quantization_term

    def summary(self):
        return {
            "iterations": self.iterations,
            "atoms": self.measure.n_atoms,
            "contraction_term": self.contraction_term,
            "quantization_term": self.quantization_term,
            "total_error_bound": self.total_error_bound,
            "target_error": self.target_error,
            "converged": self.converged,
            "q": self.certificate.q,
            "rho": self.certificate.rho,
            "A": self.certificate.A,
            "x0": self.certificate.x0,
        }


# Consecutive non-improving iterations before the solver declares a stall.
_STALL_PATIENCE = 20


def solve_stationary(
    ifs,
    cert,
    max_atoms=4096,
    target_error=1e-3,
    max_iters=10000,
    flow_cap=None,
):
    """Iterate quantized L* from delta_{x0} until the ledger meets the target.

    ``cert`` fixes the exponent q, the base point and the contraction data;
    get one from ``ifs_core.certify_contraction``.  Raises TargetUnreachable
    (carrying the best report) when the quantization floor stalls the ledger
    above ``target_error`` or the iteration cap runs out.
    """
    if not (target_error > 0):
        raise InvalidParameter("target_error must be positive")
    if int(max_iters) < 1:
        raise InvalidParameter("max_iters must be at least 1")
    spec = measures.MomentSpec(cert.q, cert.x0)
    rb = cert.rho_bar
    w_start = cert.start_distance_bound()
    m = measures.dirac(cert.x0)
    contraction = w_start
    quant = 0.0
    best_total = contraction
    if best_total <= target_error:
        return SolveReport(
            m, cert, 0, contraction, quant, target_error, int(max_atoms), True
        )
    since_improvement = 0
    report = None
    for k in range(1, int(max_iters) + 1):
        m = ifs_core.apply_dual_transfer(ifs, m)
        m, eps = measures.quantize(m, max_atoms, spec, flow_cap=flow_cap)
        contraction *= rb
        quant = rb * quant + eps
        total = contraction + quant
        if total <= target_error:
            return SolveReport(
                m, cert, k, contraction, quant, target_error, int(max_atoms), True
            )
        if total < best_total - 1e-16:
            best_total = total
            since_improvement = 0
        else:
            since_improvement += 1
        if since_improvement >= _STALL_PATIENCE:
            report = SolveReport(
                m, cert, k, contraction, quant, target_error, int(max_atoms), False
            )
            raise TargetUnreachable(
                "ledger stalled at %g > target %g after %d iterations; "
                "the quantization floor needs more atoms" % (total, target_error, k),
                report,
            )
    report = SolveReport(
        m,
        cert,
        int(max_iters),
        contraction,
        quant,
        target_error,
        int(max_atoms),
        False,
    )
    raise TargetUnreachable(
        "iteration cap %d exhausted at ledger %g > target %g"
        % (int(max_iters), report.total_error_bound, target_error),
        report,
    )


@dataclass(frozen=True)
class DriftReport:
    """Outcome of a generalized-moment (drift) check."""

    theta: float
    B: float
    integral_phi: float
    integral_psi: float
    bound: float
    grid_violations: tuple
    passed: bool


def check_generalized_moment(
    ifs, m, phi, psi, theta, B, grid_points=10000, radius_factor=10.0
):
    """Verify the drift L phi <= theta phi + B psi and the implied bound.

    The inequality is checked at every support atom of ``m`` (violations
    there raise HypothesisFailed with witnesses) and on a stress grid of
    ``grid_points`` points spanning ``radius_factor`` times the support
    radius around x0; grid violations are reported and fail the check
    without raising.  When the drift holds, the stationary measure obeys

        integral phi dmu <= B / (1 - theta) * integral psi dmu

    and the report compares both sides on ``m``.
    """
    theta = float(theta)
    B = float(B)
    if not (0.0 <= theta < 1.0):
        raise InvalidParameter("drift needs theta in [0, 1)")
    if not (B >= 0.0 and np.isfinite(B)):
        raise InvalidParameter("drift needs finite B >= 0")
    measures.require_canonical(m, "check_generalized_moment")
    x0 = ifs.x0

    def drift_gap(xs):
        lphi = ifs_core.apply_transfer(ifs, phi, xs)
        rhs = theta * np.asarray(phi(xs), dtype=np.float64) + B * np.asarray(
            psi(xs), dtype=np.float64
        )
        tol = 1e-9 * (1.0 + np.abs(lphi) + np.abs(rhs))
        return np.asarray(lphi, dtype=np.float64) - rhs, tol

    gap, tol = drift_gap(m.xs)
    bad = gap > tol
    if np.any(bad):
        witnesses = [(float(x), float(g)) for x, g in zip(m.xs[bad], gap[bad])]
        raise HypothesisFailed(
            "drift hypothesis fails at %d support points" % len(witnesses),
            witnesses,
        )
    R = radius_factor * max(measures.support_radius(m, x0), 1e-12)
    grid = np.linspace(x0 - R, x0 + R, int(grid_points))
    ggap, gtol = drift_gap(grid)
    gbad = ggap > gtol
    grid_violations = tuple(
        (float(x), float(g)) for x, g in zip(grid[gbad], ggap[gbad])
    )
    int_phi = float(np.sum(m.ws * np.asarray(phi(m.xs), dtype=np.float64)))
    int_psi = float(np.sum(m.ws * np.asarray(psi(m.xs), dtype=np.float64)))
    bound = B / (1.0 - theta) * int_psi
    passed = (not grid_violations) and int_phi <= bound + 1e-9 * (1.0 + abs(bound))
    return DriftReport(theta, B, int_phi, int_psi, bound, grid_violations, passed)


# -- exponential moments of the reset family ---------------------------------
#
# For the model phi_0 = a x (prob p), phi_1 = x + 1 (prob 1 - p) the moment
# generating function of the stationary law factorizes:
#
#     E[e^{b X}] = prod_{k >= 0} p / (1 - (1 - p) e^{a^k b}),   b < log(1/(1-p)).
#
# Truncation control works on the log scale.  With g(u) = log p -
# log(1 - (1-p) e^u) (so log factor k = g(a^k b), g(0) = 0, g convex
# increasing), any u0 with (1-p) e^{u0} < 1 gives the envelope
# |g(u)| <= g'(u0) |u| on [-u0, u0].  Factors beyond the first index with
# |a^k b| <= u0 are then dominated by a geometric series.


def _mgf_threshold(p):
    return -math.log1p(-p)


def _envelope_slope(p, u0):
    """2 * g'(u0); the doubling is a safety factor on top of the convexity bound."""
    t = (1.0 - p) * math.exp(u0)
    return 2.0 * t / (1.0 - t)


def _log_factor(p, u):
    return math.log(p) - math.log1p(-(1.0 - p) * math.exp(u))


def _log_tail_bound(a, p, b, K):
    """Upper bound on sum_{k >= K} |log factor_k| for the mgf product."""
    if b == 0.0:
        return 0.0
    if a == 0.0:
        return 0.0 if K >= 1 else abs(_log_factor(p, b))
    u0 = min(0.1, 0.5 * _mgf_threshold(p))
    c = _envelope_slope(p, u0)
    if abs(b) <= u0:
        k0 = 0
    else:
        k0 = max(0, math.ceil(math.log(u0 / abs(b)) / math.log(a)))
    total = 0.0
    for k in range(K, k0):
        total += abs(_log_factor(p, (a**k) * b))
    k_env = max(K, k0)
    total += c * abs(b) * a**k_env / (1.0 - a)
    return total


@dataclass(frozen=True)
class ExpMomentReport:
    """Truncated mgf product with a certified truncation bound."""

    a: float
    p: float
    b: float
    K: int
    product_value: float
    truncation_bound: float
    uniform_bound: float
    threshold: float


def _check_reset_params(a, p):
    if not (0.0 <= a < 1.0):
        raise InvalidParameter("need 0 <= a < 1")
    if not (0.0 < p < 1.0):
        raise InvalidParameter("need 0 < p < 1")


def mgf_uniform_constant(a, p):
    """C(a, p) = p * prod_{k >= 1} p / (1 - (1-p)^{1 - a^k}), as an upper bound.

    The factor at index k equals exp(g(a^k * threshold)), so the same
    envelope that controls the mgf product controls this one; the returned
    value is the truncated product inflated by the tail bound.
    """
    _check_reset_params(a, p)
    bmax = _mgf_threshold(p)
    if a == 0.0:
        return p
    log_c = math.log(p)
    k = 1
    while k <= 100000:
        u = (a**k) * bmax
        lf = _log_factor(p, u)
        log_c += lf
        k += 1
        if lf < 1e-17:
            break
    log_c += _log_tail_bound(a, p, bmax, k)
    return math.exp(log_c)


def exp_moment_product(a, p, b, K=64):
    """K-term truncation of the stationary mgf product of the reset model.

    Returns an ExpMomentReport whose ``truncation_bound`` bounds
    |E[e^{bX}] - product_value| rigorously whenever the product converges, and
    whose ``uniform_bound`` is the closed-form bound
    C(a, p) / (1 - (1-p) e^b) valid for every admissible b.  Requesting
    b >= log(1/(1-p)) raises DivergentMoment: the true moment is infinite
    there.  a = 0 is allowed and collapses to the geometric mgf.
    """
    _check_reset_params(a, p)
    b = float(b)
    K = int(K)
    if K < 1:
        raise InvalidParameter("need K >= 1")
    bmax = _mgf_threshold(p)
    if not np.isfinite(b) or b >= bmax:
        raise DivergentMoment(
            "E[e^{bX}] diverges for b >= log(1/(1-p)) = %g; got b = %g" % (bmax, b)
        )
    # every factor is exactly 1 at b = 0; skip the log loop's roundoff
    log_val = 0.0
    if b != 0.0:
        for k in range(K):
            u = b if k == 0 else (a**k) * b
            log_val += _log_factor(p, u)
    value = math.exp(log_val)
    tail = _log_tail_bound(a, p, b, K)
    truncation = value * math.expm1(tail)
    # 1 - (1-p) e^b = -expm1(b - bmax), stable near the threshold
    uniform = mgf_uniform_constant(a, p) / -math.expm1(b - bmax)
    return ExpMomentReport(a, p, b, K, value, truncation, uniform, bmax)


def tail_upper_bound(a, p, t):
    """Chebyshev bound on mu([t, inf)) at the optimal exponent, t >= 1.

    Optimizing e^{-bt} E[e^{bX}] <= e^{-bt} C(a,p) / (1 - (1-p) e^b) over
    admissible b gives e^b = t / ((1-p)(1+t)) and the value

        C(a, p) * (1 + 1/t)^t * (1 + t) * (1 - p)^t.
    """
    _check_reset_params(a, p)
    t = float(t)
    if t < 1.0:
        raise InvalidParameter("tail bound needs t >= 1")
    log_bound = (
        math.log(mgf_uniform_constant(a, p))
        + t * math.log1p(1.0 / t)
        + math.log1p(t)
        + t * math.log1p(-p)
    )
    return math.exp(log_bound)
