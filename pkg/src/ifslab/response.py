"""Parameter response of stationary measures.

Every comparison here goes through solved measures with error ledgers, so
each verdict has three ingredients: the measured transport distance, the
theoretical bound, and the ledger slack of the approximations.  A PASS
means measured <= bound + slack; a FAIL means the violation survives the
slack, which is evidence against the bound itself; INCONCLUSIVE means the
slack is too large a fraction of the bound for the comparison to bite.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import ifs_core, measures, stationary, transport
from .errors import InvalidParameter, TargetUnreachable, UnsupportedExponent

PASS = "PASS"
FAIL = "FAIL"
INCONCLUSIVE = "INCONCLUSIVE"


def bernoulli_ifs(lam):
    """Two maps lam*x and lam*x + (1-lam), equal weights; fixes [0, 1]."""
    lam = float(lam)
    if not (0.0 < lam < 1.0):
        raise InvalidParameter("bernoulli parameter must lie in (0, 1)")
    return ifs_core.IfsModel(
        (ifs_core.Map1D.affine(lam, 0.0), ifs_core.Map1D.affine(lam, 1.0 - lam)),
        (0.5, 0.5),
        label="bernoulli(%g)" % lam,
    )


def _solve_with_ledger(ifs, q, max_atoms, target_error):
    """Solve, but keep the stalled result when the target is out of reach.

    A stalled ledger is still a valid upper bound; the caller's verdict
    logic decides whether it is tight enough to use.
    """
    cert = ifs_core.certify_contraction(ifs, q)
    try:
        rep = stationary.solve_stationary(
            ifs, cert, max_atoms=max_atoms, target_error=target_error
        )
    except TargetUnreachable as exc:
        rep = exc.report
    return rep


@dataclass(frozen=True)
class ResponseRow:
    """One grid point of the parametric Lipschitz check."""

    lam: float
    h: float
    q: float
    measured_Wq: float
    theory_bound: float
    ledger_slack: float
    verdict: str


@dataclass(frozen=True)
class LipschitzReport:
    q: float
    rows: tuple

    @property
    def passed(self):
        return all(r.verdict == PASS for r in self.rows)

    @property
    def any_fail(self):
        return any(r.verdict == FAIL for r in self.rows)


def lipschitz_experiment(lambda_grid, h, q=1.0, max_atoms=4096, target_error=None):
    """Check W_q(mu_lam, mu_{lam+h}) <= 2h/(1-lam) across a parameter grid.

    The bound needs q >= 1.  Each row solves both measures, measures the
    exact transport distance between the approximations, and compares
    against the bound plus the two ledgers.  Rows where the combined
    ledger exceeds 10% of the bound are INCONCLUSIVE: the comparison has
    no power there, and the honest report says so rather than passing.
    """
    if q < 1.0:
        raise UnsupportedExponent("the parametric Lipschitz bound needs q >= 1")
    h = float(h)
    if not (h > 0):
        raise InvalidParameter("h must be positive")
    rows = []
    for lam in lambda_grid:
        lam = float(lam)
        if not (0.0 < lam < lam + h < 1.0):
            raise InvalidParameter("need 0 < lam < lam + h < 1; got lam=%g" % lam)
        bound = 2.0 * h / (1.0 - lam)
        target = target_error if target_error is not None else 0.02 * bound
        r0 = _solve_with_ledger(bernoulli_ifs(lam), q, max_atoms, target)
        r1 = _solve_with_ledger(bernoulli_ifs(lam + h), q, max_atoms, target)
        measured = transport.wq_1d_monotone(r0.measure, r1.measure, q).distance
        ledger = r0.total_error_bound + r1.total_error_bound
        if measured > bound + ledger:
            verdict = FAIL
        elif ledger > 0.1 * bound:
            verdict = INCONCLUSIVE
        else:
            verdict = PASS
        rows.append(ResponseRow(lam, h, q, measured, bound, ledger, verdict))
    return LipschitzReport(q, tuple(rows))


@dataclass(frozen=True)
class ClosenessReport:
    q: float
    ifs_dist: float
    rho0: float
    moment_other: float
    constant: float
    bound: float
    measured: float
    ledger: float
    verdict: str


def closeness_check(ifs0, ifs1, q, x0=None, max_atoms=4096, target_error=1e-4):
    """Instantiate W_q(mu_0, mu_1) <= C * dist(F_0, F_1) and test it.

    The constant depends on the contraction factor of the first system at
    q and a moment of the second system's stationary measure,

        C = (1 + m) / (1 - rho_0)                          for q <= 1,
        C = 2^{1-1/q} (1 + m)^{1/q} / (1 - rho_0^{1/q})    for q > 1,

    with m the q-th moment about x0.  The moment enters through its
    measured value pushed up by the solver ledger, so the bound tested is
    a certified upper bound for the theoretical one.  ``x0`` defaults to
    the base point of the first system's certificate.
    """
    cert0 = ifs_core.certify_contraction(ifs0, q, x0=x0)
    rep0 = _solve_with_ledger(ifs0, q, max_atoms, target_error)
    rep1 = _solve_with_ledger(ifs1, q, max_atoms, target_error)
    x0 = cert0.x0
    dist = transport.ifs_distance(ifs0, ifs1, q, x0=x0).distance
    m_meas = measures.moment(rep1.measure, measures.MomentSpec(q, x0))
    led1 = rep1.total_error_bound
    if q >= 1.0:
        m_up = (m_meas ** (1.0 / q) + led1) ** q
    else:
        # for q < 1 the moment about x0 is itself the transport cost from
        # a point mass, and W_q is a metric, so the ledger adds directly
        m_up = m_meas + led1
    rho0 = cert0.rho
    if q <= 1.0:
        const = (1.0 + m_up) / (1.0 - rho0)
    else:
        const = (
            2.0 ** (1.0 - 1.0 / q)
            * (1.0 + m_up) ** (1.0 / q)
            / (1.0 - rho0 ** (1.0 / q))
        )
    bound = const * dist
    if q >= 1.0:
        measured = transport.wq_1d_monotone(rep0.measure, rep1.measure, q).distance
    else:
        measured = transport.wq_exact_flow(rep0.measure, rep1.measure, q).distance
    ledger = rep0.total_error_bound + rep1.total_error_bound
    if measured > bound + ledger:
        verdict = FAIL
    elif ledger > 0.1 * bound:
        verdict = INCONCLUSIVE
    else:
        verdict = PASS
    return ClosenessReport(
        q, dist, rho0, m_up, const, bound, measured, ledger, verdict
    )


@dataclass(frozen=True)
class DerivativeRow:
    h: float
    derivative: float
    bar: float


@dataclass(frozen=True)
class DerivativeReport:
    lam: float
    rows: tuple
    estimate: float
    bar: float
    cauchy_ok: bool
    status: str  # "resolved" or "inconclusive"

    def rows_as_tuples(self):
        return [(r.h, r.derivative, r.bar) for r in self.rows]


def finite_difference_response(
    f,
    lip_f,
    lam,
    h_schedule,
    max_atoms=4096,
    target_error=None,
    family=bernoulli_ifs,
):
    """Central differences of lam -> integral f dmu_lam with certified bars.

    Each difference quotient carries the bar Lip(f) * (ledger_+ +
    ledger_-) / (2h): that is the full effect the solver error can have on
    the quotient.  Discretization bias in h is not certified (it would
    need third derivative information about the response); instead
    consecutive quotients are checked for Cauchy consistency within their
    bars.  The status is "resolved" only when the bars at the finest h
    leave the leading digit of the estimate meaningful and the Cauchy
    check holds.
    """
    lam = float(lam)
    hs = sorted((float(h) for h in h_schedule), reverse=True)
    if not hs:
        raise InvalidParameter("h_schedule must be nonempty")
    if not (0.0 < lam - hs[0] and lam + hs[0] < 1.0):
        raise InvalidParameter("largest h leaves the parameter range")
    lip_f = float(lip_f)
    if not (lip_f > 0):
        raise InvalidParameter("need a positive Lipschitz bound for f")
    rows = []
    for h in hs:
        target = target_error if target_error is not None else max(
            1e-6, 0.005 * h / lip_f
        )
        rp = _solve_with_ledger(family(lam + h), 1.0, max_atoms, target)
        rm = _solve_with_ledger(family(lam - h), 1.0, max_atoms, target)
        ip = float(np.sum(rp.measure.ws * np.asarray(f(rp.measure.xs))))
        im = float(np.sum(rm.measure.ws * np.asarray(f(rm.measure.xs))))
        d = (ip - im) / (2.0 * h)
        bar = lip_f * (rp.total_error_bound + rm.total_error_bound) / (2.0 * h)
        rows.append(DerivativeRow(h, d, bar))
    cauchy_ok = all(
        abs(r1.derivative - r2.derivative) <= r1.bar + r2.bar + 1e-12
        for r1, r2 in zip(rows, rows[1:])
    )
    final = rows[-1]
    resolved = cauchy_ok and final.bar < 0.5 * abs(final.derivative)
    return DerivativeReport(
        lam,
        tuple(rows),
        final.derivative,
        final.bar,
        cauchy_ok,
        "resolved" if resolved else "inconclusive",
    )
