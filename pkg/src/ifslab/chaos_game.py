"""Chain sampling and Monte Carlo experiments.

Chains are keyed by (seed, stream, chain index, step): every draw comes
from a counter-based generator, so trajectories are reproducible sample by
sample regardless of thread count or execution order, and a prefix of a
longer run is bitwise identical to a shorter run with the same seed.

Bias accounting is explicit everywhere.  Endpoint samples after k steps
are distributed as the k-th dual transfer iterate, whose distance to the
stationary law is at most rho_bar^k times the start bound; experiments
carry that term in their allowances instead of pretending endpoint samples
are exact stationary draws.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels, ifs_core, measures, stationary, transport
from .errors import (
    InvalidModel,
    InvalidParameter,
    ReferenceTooCoarse,
)

_STREAM_CHAIN = _kernels.STREAM_CHAIN


@dataclass(frozen=True)
class ChainConfig:
    """One chain: start point, total length, discarded prefix, seed.

    ``steps`` counts every transition including the burn-in, so the
    simulated trajectory has ``steps - burn_in`` retained states and the
    config requires steps > burn_in >= 0.
    """

    ifs: ifs_core.IfsModel
    x_start: float = None
    steps: int = 1
    burn_in: int = 0
    seed: int = 0

    def __post_init__(self):
        if int(self.burn_in) < 0:
            raise InvalidParameter("burn_in must be nonnegative")
        if int(self.steps) <= int(self.burn_in):
            raise InvalidParameter("steps must exceed burn_in")

    def start(self):
        return self.ifs.x0 if self.x_start is None else float(self.x_start)


def _endpoints_affine(ifs, x_start, n_chains, n_steps, seed):
    a, b = ifs.affine_arrays()
    return _kernels.active.chain_endpoints(
        a, b, ifs.cumprob(), float(x_start), int(n_chains), int(n_steps), seed,
        _STREAM_CHAIN,
    )


def _trajectories_affine(ifs, x_start, n_chains, n_steps, seed):
    a, b = ifs.affine_arrays()
    return _kernels.active.chain_trajectories(
        a, b, ifs.cumprob(), float(x_start), int(n_chains), int(n_steps), seed,
        _STREAM_CHAIN,
    )


def _trajectory_generic(ifs, x_start, chain, n_steps, seed):
    # python fallback for non-affine maps; draws the same uniforms as the
    # kernels, so an affine model gives identical output on either path
    cp = ifs.cumprob()
    maps = [m.as_callable() for m in ifs.maps]
    out = np.empty(int(n_steps))
    x = float(x_start)
    for t in range(int(n_steps)):
        u = _kernels.active.uniform_single(seed, _STREAM_CHAIN, chain, t)
        x = maps[int(np.searchsorted(cp, u, side="right"))](x)
        out[t] = x
    return out


def simulate_chain(cfg):
    """Run one chain; returns the ``steps - burn_in`` states after burn-in."""
    total = int(cfg.steps)
    if cfg.ifs.is_affine():
        traj = _trajectories_affine(cfg.ifs, cfg.start(), 1, total, cfg.seed)[0]
    else:
        traj = _trajectory_generic(cfg.ifs, cfg.start(), 0, total, cfg.seed)
    return traj[int(cfg.burn_in):]


def mixing_depth(cert, bias_target):
    """Smallest k with rho_bar^k * start_bound <= bias_target."""
    if not (bias_target > 0):
        raise InvalidParameter("bias_target must be positive")
    w0 = cert.start_distance_bound()
    if w0 <= bias_target:
        return 0
    if cert.rho_bar == 0.0:
        return 1
    return max(1, math.ceil(math.log(bias_target / w0) / math.log(cert.rho_bar)))


@dataclass(frozen=True)
class SampleReport:
    """Endpoint samples with the certified distribution bias bound."""

    samples: np.ndarray
    k_mix: int
    bias_bound: float
    q: float
    seed: int


def sample_stationary(
    ifs, n_samples, k_mix=None, seed=0, cert=None, bias_target=1e-6, x_start=None
):
    """Approximate stationary samples via n independent depth-k chains.

    ``bias_bound`` bounds W_q between the sample law and the stationary
    measure (q from the certificate, default 1).  With ``k_mix`` omitted
    the depth is chosen so the bias meets ``bias_target``.
    """
    if int(n_samples) < 1:
        raise InvalidParameter("n_samples must be at least 1")
    if cert is None:
        cert = ifs_core.certify_contraction(ifs, 1.0)
    if k_mix is None:
        k_mix = mixing_depth(cert, bias_target)
    k_mix = int(k_mix)
    if k_mix < 0:
        raise InvalidParameter("k_mix must be nonnegative")
    x_start = cert.x0 if x_start is None else float(x_start)
    if k_mix == 0:
        xs = np.full(int(n_samples), x_start)
    elif ifs.is_affine():
        xs = _endpoints_affine(ifs, x_start, n_samples, k_mix, seed)
    else:
        xs = np.array(
            [
                _trajectory_generic(ifs, x_start, c, k_mix, seed)[-1]
                for c in range(int(n_samples))
            ]
        )
    bias = cert.rho_bar**k_mix * cert.start_distance_bound()
    return SampleReport(xs, k_mix, bias, cert.q, seed)


# -- ergodic averages ---------------------------------------------------------


@dataclass(frozen=True)
class ErgodicityReport:
    """Empirical-measure W1 decay along chain prefixes."""

    ns: np.ndarray
    mean_w1: np.ndarray
    stderr_w1: np.ndarray
    slope: float
    intercept: float
    chains: int
    ref_error: float
    seed: int

    def rows(self):
        return [
            (int(n), float(m), float(s))
            for n, m, s in zip(self.ns, self.mean_w1, self.stderr_w1)
        ]


def ergodicity_experiment(
    ifs, mu_ref, n_grid, chains=200, seed=0, ref_error=0.0, x_start=None
):
    """Measure W1(empirical prefix law, reference) against prefix length.

    Needs a uniformly contracting model (every map a strict contraction):
    that keeps each chain in a bounded region, which is what makes the
    empirical W1 statistic well behaved.  ``mu_ref`` is an external
    approximation of the stationary law whose own error ``ref_error`` must
    be small against the measured levels; the experiment raises
    ReferenceTooCoarse when ref_error exceeds 10% of the smallest mean,
    because the decay exponent would then reflect the reference, not the
    chain.
    """
    lips = [m.lip_bound() for m in ifs.maps]
    if max(lips) >= 1.0:
        raise InvalidModel(
            "ergodicity experiment needs every map contracting; max Lip = %g"
            % max(lips)
        )
    measures.require_canonical(mu_ref, "ergodicity_experiment reference")
    ns = np.array(sorted(int(n) for n in n_grid))
    if ns[0] < 2:
        raise InvalidParameter("prefix lengths must be at least 2")
    chains = int(chains)
    if chains < 2:
        raise InvalidParameter("need at least 2 chains for a standard error")
    x_start = ifs.x0 if x_start is None else float(x_start)
    n_max = int(ns[-1])
    if ifs.is_affine():
        traj = _trajectories_affine(ifs, x_start, chains, n_max, seed)
    else:
        traj = np.vstack(
            [_trajectory_generic(ifs, x_start, c, n_max, seed) for c in range(chains)]
        )
    w = np.empty((len(ns), chains))
    for i, n in enumerate(ns):
        for c in range(chains):
            emp = measures.empirical_from_samples(traj[c, :n])
            w[i, c] = transport.wq_1d_monotone(emp, mu_ref, 1.0).distance
    mean = w.mean(axis=1)
    stderr = w.std(axis=1, ddof=1) / math.sqrt(chains)
    if ref_error > 0.1 * float(mean.min()):
        raise ReferenceTooCoarse(
            "reference error %g exceeds 10%% of the smallest mean level %g; "
            "refine the reference before fitting a decay exponent"
            % (ref_error, float(mean.min()))
        )
    if len(ns) >= 2:
        slope, intercept = np.polyfit(np.log(ns), np.log(mean), 1)
    else:
        slope, intercept = float("nan"), float("nan")  # no slope from one level
    return ErgodicityReport(
        ns, mean, stderr, float(slope), float(intercept), chains, float(ref_error),
        seed,
    )


# -- moment growth probe ------------------------------------------------------


@dataclass(frozen=True)
class ProbeRow:
    q: float
    estimate: float
    ci_lo: float
    ci_hi: float
    half_estimate: float
    half_ci_lo: float
    half_ci_hi: float
    diverging: bool  # heuristic doubling-stability flag, not a proof
    cert_bound: float  # nan when no contraction certificate exists at q


@dataclass(frozen=True)
class ProbeReport:
    rows: tuple
    k_mix: int
    n_samples: int
    seed: int


def _bootstrap_ci(values, n_boot, rng):
    n = values.size
    idx = rng.integers(0, n, size=(int(n_boot), n))
    means = values[idx].mean(axis=1)
    return float(np.quantile(means, 0.025)), float(np.quantile(means, 0.975))


def moment_growth_probe(
    ifs, q_list, n_samples=20000, k_mix=200, seed=0, n_boot=200
):
    """Empirical moments with a doubling-stability divergence flag.

    Simulates 2 * n_samples endpoint draws at depth ``k_mix`` and, for
    each q, compares the estimate from the first half with the estimate
    from the full set.  An estimate that keeps climbing as the sample
    count doubles, beyond what the bootstrap intervals explain, is flagged
    as diverging.  The flag is a heuristic: a divergent moment grows
    without bound as samples accumulate, but slow divergence can escape
    any finite probe, and no finite sample proves divergence.  Certified
    bounds, where a contraction certificate exists at q, are reported
    next to the estimates.
    """
    if int(n_samples) < 16:
        raise InvalidParameter("n_samples too small for a probe")
    k_mix = int(k_mix)
    if k_mix < 1:
        raise InvalidParameter("k_mix must be at least 1")
    x0 = ifs.x0
    n2 = 2 * int(n_samples)
    if ifs.is_affine():
        endpoints = _endpoints_affine(ifs, x0, n2, k_mix, seed)
    else:
        endpoints = np.array(
            [_trajectory_generic(ifs, x0, c, k_mix, seed)[-1] for c in range(n2)]
        )
    half = endpoints[: int(n_samples)]
    # bootstrap indices only; chain randomness stays counter-based
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 0x0B007])
    rows = []
    for q in q_list:
        q = float(q)
        vh = np.abs(half - x0) ** q
        vf = np.abs(endpoints - x0) ** q
        e1 = float(vh.mean())
        e2 = float(vf.mean())
        lo1, hi1 = _bootstrap_ci(vh, n_boot, rng)
        lo2, hi2 = _bootstrap_ci(vf, n_boot, rng)
        diverging = (lo2 > hi1) and (e2 - e1 > 0.25 * max(e1, 1e-300))
        try:
            cert = ifs_core.certify_contraction(ifs, q)
            bound = ifs_core.moment_bound(cert)
        except Exception:
            bound = float("nan")
        rows.append(ProbeRow(q, e2, lo2, hi2, e1, lo1, hi1, bool(diverging), bound))
    return ProbeReport(tuple(rows), k_mix, int(n_samples), seed)


# -- exponential moments of the reset family ----------------------------------


@dataclass(frozen=True)
class ExpMomentRow:
    b: float
    product: float
    truncation_bound: float
    mc_estimate: float
    mc_stderr: float
    bias_bound: float
    allowance: float
    passed: bool


@dataclass(frozen=True)
class ExpMomentExperiment:
    a: float
    p: float
    rows: tuple
    k_mix: int
    n_samples: int
    seed: int

    @property
    def passed(self):
        return all(r.passed for r in self.rows)


def _reset_bias_prefactor(a, p, b, K):
    """Bias bound prefactor for E[e^{bX_k}] from a cold start, b > 0.

    Couple the chain from 0 with one from a stationary start on the same
    map indices.  The gap after k steps is X_0 * a^{N(k)} with N the reset
    count, so by the mean value bound and Cauchy-Schwarz

        0 <= E e^{bX} - E e^{bX_k} <= b sqrt(E e^{2bX}) sqrt(m_2) rho_2^{k/2},

    rho_2 = 1 - p + p a^2.  Everything on the right has a certified upper
    bound; this returns the k-independent prefactor.
    """
    m2b = stationary.exp_moment_product(a, p, 2.0 * b, K)
    m2b_up = min(m2b.uniform_bound, m2b.product_value + m2b.truncation_bound)
    cert2 = ifs_core.certify_contraction(ifs_core.reset_ifs(a, p), 2.0)
    m2_up = ifs_core.moment_bound(cert2)
    return b * math.sqrt(m2b_up * m2_up)


def exp_moment_experiment(
    a, p, b_values, n_samples=100000, seed=0, K=64, bias_factor=0.1, k_cap=2000
):
    """Monte Carlo check of the stationary mgf product formula.

    One batch of depth-k chains per (a, p) serves every b.  Each row's
    allowance is 3 x MC standard error + distribution bias + product
    truncation, all certified; PASS means the gap fits inside it.  For
    rigorous bias control positive b must stay below half the divergence
    threshold (so e^{2bX} is integrable); larger b raises InvalidParameter
    rather than reporting an unquantified comparison.
    """
    b_values = [float(b) for b in b_values]
    if not b_values:
        raise InvalidParameter("need at least one b")
    model = ifs_core.reset_ifs(a, p)
    cert2 = ifs_core.certify_contraction(model, 2.0)
    bmax = -math.log1p(-p)
    for b in b_values:
        if b > 0 and 2.0 * b >= bmax:
            raise InvalidParameter(
                "b = %g needs 2b < log(1/(1-p)) = %g for bias control" % (b, bmax)
            )
    products = {b: stationary.exp_moment_product(a, p, b, K) for b in b_values}
    # choose the depth so every b's bias undershoots bias_factor x the
    # anticipated MC standard error
    k_needed = 1
    prefactors = {}
    for b in b_values:
        if b > 0:
            pref = _reset_bias_prefactor(a, p, b, K)
            decay = math.sqrt(cert2.rho)
        elif b < 0:
            cert1 = ifs_core.certify_contraction(model, 1.0)
            pref = abs(b) * ifs_core.moment_bound(cert1)
            decay = cert1.rho
        else:
            prefactors[b] = (0.0, 0.5)
            continue
        prefactors[b] = (pref, decay)
        m2b = stationary.exp_moment_product(a, p, 2.0 * b, K)
        m2b_up = min(m2b.uniform_bound, m2b.product_value + m2b.truncation_bound)
        sd_proxy = math.sqrt(max(m2b_up - products[b].product_value ** 2, 1e-12))
        target = bias_factor * sd_proxy / math.sqrt(n_samples)
        if pref > target and decay > 0.0:
            k_needed = max(
                k_needed, math.ceil(math.log(target / pref) / math.log(decay))
            )
    k_mix = min(int(k_cap), max(32, k_needed))
    xs = sample_stationary(model, n_samples, k_mix=k_mix, seed=seed).samples
    rows = []
    for b in b_values:
        prod = products[b]
        vals = np.exp(b * xs)
        mc = float(vals.mean())
        se = float(vals.std(ddof=1)) / math.sqrt(len(vals))
        pref, decay = prefactors[b]
        bias = pref * decay**k_mix
        allowance = 3.0 * se + bias + prod.truncation_bound
        gap = abs(mc - prod.product_value)
        rows.append(
            ExpMomentRow(
                b, prod.product_value, prod.truncation_bound, mc, se, bias, allowance,
                gap <= allowance,
            )
        )
    return ExpMomentExperiment(a, p, tuple(rows), k_mix, int(n_samples), seed)


# -- geometric tails of the reset family ---------------------------------------


@dataclass(frozen=True)
class TailRow:
    t: float
    count: int
    survival: float
    bound: float
    within_bound: bool


@dataclass(frozen=True)
class TailReport:
    a: float
    p: float
    rows: tuple
    slope: float
    slope_stderr: float
    slope_target: float
    slope_tol: float
    fit_ts: tuple
    k_mix: int
    n_samples: int
    seed: int

    @property
    def bound_ok(self):
        return all(r.within_bound for r in self.rows)

    @property
    def slope_ok(self):
        return abs(self.slope - self.slope_target) <= self.slope_tol


def tail_experiment(
    a, p, n_samples=1000000, seed=0, t_values=None, min_count=100, slope_tol=None,
    fit_window=None,
):
    """Empirical survival of the reset model vs the certified tail bound.

    Chains start at 0, which couples them below a stationary-start chain,
    so the empirical survival underestimates the true one in expectation;
    the bound check is therefore conservative on the bias side, and the
    depth is chosen so the residual W1 bias (< 1e-12) is astronomically
    below the binomial noise.  The log-survival slope is fitted by weighted
    least squares over thresholds with at least ``min_count`` exceedances
    (weights = counts, matching the asymptotic variance of log survival)
    and compared to log(1-p).  ``fit_window`` as (t_lo, t_hi) restricts the
    fit to that threshold range; without it the fit keeps the deep half of
    the usable thresholds, because the survival prefactor converges only
    as t grows and shallow thresholds would bias the slope toward the
    transient.
    """
    model = ifs_core.reset_ifs(a, p)
    cert1 = ifs_core.certify_contraction(model, 1.0)
    k_mix = max(200, mixing_depth(cert1, 1e-12))
    rep = sample_stationary(model, n_samples, k_mix=k_mix, seed=seed, cert=cert1)
    xs = rep.samples
    n = xs.size
    if t_values is None:
        # deepest threshold with expected count around min_count
        t_hi = int(math.log(min_count / n) / math.log1p(-p))
        t_values = np.arange(1, max(t_hi, 2) + 1, dtype=float)
    ts = np.asarray(sorted(float(t) for t in t_values))
    if ts[0] < 1.0:
        raise InvalidParameter("tail thresholds must be >= 1")
    counts = np.array([(xs >= t).sum() for t in ts])
    surv = counts / n
    rows = []
    for t, c, s in zip(ts, counts, surv):
        bnd = stationary.tail_upper_bound(a, p, t)
        se = math.sqrt(max(s * (1.0 - s), 1.0 / n) / n)
        rows.append(TailRow(float(t), int(c), float(s), bnd, s <= bnd + 3.0 * se))
    usable = np.flatnonzero(counts >= int(min_count))
    if fit_window is not None:
        t_lo, t_hi = float(fit_window[0]), float(fit_window[1])
        fit = usable[(ts[usable] >= t_lo) & (ts[usable] <= t_hi)]
        if fit.size < 3:
            raise InvalidParameter(
                "fit window [%g, %g] keeps only %d thresholds with %d "
                "exceedances; need 3" % (t_lo, t_hi, int(fit.size), int(min_count))
            )
    else:
        if usable.size < 6:
            raise InvalidParameter(
                "only %d thresholds reach %d exceedances; need 6 for a "
                "truncated slope fit" % (int(usable.size), int(min_count))
            )
        fit = usable[usable.size // 2:]
    tf = ts[fit]
    yf = np.log(surv[fit])
    wf = counts[fit].astype(np.float64)
    wsum = wf.sum()
    tbar = float((wf * tf).sum() / wsum)
    ybar = float((wf * yf).sum() / wsum)
    sxx = float((wf * (tf - tbar) ** 2).sum())
    slope = float((wf * (tf - tbar) * (yf - ybar)).sum() / sxx)
    # var(log S_t) ~ (1 - S)/(n S) ~ 1/count; nested events correlate across
    # thresholds, so this is an approximation, reported for scale only
    slope_se = math.sqrt(1.0 / sxx)
    target = math.log1p(-p)
    tol = 0.05 * abs(target) if slope_tol is None else float(slope_tol)
    return TailReport(
        float(a), float(p), tuple(rows), slope, slope_se, target, tol,
        tuple(float(t) for t in tf), k_mix, int(n), seed,
    )
