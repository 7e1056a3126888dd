"""Chaos-game sampling: determinism, bias bounds, ergodic decay, tails."""

import math

import numpy as np
import pytest

from ifslab import ifs_core, measures, response, transport
from ifslab.chaos_game import (
    ChainConfig,
    ergodicity_experiment,
    exp_moment_experiment,
    mixing_depth,
    moment_growth_probe,
    sample_stationary,
    simulate_chain,
    tail_experiment,
)
from ifslab.errors import (
    InvalidModel,
    InvalidParameter,
    ReferenceTooCoarse,
)
from ifslab.ifs_core import (
    ContractionCertificate,
    IfsModel,
    Map1D,
    certify_contraction,
    heavy_tail_ifs,
    reset_ifs,
    two_map_ifs,
)


def _single_contraction(a=0.5, x0=0.0):
    return IfsModel((Map1D.affine(a, 0.0),), np.array([1.0]), x0=x0)


# -- chain simulation ---------------------------------------------------------


def test_single_map_chain_is_deterministic_halving():
    cfg = ChainConfig(_single_contraction(), x_start=1.0, steps=8)
    traj = simulate_chain(cfg)
    assert np.array_equal(traj, 0.5 ** np.arange(1, 9))


def test_chain_seed_determinism():
    ifs = response.bernoulli_ifs(0.5)
    a = simulate_chain(ChainConfig(ifs, x_start=0.3, steps=50, seed=7))
    b = simulate_chain(ChainConfig(ifs, x_start=0.3, steps=50, seed=7))
    c = simulate_chain(ChainConfig(ifs, x_start=0.3, steps=50, seed=8))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_chain_prefix_consistency():
    # counter-based draws: a longer run must extend the shorter one bitwise
    ifs = response.bernoulli_ifs(0.6)
    short = simulate_chain(ChainConfig(ifs, x_start=0.2, steps=30, seed=3))
    long = simulate_chain(ChainConfig(ifs, x_start=0.2, steps=80, seed=3))
    assert np.array_equal(short, long[:30])


def test_burn_in_keeps_the_tail_states():
    ifs = response.bernoulli_ifs(0.5)
    full = simulate_chain(ChainConfig(ifs, x_start=0.5, steps=10, seed=1))
    tail = simulate_chain(ChainConfig(ifs, x_start=0.5, steps=10, burn_in=4, seed=1))
    assert tail.size == 6
    assert np.array_equal(tail, full[4:])


def test_chain_config_validation():
    ifs = response.bernoulli_ifs(0.5)
    with pytest.raises(InvalidParameter):
        ChainConfig(ifs, steps=5, burn_in=5)
    with pytest.raises(InvalidParameter):
        ChainConfig(ifs, steps=4, burn_in=7)
    with pytest.raises(InvalidParameter):
        ChainConfig(ifs, steps=1, burn_in=-1)


def test_bernoulli_chain_stays_in_unit_interval():
    ifs = response.bernoulli_ifs(0.5)
    traj = simulate_chain(ChainConfig(ifs, x_start=0.5, steps=500, seed=11))
    assert np.all(traj >= 0.0) and np.all(traj <= 1.0)


def test_user_map_chain_matches_affine_twin():
    # a user-tagged callable that happens to be affine must reproduce the
    # affine kernel's states exactly: same index draws, same arithmetic
    lam = 0.5
    aff = response.bernoulli_ifs(lam)
    usr = IfsModel(
        (
            Map1D.user(lambda x: lam * x, lam, 0.0),
            Map1D.user(lambda x: lam * x + (1 - lam), lam, 1 - lam),
        ),
        np.array([0.5, 0.5]),
        x0=0.0,
    )
    ta = simulate_chain(ChainConfig(aff, x_start=0.25, steps=40, seed=5))
    tu = simulate_chain(ChainConfig(usr, x_start=0.25, steps=40, seed=5))
    assert np.array_equal(ta, tu)


# -- mixing depth and stationary sampling --------------------------------------


def test_mixing_depth_formula():
    cert = ContractionCertificate(1.0, 0.5, 0.5, 0.0)  # start bound = 1
    assert mixing_depth(cert, 1e-3) == 10
    assert 0.5**10 <= 1e-3
    assert mixing_depth(cert, 2.0) == 0
    zero = ContractionCertificate(1.0, 0.0, 0.5, 0.0)
    assert mixing_depth(zero, 1e-9) == 1
    with pytest.raises(InvalidParameter):
        mixing_depth(cert, 0.0)


def test_sample_stationary_single_contraction():
    ifs = _single_contraction(0.5, x0=1.0)
    cert = certify_contraction(ifs, 1.0)
    rep = sample_stationary(ifs, 100, k_mix=20, seed=0, cert=cert, x_start=1.0)
    assert rep.samples.shape == (100,)
    # stationary law is delta_0; every sample is exactly 0.5^20
    assert np.all(rep.samples == 0.5**20)
    assert rep.bias_bound == pytest.approx(cert.rho_bar**20 * cert.start_distance_bound())
    assert abs(rep.samples[0] - 0.0) <= rep.bias_bound


def test_sample_stationary_auto_depth_meets_target():
    ifs = response.bernoulli_ifs(0.5)
    rep = sample_stationary(ifs, 50, seed=0, bias_target=1e-8)
    assert rep.bias_bound <= 1e-8
    assert rep.k_mix == mixing_depth(certify_contraction(ifs, 1.0), 1e-8)


def test_sample_stationary_determinism_and_validation():
    ifs = response.bernoulli_ifs(0.5)
    a = sample_stationary(ifs, 200, k_mix=30, seed=4).samples
    b = sample_stationary(ifs, 200, k_mix=30, seed=4).samples
    assert np.array_equal(a, b)
    with pytest.raises(InvalidParameter):
        sample_stationary(ifs, 0)


def test_sample_mean_near_half():
    # E[X] = 1/2 for the Bernoulli family at every lambda
    ifs = response.bernoulli_ifs(0.6)
    rep = sample_stationary(ifs, 40000, seed=2, bias_target=1e-9)
    se = rep.samples.std(ddof=1) / math.sqrt(rep.samples.size)
    assert abs(rep.samples.mean() - 0.5) <= 4 * se + rep.bias_bound


# -- ergodic averages ----------------------------------------------------------


def _bernoulli_reference(target=5e-4, atoms=2048):
    ifs = response.bernoulli_ifs(0.5)
    cert = certify_contraction(ifs, 1.0)
    from ifslab.stationary import solve_stationary

    rep = solve_stationary(ifs, cert, max_atoms=atoms, target_error=target)
    return ifs, rep


def test_ergodicity_decay_and_rows():
    ifs, ref = _bernoulli_reference()
    out = ergodicity_experiment(
        ifs, ref.measure, [10, 100, 1000], chains=40, seed=0,
        ref_error=ref.total_error_bound,
    )
    rows = out.rows()
    assert len(rows) == 3
    ns = [r[0] for r in rows]
    means = [r[1] for r in rows]
    assert ns == [10, 100, 1000]
    assert means[0] > means[1] > means[2]
    assert -0.8 <= out.slope <= -0.25
    assert all(r[2] > 0 for r in rows)


def test_ergodicity_seed_reproducibility():
    ifs, ref = _bernoulli_reference(target=2e-3, atoms=512)
    a = ergodicity_experiment(ifs, ref.measure, [10, 100], chains=10, seed=5)
    b = ergodicity_experiment(ifs, ref.measure, [10, 100], chains=10, seed=5)
    assert np.array_equal(a.mean_w1, b.mean_w1)
    assert a.slope == b.slope


def test_ergodicity_stderr_shrinks_with_chains():
    ifs, ref = _bernoulli_reference(target=2e-3, atoms=512)
    small = ergodicity_experiment(ifs, ref.measure, [50], chains=20, seed=1)
    big = ergodicity_experiment(ifs, ref.measure, [50], chains=80, seed=1)
    # 4x the chains halves the standard error; allow wide statistical play
    assert big.stderr_w1[0] < 0.9 * small.stderr_w1[0]


def test_ergodicity_validation():
    ifs, ref = _bernoulli_reference(target=2e-3, atoms=512)
    with pytest.raises(InvalidParameter):
        ergodicity_experiment(ifs, ref.measure, [1, 10], chains=10)
    with pytest.raises(InvalidParameter):
        ergodicity_experiment(ifs, ref.measure, [10, 100], chains=1)
    with pytest.raises(ReferenceTooCoarse):
        ergodicity_experiment(ifs, ref.measure, [10, 100], chains=10, ref_error=1.0)
    with pytest.raises(InvalidModel):
        ergodicity_experiment(two_map_ifs(0.5, 1.5), ref.measure, [10, 100], chains=10)


# -- moment growth probe --------------------------------------------------------


def test_probe_exponential_tails_stable():
    w = [2.0**-n for n in range(41)]
    model, _ = heavy_tail_ifs(0.5, w, truncation=40)
    rep = moment_growth_probe(model, [0.5, 1.0, 2.0, 4.0], n_samples=4000, k_mix=150)
    assert len(rep.rows) == 4
    for row in rep.rows:
        assert not row.diverging
        assert np.isfinite(row.cert_bound)
        assert row.ci_lo <= row.estimate <= row.ci_hi


def test_probe_small_exponent_limit():
    # as q -> 0+, the empirical moment tends to the mass off the base point
    model = reset_ifs(0.0, 0.5)
    rep = moment_growth_probe(model, [1e-6], n_samples=8000, k_mix=100, seed=3)
    est = rep.rows[0].estimate
    assert abs(est - 0.5) < 0.03  # mu({x != 0}) = 1 - p = 0.5


def test_probe_validation():
    model = reset_ifs(0.5, 0.5)
    with pytest.raises(InvalidParameter):
        moment_growth_probe(model, [1.0], n_samples=4)
    with pytest.raises(InvalidParameter):
        moment_growth_probe(model, [1.0], n_samples=100, k_mix=0)


# -- exponential moment experiment ----------------------------------------------


def test_exp_moment_experiment_rows_pass():
    out = exp_moment_experiment(
        0.5, 0.5, [-0.5, 0.1, 0.3], n_samples=30000, seed=0
    )
    assert len(out.rows) == 3
    for row in out.rows:
        assert row.passed
        assert abs(row.mc_estimate - row.product) <= row.allowance
        assert row.allowance > 0
    assert out.k_mix >= 32


def test_exp_moment_rejects_unsafe_b():
    bmax = -math.log1p(-0.5)
    with pytest.raises(InvalidParameter):
        exp_moment_experiment(0.5, 0.5, [0.5 * bmax + 0.01], n_samples=1000)
    with pytest.raises(InvalidParameter):
        exp_moment_experiment(0.5, 0.5, [], n_samples=1000)


# -- tail experiment -------------------------------------------------------------


def test_tail_experiment_bounds_and_slope():
    out = tail_experiment(0.5, 0.5, n_samples=200000, seed=0)
    assert out.bound_ok
    assert out.slope_ok
    assert out.slope_target == pytest.approx(math.log(0.5))
    assert len(out.fit_ts) >= 3
    for row in out.rows:
        assert row.survival <= row.bound or not row.within_bound


def test_tail_experiment_fit_window():
    out = tail_experiment(
        0.5, 0.5, n_samples=200000, seed=0, fit_window=(5.0, 12.0)
    )
    assert min(out.fit_ts) >= 5.0 and max(out.fit_ts) <= 12.0
    with pytest.raises(InvalidParameter):
        tail_experiment(0.5, 0.5, n_samples=50000, seed=0, fit_window=(10.0, 11.0))


def test_tail_survival_recursion_on_samples():
    # stationarity forces mu([n+1, n+2)) >= (1-p) mu([n, n+1)); check the
    # empirical version with a 5 sigma statistical allowance
    p = 0.5
    model = reset_ifs(0.5, p)
    rep = sample_stationary(model, 200000, seed=9, bias_target=1e-9)
    xs = rep.samples
    n_tot = xs.size
    slack = 5.0 * math.sqrt(0.25 / n_tot)
    for n in range(4):
        lo = float(np.mean((xs >= n) & (xs < n + 1)))
        hi = float(np.mean((xs >= n + 1) & (xs < n + 2)))
        assert hi >= (1 - p) * lo - slack
