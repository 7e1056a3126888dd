"""IFS models, transfer operators, contraction certificates.

The certificate algebra is the backbone of every error ledger downstream,
so the closed-form cases (Bernoulli family, two-map family, heavy-tail
family) are pinned exactly and the operator-level contraction is exercised
property-style against the transport module.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifslab import ifs_core, response, transport
from ifslab.errors import (
    InvalidExponent,
    InvalidModel,
    InvalidParameter,
    NotContractingAtThisExponent,
)
from ifslab.ifs_core import (
    ContractionCertificate,
    IfsModel,
    Map1D,
    apply_dual_transfer,
    apply_transfer,
    certify_contraction,
    find_exponent,
    from_config,
    heavy_tail_ifs,
    moment_bound,
    reduce_exponent,
    reset_ifs,
    to_config,
    two_map_ifs,
)
from ifslab.measures import DiscreteMeasure, dirac


def _meas(xs, ws):
    return DiscreteMeasure(np.asarray(xs, float), np.asarray(ws, float), canonical=True)


def _random_contracting_ifs(rng, n_maps=None):
    k = n_maps or int(rng.integers(1, 5))
    maps = [
        Map1D.affine(rng.uniform(-0.9, 0.9), rng.uniform(-2, 2)) for _ in range(k)
    ]
    p = rng.uniform(0.1, 1.0, k)
    return IfsModel(tuple(maps), p / p.sum(), x0=float(rng.uniform(-1, 1)))


def _random_measure(rng, max_atoms=25):
    n = int(rng.integers(1, max_atoms + 1))
    xs = np.sort(rng.uniform(-3, 3, n)) + np.arange(n) * 1e-9
    ws = rng.uniform(0.05, 1.0, n)
    return _meas(xs, ws / ws.sum())


# -- model validation ---------------------------------------------------------


def test_model_validation():
    with pytest.raises(InvalidModel):
        IfsModel((), np.array([]))
    with pytest.raises(InvalidModel):
        IfsModel((Map1D.affine(0.5, 0.0),), np.array([0.9]))
    with pytest.raises(InvalidModel):
        IfsModel(
            (Map1D.affine(0.5, 0.0), Map1D.affine(0.5, 1.0)), np.array([0.6, 0.6])
        )
    with pytest.raises(InvalidModel):
        Map1D.affine(np.inf, 0.0)


def test_family_constructors_validate():
    with pytest.raises(InvalidParameter):
        reset_ifs(1.0, 0.5)
    with pytest.raises(InvalidParameter):
        reset_ifs(0.5, 0.0)
    with pytest.raises(InvalidParameter):
        response.bernoulli_ifs(0.0)
    with pytest.raises(InvalidParameter):
        response.bernoulli_ifs(1.0)


# -- transfer operators -------------------------------------------------------


def test_dual_transfer_example():
    bern = response.bernoulli_ifs(0.5)
    out = apply_dual_transfer(bern, dirac(0.0))
    assert np.array_equal(out.xs, [0.0, 0.5])
    assert np.allclose(out.ws, [0.5, 0.5])
    assert out.canonical


def test_transfer_examples():
    bern = response.bernoulli_ifs(0.5)
    assert apply_transfer(bern, lambda x: np.ones_like(x), 0.7) == pytest.approx(1.0)
    # L(id)(0) = sum p_i phi_i(0) = 0.5*0 + 0.5*0.5
    assert apply_transfer(bern, lambda x: x, 0.0) == pytest.approx(0.25)
    xs = np.linspace(0, 1, 11)
    vals = apply_transfer(bern, lambda x: np.sin(x), xs)
    assert vals.shape == xs.shape
    assert np.all(vals >= np.sin(0.0) - 1e-12)
    assert np.all(vals <= np.sin(1.0) + 1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
@settings(max_examples=80, deadline=None)
def test_duality_of_transfer_operators(seed_m, seed_f):
    # integral f d(L* m) == integral (L f) dm for any f; piecewise-linear
    # test functions evaluate both sides exactly enough for 1e-10
    rng = np.random.default_rng([seed_m, 1])
    ifs = _random_contracting_ifs(rng)
    m = _random_measure(rng)
    frng = np.random.default_rng([seed_f, 2])
    knot = float(frng.uniform(-2, 2))
    slope = float(frng.uniform(-1, 1))

    def f(x):
        return np.abs(np.asarray(x) - knot) + slope * np.asarray(x)

    lhs_m = apply_dual_transfer(ifs, m)
    lhs = float(np.sum(lhs_m.ws * f(lhs_m.xs)))
    rhs = float(np.sum(m.ws * apply_transfer(ifs, f, m.xs)))
    assert lhs == pytest.approx(rhs, abs=1e-10, rel=1e-10)


# -- certificates -------------------------------------------------------------


def test_certify_bernoulli_closed_form():
    for lam in (0.3, 0.5, 0.7):
        for q in (0.5, 1.0, 2.0):
            cert = certify_contraction(response.bernoulli_ifs(lam), q)
            assert cert.rho == pytest.approx(lam**q, rel=1e-15)
            assert cert.A == pytest.approx(0.5 * (1 - lam) ** q, rel=1e-15)
            assert cert.exact
            assert cert.x0 == 0.0


def test_certify_two_map_average_contraction():
    # one expanding map, still contracting on q = 1/2 average
    ifs = two_map_ifs(0.5, 1.5)
    cert = certify_contraction(ifs, 0.5)
    assert cert.rho == pytest.approx(0.5 * (0.5**0.5 + 1.5**0.5), rel=1e-15)
    assert cert.rho == pytest.approx(0.9659258262890682, abs=1e-12)
    assert cert.A == pytest.approx(0.5)
    with pytest.raises(NotContractingAtThisExponent) as exc:
        certify_contraction(ifs, 2.0)
    assert exc.value.rho == pytest.approx(0.5 * (0.25 + 2.25))


def test_certify_heavy_tail_q1():
    model, lumped = heavy_tail_ifs(0.5, [0.4, 0.3, 0.2, 0.1], truncation=5)
    assert lumped == 0.0
    cert = certify_contraction(model, 1.0)
    p0 = 0.4
    assert cert.rho == pytest.approx(1.0 - (1.0 - 0.5) * p0, rel=1e-14)


def test_certificate_validation():
    with pytest.raises(InvalidParameter):
        ContractionCertificate(1.0, 1.0, 0.5, 0.0)
    with pytest.raises(InvalidParameter):
        ContractionCertificate(0.0, 0.5, 0.5, 0.0)
    with pytest.raises(InvalidParameter):
        ContractionCertificate(1.0, 0.5, -1.0, 0.0)


def test_rho_bar_rooting():
    cert = ContractionCertificate(2.0, 0.25, 1.0, 0.0)
    assert cert.rho_bar == 0.5
    assert cert.A_bar == 1.0
    assert cert.start_distance_bound() == 2.0
    cert = ContractionCertificate(0.5, 0.25, 1.0, 0.0)
    assert cert.rho_bar == 0.25  # no root below q = 1


@given(st.integers(0, 2**32 - 1), st.sampled_from([1.0, 1.5, 2.0]))
@settings(max_examples=60, deadline=None)
def test_dual_transfer_contracts_wq(seed, q):
    rng = np.random.default_rng([seed, 3])
    ifs = _random_contracting_ifs(rng)
    cert = certify_contraction(ifs, q)
    m0 = _random_measure(rng)
    m1 = _random_measure(rng)
    before = transport.wq_1d_monotone(m0, m1, q).distance
    after = transport.wq_1d_monotone(
        apply_dual_transfer(ifs, m0), apply_dual_transfer(ifs, m1), q
    ).distance
    assert after <= cert.rho_bar * before + 1e-9


def test_dual_transfer_contracts_wq_concave():
    rng = np.random.default_rng(7)
    q = 0.5
    for _ in range(15):
        ifs = _random_contracting_ifs(rng)
        cert = certify_contraction(ifs, q)
        m0 = _random_measure(rng, 8)
        m1 = _random_measure(rng, 8)
        before = transport.wq_exact_flow(m0, m1, q).distance
        after = transport.wq_exact_flow(
            apply_dual_transfer(ifs, m0), apply_dual_transfer(ifs, m1), q
        ).distance
        assert after <= cert.rho_bar * before + 1e-9


def test_contraction_ratio_tight_for_bernoulli_diracs():
    # both maps share slope lambda, so L* shifts shapes rigidly and the
    # rate rho_bar is attained exactly on dirac pairs
    rng = np.random.default_rng(10)
    for lam in (0.4, 0.6):
        ifs = response.bernoulli_ifs(lam)
        for q in (1.0, 2.0):
            cert = certify_contraction(ifs, q)
            for _ in range(5):
                x, y = rng.uniform(-2, 2, 2)
                if abs(x - y) < 1e-6:
                    continue
                d0 = abs(x - y)
                d1 = transport.wq_1d_monotone(
                    apply_dual_transfer(ifs, dirac(x)),
                    apply_dual_transfer(ifs, dirac(y)),
                    q,
                ).distance
                assert d1 / d0 == pytest.approx(cert.rho_bar, rel=1e-10)


# -- exponent algebra ---------------------------------------------------------


def test_reduce_exponent_example():
    cert = ContractionCertificate(2.0, 0.25, 1.0, 0.0, exact=True)
    lower = reduce_exponent(cert, 1.0)
    assert lower.q == 1.0
    assert lower.rho == pytest.approx(0.5)
    assert lower.A == pytest.approx(1.0)
    assert not lower.exact
    with pytest.raises(InvalidExponent):
        reduce_exponent(cert, 2.0)
    with pytest.raises(InvalidExponent):
        reduce_exponent(cert, 2.5)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 0.99))
@settings(max_examples=60, deadline=None)
def test_reduce_exponent_sound(seed, frac):
    # power-mean inequality: the reduced certificate dominates the direct one
    rng = np.random.default_rng([seed, 4])
    ifs = _random_contracting_ifs(rng)
    q = float(rng.uniform(1.0, 3.0))
    try:
        cert = certify_contraction(ifs, q)
    except NotContractingAtThisExponent:
        return
    q_new = frac * q
    reduced = reduce_exponent(cert, q_new)
    direct = certify_contraction(ifs, q_new)
    assert direct.rho <= reduced.rho + 1e-12
    assert direct.A <= reduced.A + 1e-12


def test_find_exponent_cases():
    # all maps contract: q_max itself is admissible
    q, F = find_exponent(response.bernoulli_ifs(0.5))
    assert q == 1.0
    assert F == pytest.approx(0.5)
    # mixed expansion: largest admissible q just under the F(q) = 1 crossing
    ifs = two_map_ifs(0.5, 1.5)
    q, F = find_exponent(ifs)
    assert 0.45 < q < 1.0
    assert F <= 1.0 - 1e-6
    cert = certify_contraction(ifs, q)
    assert cert.rho == pytest.approx(F, rel=1e-12)
    # log-average criterion fails: no admissible exponent at all
    hopeless = IfsModel(
        (Map1D.affine(0.9, 0.0), Map1D.affine(1.2, 1.0)),
        np.array([0.1, 0.9]),
    )
    assert find_exponent(hopeless) is None


# -- moment bounds ------------------------------------------------------------


def test_moment_bound_examples():
    assert moment_bound(ContractionCertificate(1.0, 0.6, 0.2, 0.0)) == pytest.approx(
        0.5
    )
    assert moment_bound(ContractionCertificate(2.0, 0.25, 1.0, 0.0)) == pytest.approx(
        4.0
    )


def test_two_map_moment_bound_closed_form():
    # certificate route gives 1/(2 - (a^q + b^q)) at q <= 1, which is
    # tighter than the max-displacement form 2/(2 - (a^q + b^q))
    rng = np.random.default_rng(15)
    for _ in range(10):
        a = float(rng.uniform(0.1, 0.9))
        b = float(rng.uniform(0.1, 0.9))
        q = float(rng.uniform(0.3, 1.0))
        cert = certify_contraction(two_map_ifs(a, b), q)
        got = moment_bound(cert)
        s = a**q + b**q
        assert got == pytest.approx(1.0 / (2.0 - s), rel=1e-12)
        assert got <= 2.0 / (2.0 - s) + 1e-15


# -- heavy-tail family --------------------------------------------------------


def test_heavy_tail_lumping():
    w = [2.0**-n for n in range(61)]
    model, lumped = heavy_tail_ifs(0.5, w, truncation=30)
    assert model.n_maps == 31
    assert lumped < 1e-9
    assert model.probs.sum() == pytest.approx(1.0, abs=1e-15)
    # translations are x + n in order
    assert model.maps[1].a == 1.0 and model.maps[1].b == 1.0
    assert model.maps[30].b == 30.0


def test_heavy_tail_degenerate_single_contraction():
    model, lumped = heavy_tail_ifs(0.5, [1.0, 0.0], truncation=1)
    assert lumped == 0.0
    cert = certify_contraction(model, 2.0)
    assert cert.rho == pytest.approx(0.25)
    assert cert.A == 0.0


def test_heavy_tail_polynomial_weights():
    w = [0.5] + [n**-4.0 for n in range(1, 41)]
    model, lumped = heavy_tail_ifs(0.3, w, truncation=40)
    assert lumped == 0.0
    cert = certify_contraction(model, 1.0)
    p0 = model.probs[0]
    assert cert.rho == pytest.approx(1.0 - (1.0 - 0.3) * p0, rel=1e-14)
    with pytest.raises(InvalidModel):
        heavy_tail_ifs(0.5, [0.0, 1.0], truncation=1)
    with pytest.raises(InvalidParameter):
        heavy_tail_ifs(1.5, [0.5, 0.5], truncation=1)


# -- config round-trip --------------------------------------------------------


def test_config_roundtrip():
    rng = np.random.default_rng(19)
    for _ in range(10):
        ifs = _random_contracting_ifs(rng)
        back = from_config(to_config(ifs))
        assert back.n_maps == ifs.n_maps
        assert np.array_equal(back.probs, ifs.probs)
        for m0, m1 in zip(ifs.maps, back.maps):
            assert m0.a == m1.a and m0.b == m1.b
        assert back.x0 == ifs.x0
        assert back.label == ifs.label


def test_config_rejects_user_maps():
    ifs = IfsModel(
        (Map1D.user(lambda x: 0.5 * np.tanh(x), 0.5, 0.0),), np.array([1.0])
    )
    with pytest.raises(InvalidModel):
        to_config(ifs)
