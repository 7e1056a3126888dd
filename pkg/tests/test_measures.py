"""Discrete measures: canonical form, moments, quantization, serialization."""

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifslab import measures, transport
from ifslab.errors import InvalidMeasure, InvalidParameter, NotCanonical
from ifslab.measures import (
    DiscreteMeasure,
    MomentSpec,
    canonicalize,
    dirac,
    empirical_from_samples,
    moment,
    quantize,
    support_radius,
)


def _uniform_grid(n):
    xs = np.linspace(0.0, 1.0, n)
    return DiscreteMeasure(xs, np.full(n, 1.0 / n), canonical=True)


finite_pos = st.floats(
    min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False
)
raw_measures = st.lists(
    st.tuples(finite_pos, st.floats(min_value=1e-6, max_value=1.0)),
    min_size=1,
    max_size=40,
).map(
    lambda pairs: DiscreteMeasure(
        np.array([p for p, _ in pairs]),
        np.array([w for _, w in pairs]) / sum(w for _, w in pairs),
    )
)


# -- construction and canonical form ---------------------------------------


def test_rejects_empty_and_nonfinite():
    with pytest.raises(InvalidMeasure):
        DiscreteMeasure(np.array([]), np.array([]))
    with pytest.raises(InvalidMeasure):
        DiscreteMeasure(np.array([np.nan]), np.array([1.0]))
    with pytest.raises(InvalidMeasure):
        DiscreteMeasure(np.array([0.0]), np.array([np.inf]))
    with pytest.raises(InvalidMeasure):
        DiscreteMeasure(np.array([0.0]), np.array([-0.1]))
    with pytest.raises(InvalidMeasure):
        DiscreteMeasure(np.array([0.0]), np.array([0.0]))


def test_canonical_flag_validation():
    with pytest.raises(InvalidMeasure):
        DiscreteMeasure(np.array([1.0, 0.0]), np.array([0.5, 0.5]), canonical=True)
    with pytest.raises(InvalidMeasure):
        DiscreteMeasure(np.array([0.0, 0.0]), np.array([0.5, 0.5]), canonical=True)
    with pytest.raises(InvalidMeasure):
        DiscreteMeasure(np.array([0.0, 1.0]), np.array([0.7, 0.4]), canonical=True)


def test_canonicalize_merges_and_sorts():
    m = DiscreteMeasure(np.array([0.5, 0.5, 0.1]), np.array([0.3, 0.3, 0.4]))
    c = canonicalize(m)
    assert np.array_equal(c.xs, [0.1, 0.5])
    assert np.allclose(c.ws, [0.4, 0.6], atol=1e-15)
    assert c.canonical


def test_canonicalize_rejects_mass_drift():
    m = DiscreteMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.6]))
    with pytest.raises(InvalidMeasure):
        canonicalize(m)


def test_mass_drift_within_tolerance_renormalized():
    m = DiscreteMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.5 + 5e-10]))
    c = canonicalize(m)
    assert c.total_mass() == pytest.approx(1.0, abs=1e-15)


@given(raw_measures)
@settings(max_examples=120, deadline=None)
def test_canonicalize_idempotent_and_moment_preserving(m):
    c = canonicalize(m)
    cc = canonicalize(c)
    assert np.array_equal(c.xs, cc.xs)
    assert np.array_equal(c.ws, cc.ws)
    # merging bitwise-equal atoms cannot change any moment
    for q, x0 in [(1.0, 0.0), (2.0, 0.5), (0.5, -1.0)]:
        spec = MomentSpec(q, x0)
        scale = max(1.0, abs(moment(m, spec)))
        assert abs(moment(c, spec) - moment(m, spec)) <= 1e-12 * scale


def test_require_canonical():
    m = DiscreteMeasure(np.array([0.0]), np.array([1.0]))
    with pytest.raises(NotCanonical):
        measures.require_canonical(m)


# -- moments ----------------------------------------------------------------


def test_moment_examples():
    assert moment(dirac(0.0), MomentSpec(2.0)) == 0.0
    half = DiscreteMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.5]), canonical=True)
    assert moment(half, MomentSpec(1.0)) == 0.5
    grid = _uniform_grid(1001)
    assert moment(grid, MomentSpec(1.0)) == pytest.approx(0.5, abs=1e-3)


def test_moment_equals_transport_cost_to_dirac():
    # integral |x-x0|^q dm is the (un-rooted) optimal cost against the
    # point mass at x0, since every coupling with a dirac is the same
    rng = np.random.default_rng(8)
    for _ in range(20):
        n = int(rng.integers(1, 30))
        xs = np.sort(rng.uniform(-2, 2, n)) + np.arange(n) * 1e-9
        ws = rng.uniform(0.1, 1, n)
        m = DiscreteMeasure(xs, ws / ws.sum(), canonical=True)
        x0 = float(rng.uniform(-2, 2))
        for q in (1.0, 1.5, 2.0, 3.0):
            plan = transport.wq_1d_monotone(dirac(x0), m, q)
            assert moment(m, MomentSpec(q, x0)) == pytest.approx(
                plan.cost, abs=1e-10, rel=1e-10
            )


def test_support_radius():
    m = DiscreteMeasure(np.array([-2.0, 3.0]), np.array([0.5, 0.5]), canonical=True)
    assert support_radius(m, 0.0) == 3.0
    assert support_radius(m, -2.0) == 5.0


def test_moment_spec_validation():
    with pytest.raises(InvalidParameter):
        MomentSpec(0.0)
    with pytest.raises(InvalidParameter):
        MomentSpec(-1.0)
    with pytest.raises(InvalidParameter):
        MomentSpec(1.0, float("nan"))


# -- empirical measures -------------------------------------------------------


def test_empirical_from_samples():
    m = empirical_from_samples(np.array([3.0, 1.0, 3.0, 2.0]))
    assert np.array_equal(m.xs, [1.0, 2.0, 3.0])
    assert np.allclose(m.ws, [0.25, 0.25, 0.5])
    assert m.canonical
    with pytest.raises(InvalidMeasure):
        empirical_from_samples(np.array([]))
    with pytest.raises(InvalidMeasure):
        empirical_from_samples(np.array([1.0, np.inf]))


# -- quantization -------------------------------------------------------------


def test_quantize_noop_below_budget():
    m = _uniform_grid(10)
    out, err = quantize(m, 10, MomentSpec(2.0))
    assert out is m
    assert err == 0.0


def test_quantize_two_atoms_to_one():
    half = DiscreteMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.5]), canonical=True)
    out, err = quantize(half, 1, MomentSpec(1.0))
    assert out.n_atoms == 1
    # any single atom is W1-distance 0.5 from this measure; median placement
    # lands on an input atom
    assert err == pytest.approx(0.5, abs=1e-12)
    out2, err2 = quantize(half, 1, MomentSpec(2.0))
    assert out2.xs[0] == pytest.approx(0.5, abs=1e-12)
    assert err2 == pytest.approx(0.5, abs=1e-12)  # sqrt(0.5^2) = 0.5


def test_quantize_grid_error_small():
    grid = _uniform_grid(1001)
    out, err = quantize(grid, 101, MomentSpec(1.0))
    assert out.n_atoms <= 101
    assert err <= 0.01
    assert transport.wq_1d_monotone(grid, out, 1.0).distance == pytest.approx(
        err, abs=1e-15
    )


def test_quantize_error_nonincreasing_in_budget():
    rng = np.random.default_rng(21)
    xs = np.sort(rng.uniform(0, 1, 400)) + np.arange(400) * 1e-12
    ws = rng.uniform(0.5, 1.5, 400)
    m = DiscreteMeasure(xs, ws / ws.sum(), canonical=True)
    for q in (1.0, 2.0):
        errs = [quantize(m, M, MomentSpec(q))[1] for M in (5, 10, 20, 50, 100)]
        for a, b in zip(errs, errs[1:]):
            assert b <= a + 1e-12


def test_quantize_error_is_exact_wq_for_concave_cost():
    rng = np.random.default_rng(4)
    xs = np.sort(rng.uniform(0, 1, 60)) + np.arange(60) * 1e-12
    ws = rng.uniform(0.5, 1.5, 60)
    m = DiscreteMeasure(xs, ws / ws.sum(), canonical=True)
    out, err = quantize(m, 7, MomentSpec(0.5))
    exact = transport.wq_exact_flow(m, out, 0.5).distance
    assert err == pytest.approx(exact, abs=1e-12)


def test_quantize_rejects_bad_budget():
    with pytest.raises(InvalidParameter):
        quantize(_uniform_grid(3), 0, MomentSpec(1.0))
    with pytest.raises(NotCanonical):
        quantize(
            DiscreteMeasure(np.array([0.0, 0.0]), np.array([0.5, 0.5])),
            1,
            MomentSpec(1.0),
        )


# -- serialization ------------------------------------------------------------


@given(raw_measures)
@settings(max_examples=60, deadline=None)
def test_csv_roundtrip_bitwise(m):
    c = canonicalize(m)
    buf = io.StringIO()
    measures.to_csv(c, buf)
    back = measures.from_csv(io.StringIO(buf.getvalue()))
    assert np.array_equal(c.xs, back.xs)
    assert np.array_equal(c.ws, back.ws)
    assert back.canonical == c.canonical


@given(raw_measures)
@settings(max_examples=60, deadline=None)
def test_json_roundtrip_bitwise(m):
    c = canonicalize(m)
    s = measures.to_json(c)
    back = measures.from_json(s)
    assert np.array_equal(c.xs, back.xs)
    assert np.array_equal(c.ws, back.ws)


def test_csv_format_is_stable():
    m = DiscreteMeasure(np.array([0.25]), np.array([1.0]), canonical=True)
    buf = io.StringIO()
    measures.to_csv(m, buf)
    assert buf.getvalue() == "position,weight\n0.25,1.0\n"


def test_tricky_doubles_roundtrip():
    xs = np.array([-0.0, 1e-308, 0.1 + 0.2, 1e300])
    xs = np.unique(xs)
    m = DiscreteMeasure(xs, np.full(xs.size, 1.0 / xs.size), canonical=True)
    buf = io.StringIO()
    measures.to_csv(m, buf)
    back = measures.from_csv(io.StringIO(buf.getvalue()))
    assert np.array_equal(m.xs, back.xs)
    assert np.array_equal(m.ws, back.ws)
