import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from splitweak.errors import ConfigurationError
from splitweak.weights import (
    WeightFunction,
    eval_weight,
    growth_decay_ratio,
    polynomial_weight,
    sublevel_member,
    weighted_sup_norm,
)

finite = st.floats(-50, 50, allow_nan=False)


def test_polynomial_values():
    assert eval_weight(polynomial_weight(2), [1.0, 2.0]) == pytest.approx(6.0)
    assert eval_weight(polynomial_weight(4), [1.0]) == pytest.approx(4.0)


def test_cosh_and_gaussexp_at_origin():
    assert eval_weight(WeightFunction("cosh", 1.0), [0.0]) == 1.0
    assert eval_weight(WeightFunction("gaussexp", 0.3), [0.0, 0.0]) == 1.0


def test_sobolev_level_norm():
    spec = (-1.0, -4.0)
    w = WeightFunction("polynomial", 2.0, level=1, spectrum=spec)
    x = np.array([0.5, 2.0])
    # ||x||^2 + ||A x||^2
    expected = 1 + (0.25 + 4.0) + (0.25 * 1 + 4.0 * 16)
    assert eval_weight(w, x) == pytest.approx(expected)


def test_spectrum_mismatch():
    w = WeightFunction("polynomial", 2.0, level=1, spectrum=(-1.0, -4.0))
    with pytest.raises(ConfigurationError):
        eval_weight(w, [1.0, 2.0, 3.0])


@pytest.mark.parametrize("kw", [dict(family="polynomial", param=1.5), dict(family="cosh", param=0.0),
                                dict(family="gaussexp", param=-1.0), dict(family="bogus", param=2.0)])
def test_invalid_families(kw):
    with pytest.raises(ConfigurationError):
        WeightFunction(**kw)


def test_sublevel_membership():
    w = polynomial_weight(2)
    assert sublevel_member(w, [2.0], 5.0)
    assert not sublevel_member(w, [2.0], 4.9)
    assert sublevel_member(WeightFunction("cosh", 2.0), [0.0], 1.0)
    with pytest.raises(ValueError):
        sublevel_member(w, [0.0], 0.0)


def test_weighted_sup_norm_examples():
    w = polynomial_weight(2)
    cloud = [([x], float(x)) for x in (0, 1, 2)]
    assert weighted_sup_norm(cloud, w) == pytest.approx(0.5)
    pts = [[-3.0], [0.5], [7.0]]
    assert weighted_sup_norm([(p, eval_weight(w, p)) for p in pts], w) == pytest.approx(1.0)
    assert weighted_sup_norm([(p, 0.0) for p in pts], w) == 0.0
    with pytest.raises(ValueError):
        weighted_sup_norm([], w)


def test_growth_decay_examples():
    w = polynomial_weight(2)
    cloud = [([x], float(x)) for x in range(11)]
    assert growth_decay_ratio(cloud, w, 50.0) == pytest.approx(8 / 65)
    assert growth_decay_ratio(cloud, w, 1000.0) == 0.0
    ident = [([x], 1.0 + x * x) for x in range(5)]
    assert growth_decay_ratio(ident, w, 3.0) == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(finite, finite, finite), min_size=1, max_size=12), finite)
def test_norm_axioms(rows, c):
    w = polynomial_weight(2)
    f = [([x], a) for x, a, _ in rows]
    g = [([x], b) for x, _, b in rows]
    fg = [([x], a + b) for x, a, b in rows]
    nf, ng = weighted_sup_norm(f, w), weighted_sup_norm(g, w)
    assert weighted_sup_norm(fg, w) <= nf + ng + 1e-12
    assert_allclose(weighted_sup_norm([([x], c * a) for x, a, _ in rows], w), abs(c) * nf, rtol=1e-12, atol=1e-300)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=2, max_size=12))
def test_enlarging_cloud_is_monotone(rows):
    w = WeightFunction("cosh", 0.5)
    cloud = [([x], v) for x, v in rows]
    assert weighted_sup_norm(cloud, w) >= weighted_sup_norm(cloud[:-1], w)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=4), st.floats(0, 10), st.floats(0, 10))
def test_weights_radially_nondecreasing_and_at_least_one(x, t1, t2):
    lo, hi = sorted((t1, t2))
    x = np.array(x)
    for w in (polynomial_weight(3), WeightFunction("cosh", 0.7), WeightFunction("gaussexp", 0.01)):
        a, b = eval_weight(w, lo * x), eval_weight(w, hi * x)
        assert a >= 1.0 and a <= b * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=12), st.floats(1, 100), st.floats(1, 100))
def test_decay_ratio_nonincreasing_in_R(rows, r1, r2):
    w = polynomial_weight(2)
    cloud = [([x], v) for x, v in rows]
    lo, hi = sorted((r1, r2))
    assert growth_decay_ratio(cloud, w, hi) <= growth_decay_ratio(cloud, w, lo)
