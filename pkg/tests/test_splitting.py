import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from oracles import heat_scheme_moment2, ou_scheme_var
from splitweak.errors import CapabilityError, ConfigurationError, NumericalOverflowError
from splitweak.flows import FlowConfig, drift_flow
from splitweak.models import SplitModel, make_builtin
from splitweak.splitting import (
    SchemeSpec,
    affine_step_map,
    euler_scheme,
    nv_scheme,
    propagate_moments_affine,
    sample_branches,
    scheme_by_name,
    simulate_path,
    simulate_with_noise,
    step,
    step_with_noise,
)

CFG = FlowConfig()


def _noncommuting():
    """dx1 = dW1, dx2 = x1 dW2 (Stratonovich and Ito coincide)."""
    e1 = np.array([1.0, 0.0])

    def jac2(x):
        J = np.zeros(np.shape(x) + (2,))
        J[..., 1, 0] = 1.0
        return J

    return SplitModel(
        "noncommuting", 2, np.zeros(2), None,
        (lambda x: np.zeros(np.shape(x)) + e1, lambda x: np.stack([np.zeros(np.shape(x)[:-1]), x[..., 0]], -1)),
        (None, jac2),
    )


def test_builtin_scheme_structure():
    e = euler_scheme(3)
    assert e.branches == ((1.0, (("drift", 1.0), (0, 1.0), (1, 1.0), (2, 1.0))),)
    nv = nv_scheme(2)
    assert nv.weights.tolist() == [0.5, 0.5]
    assert nv.branches[0][1] == (("drift", 0.5), (0, 1.0), (1, 1.0), ("drift", 0.5))
    assert nv.branches[1][1] == (("drift", 0.5), (1, 1.0), (0, 1.0), ("drift", 0.5))


@pytest.mark.parametrize("branches", [
    ((0.6, (("drift", 1.0),)), (0.6, (("drift", 1.0),))),
    ((-0.5, (("drift", 1.0),)), (1.5, (("drift", 1.0),))),
    ((1.0, (("drift", -1.0),)),),
    ((1.0, ((0, 1.0), (0, 1.0))),),
    ((1.0, (("kick", 1.0),)),),
    (),
])
def test_invalid_schemes(branches):
    with pytest.raises(ConfigurationError):
        SchemeSpec("bad", branches)


def test_scheme_diffusion_out_of_range():
    with pytest.raises(ConfigurationError):
        step_with_noise(make_builtin("OU"), CFG, euler_scheme(2), 0.1, np.array([0.0]), np.zeros(2), 0)
    with pytest.raises(ConfigurationError):
        scheme_by_name("strang", 1)


def test_euler_step_on_gbm_is_closed_form():
    m = make_builtin("GBM", mu=0.1, sigma=0.2)
    dW = np.array([0.37])
    out = step_with_noise(m, CFG, euler_scheme(1), 0.25, np.array([1.4]), dW, 0)
    assert out[0] == pytest.approx(1.4 * math.exp((0.1 - 0.02) * 0.25 + 0.2 * 0.37), rel=1e-15)


def test_nv_single_noise_ignores_coin():
    m = make_builtin("LINEAR_GROWTH_1D")
    x, dW = np.array([0.8]), np.array([-0.3])
    a = step_with_noise(m, CFG, nv_scheme(1), 0.1, x, dW, 0)
    b = step_with_noise(m, CFG, nv_scheme(1), 0.1, x, dW, 1)
    assert np.array_equal(a, b)


def test_tiny_step_is_continuous():
    rng = np.random.default_rng(0)
    dt = 1e-12
    for name in ("OU", "GBM", "LINEAR_GROWTH_1D", "HEAT_SPDE"):
        m = make_builtin(name)
        x = np.linspace(-1, 2, m.dim)
        # graph norm: the stiffest heat mode moves by dt * |lambda_16| * |x_16|
        scale = 1 + np.linalg.norm(x) + np.linalg.norm(m.spectrum * x)
        for s in (euler_scheme(m.noise_dim), nv_scheme(m.noise_dim)):
            # without noise the step moves by O(dt)
            still = step_with_noise(m, CFG, s, dt, x, np.zeros(m.noise_dim), 0)
            assert np.linalg.norm(still - x) <= 1e-9 * scale
            # Brownian increments move it by O(sqrt(dt))
            assert np.linalg.norm(step(m, CFG, s, dt, x, rng) - x) <= 10 * math.sqrt(dt) * scale


def test_deterministic_path_matches_drift_flow():
    m = make_builtin("OU", theta=1.3, mu=0.4, sigma=0.0)
    target = drift_flow(m, CFG, 1.0, np.array([2.0]))
    assert target[0] == pytest.approx(0.4 + 1.6 * math.exp(-1.3), rel=1e-14)
    for n in (1, 5, 32):
        for s in (euler_scheme(1), nv_scheme(1)):
            out = simulate_path(m, CFG, s, 1.0, n, np.array([2.0]), np.random.default_rng(n))
            assert_allclose(out, target, atol=1e-8)
    # integrated flows: the RK4 error shrinks with the step
    m = make_builtin("OU", theta=1.3, mu=0.4, sigma=0.0, exact_flows=False)
    out = simulate_path(m, CFG, nv_scheme(1), 1.0, 32, np.array([2.0]), np.random.default_rng(0))
    assert_allclose(out, target, atol=1e-8)


def test_gbm_path_with_fixed_increments():
    m = make_builtin("GBM", mu=0.1, sigma=0.2)
    rng = np.random.default_rng(11)
    dW = rng.normal(0, 0.25, size=(50, 16, 1))
    u = rng.random((50, 16))
    exact = 1.3 * np.exp(0.08 * 1.0 + 0.2 * dW.sum(axis=1))
    for s in (euler_scheme(1), nv_scheme(1)):
        out = simulate_with_noise(m, CFG, s, 1.0, np.full((50, 1), 1.3), dW, u)
        assert np.max(np.abs(out - exact)) < 1e-12


def test_one_step_path_is_a_step():
    m = make_builtin("LINEAR_GROWTH_1D")
    s = nv_scheme(1)
    a = simulate_path(m, CFG, s, 0.3, 1, np.array([0.5]), np.random.default_rng(4))
    b = step(m, CFG, s, 0.3, np.array([0.5]), np.random.default_rng(4))
    assert np.array_equal(a, b)


def test_overflow_reports_step():
    m = SplitModel("blowup", 1, np.zeros(1), lambda x: np.asarray(x) ** 3, (lambda x: np.zeros_like(x),), (None,))
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NumericalOverflowError) as info:
        simulate_path(m, FlowConfig(substeps=1), euler_scheme(1), 10.0, 10, np.array([50.0]), np.random.default_rng())
    assert info.value.step is not None and info.value.substep == "drift"


def test_sample_branches():
    s = nv_scheme(2)
    assert sample_branches(s, np.array([0.0, 0.4999, 0.5, 0.99])).tolist() == [0, 0, 1, 1]


# ---------------------------------------------------------------- affine


def test_affine_maps_for_ou():
    theta, sigma, dt = 1.0, 0.5, 0.1
    m = make_builtin("OU", theta=theta, sigma=sigma)
    L, c, G = affine_step_map(m, CFG, euler_scheme(1), dt)
    assert_allclose(L, [[math.exp(-theta * dt)]], rtol=1e-14)
    assert_allclose(c, [0.0], atol=1e-16)
    assert_allclose(G, [[sigma]], rtol=1e-14)
    L, c, G = affine_step_map(m, CFG, nv_scheme(1), dt)
    assert_allclose(L, [[math.exp(-theta * dt)]], rtol=1e-14)
    assert_allclose(G, [[sigma * math.exp(-theta * dt / 2)]], rtol=1e-14)


def test_affine_identity_map():
    m = make_builtin("OU", theta=0.0, sigma=0.0)
    L, c, G = affine_step_map(m, CFG, euler_scheme(1), 0.3)
    assert_allclose(L, [[1.0]]) and np.all(c == 0) and np.all(G == 0)


def test_affine_rejects_nonaffine():
    with pytest.raises(CapabilityError):
        affine_step_map(make_builtin("GBM"), CFG, euler_scheme(1), 0.1)


def test_propagate_moments_simple_cases():
    m = make_builtin("OU", theta=0.8, sigma=0.0)
    mean, cov = propagate_moments_affine(m, CFG, nv_scheme(1), 2.0, 7, [1.5])
    assert mean[0] == pytest.approx(1.5 * math.exp(-1.6), rel=1e-13) and cov[0, 0] == 0.0
    m = make_builtin("OU", theta=1.0, sigma=0.5)
    mean, cov = propagate_moments_affine(m, CFG, euler_scheme(1), 0.2, 1, [0.0])
    assert cov[0, 0] == pytest.approx(0.25 * 0.2, rel=1e-14)


@pytest.mark.parametrize("scheme", ["euler", "nv"])
@pytest.mark.parametrize("n", [1, 8, 37])
def test_propagate_moments_against_recursion(scheme, n):
    m = make_builtin("OU", theta=1.0, sigma=0.5)
    _, cov = propagate_moments_affine(m, CFG, scheme_by_name(scheme, 1), 1.0, n, [0.3])
    assert cov[0, 0] == pytest.approx(ou_scheme_var(1.0, 0.5, 1.0, n, scheme), rel=1e-12)
    heat = make_builtin("HEAT_SPDE", K=6, d=2, amplitudes=[1.0, 0.5])
    x0 = np.linspace(1, 0, 6)
    mean, cov = propagate_moments_affine(heat, CFG, scheme_by_name(scheme, 2), 0.5, n, x0)
    lam = -(2 * math.pi) ** 2
    assert mean[1] ** 2 + cov[1, 1] == pytest.approx(heat_scheme_moment2(lam, 0.5, x0[1], 0.5, n, scheme), rel=1e-12)
    assert_allclose(cov[2:, 2:], 0.0, atol=1e-300)


def test_branch_average_on_noncommuting_fields():
    m = _noncommuting()
    x = np.array([0.5, 0.0])
    dW = np.array([0.3, -0.7])
    nv = nv_scheme(2)
    assert not np.allclose(step_with_noise(m, CFG, nv, 0.25, x, dW, 0), step_with_noise(m, CFG, nv, 0.25, x, dW, 1))
    # E x2(T)^2 = x1(0)^2 T + T^2/2; NV is unbiased, Euler (diffusion 0 first) is off by +T dt / 2
    T, n, N = 1.0, 4, 40000
    rng = np.random.default_rng(2024)
    X0 = np.tile(x, (N, 1))
    exact = 0.25 * T + T * T / 2
    for s, bias in ((nv, 0.0), (euler_scheme(2), T * T / n / 2)):
        X = X0
        for _ in range(n):
            X = step(m, CFG, s, T / n, X, rng)
        vals = X[:, 1] ** 2
        se = vals.std(ddof=1) / math.sqrt(N)
        assert abs(vals.mean() - exact - bias) < 3 * se
