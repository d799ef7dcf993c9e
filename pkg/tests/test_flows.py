import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from oracles import loglog_slope
from splitweak.errors import ConfigurationError, NumericalOverflowError
from splitweak.flows import FlowConfig, diffusion_flow, drift_flow
from splitweak.models import SplitModel, apply_A_semigroup, make_builtin

NUMERIC = FlowConfig(use_exact=False)


def test_ou_drift_flow_exact_and_integrated():
    m = make_builtin("OU")
    assert drift_flow(m, FlowConfig(), 0.5, np.array([1.0]))[0] == pytest.approx(math.exp(-0.5), abs=1e-15)
    # four RK4 steps of size 1/8 on z' = -z
    r = 1 - 0.125 + 0.125**2 / 2 - 0.125**3 / 6 + 0.125**4 / 24
    assert drift_flow(m, NUMERIC, 0.5, np.array([1.0]))[0] == pytest.approx(r**4, rel=1e-14)
    assert abs(r**4 - math.exp(-0.5)) < 1e-6


def test_zero_step_is_identity():
    for name in ("OU", "GBM", "HEAT_SPDE"):
        m = make_builtin(name)
        x = np.linspace(0.1, 1.0, m.dim)
        assert np.array_equal(drift_flow(m, NUMERIC, 0.0, x), x)
        assert np.array_equal(diffusion_flow(m, NUMERIC, 0, 0.0, x), x)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        drift_flow(make_builtin("OU"), NUMERIC, -0.1, np.array([1.0]))


def test_heat_drift_flow_is_semigroup():
    m = make_builtin("HEAT_SPDE")
    x = np.linspace(-1, 1, 16)
    assert np.array_equal(drift_flow(m, NUMERIC, 0.01, x), apply_A_semigroup(m, 0.01, x))


def test_linear_diffusion_flow():
    m = SplitModel("lin", 1, np.zeros(1), None, (lambda x: 0.2 * x,), (lambda x: 0.2 * np.ones(np.shape(x) + (1,)),))
    assert diffusion_flow(m, FlowConfig(), 0, 0.3, np.array([1.0]))[0] == pytest.approx(math.exp(0.06), rel=1e-10)


def test_constant_field_translation():
    m = make_builtin("OU", sigma=0.7)
    x = np.array([[1.0], [2.0]])
    w = np.array([0.25, -1.5])
    assert np.array_equal(diffusion_flow(m, NUMERIC, 0, w, x), x + 0.7 * w[:, None])


def test_bad_index_and_config():
    with pytest.raises(ValueError):
        diffusion_flow(make_builtin("OU"), NUMERIC, 1, 0.1, np.array([0.0]))
    with pytest.raises(ConfigurationError):
        FlowConfig(substeps=0)
    with pytest.raises(ConfigurationError):
        FlowConfig(method="euler")


@pytest.mark.parametrize("name", ["GBM", "LINEAR_GROWTH_1D"])
@settings(max_examples=30, deadline=None)
@given(w=st.floats(-1, 1), x=st.floats(-3, 3))
def test_signed_time_group_law(name, w, x):
    m = make_builtin(name)
    z = np.array([x])
    for cfg in (FlowConfig(), FlowConfig(substeps=16, use_exact=False)):
        back = diffusion_flow(m, cfg, 0, w, diffusion_flow(m, cfg, 0, -w, z))
        assert_allclose(back, z, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 0.5), st.floats(0, 0.5), st.floats(-2, 2))
def test_drift_semigroup_law(t, s, x):
    m = make_builtin("LINEAR_GROWTH_1D")
    cfg = FlowConfig(substeps=8, use_exact=False)
    z = np.array([x])
    assert_allclose(drift_flow(m, cfg, t + s, z), drift_flow(m, cfg, t, drift_flow(m, cfg, s, z)), atol=1e-8)


def test_rk4_convergence_order():
    m = make_builtin("OU")
    exact = math.exp(-0.5)
    subs = [1, 2, 4, 8]
    errs = [abs(drift_flow(m, FlowConfig(k, use_exact=False), 0.5, np.array([1.0]))[0] - exact) for k in subs]
    assert 3.7 <= loglog_slope(1.0 / np.array(subs), errs) <= 4.3


def test_stiff_spectrum_stays_bounded():
    # |lambda| dt = 1e4 would blow up explicit RK4; the moving frame does not
    m = SplitModel("stiff", 2, np.array([-1e4, -1.0]), lambda x: 0.1 * np.ones_like(x), (), ())
    z = drift_flow(m, FlowConfig(substeps=1, use_exact=False), 1.0, np.array([1.0, 1.0]))
    assert np.all(np.isfinite(z)) and 0 < z[0] < 0.1


def test_overflow_is_reported():
    m = SplitModel("blowup", 1, np.zeros(1), lambda x: np.asarray(x) ** 3, (), ())
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NumericalOverflowError) as info:
        drift_flow(m, FlowConfig(substeps=1, use_exact=False), 1.0, np.array([[1.0], [1e120]]))
    assert info.value.substep == "drift" and info.value.path == 1
