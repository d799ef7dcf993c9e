"""Fast built-in invariant checks, run by ``splitweak selftest``."""

from __future__ import annotations

import traceback

import numpy as np

from .flows import FlowConfig, drift_flow
from .hjm import CurveGrid, ForwardCurve, flat_curve, h_alpha_norm, s_operator, shift_semigroup
from .models import Payoff, make_builtin, stratonovich_drift
from .montecarlo import ExperimentConfig, convergence_study, estimate_expectation, pathwise_exactness
from .splitting import euler_scheme, nv_scheme
from .streams import Stream
from .weights import polynomial_weight


def _ou_slope(scheme):
    m = make_builtin("OU")
    exp = ExperimentConfig(
        model=m, schemes=[scheme], payoff=Payoff("moment2"), weight=polynomial_weight(2), T=1.0,
        levels=[8, 16, 32, 64, 128], npaths=1000, grid=[np.array([v]) for v in range(-4, 5)], seed=0, mode="affine",
    )
    return convergence_study(exp).fits[scheme.name].slope


def check_euler_order():
    return 0.8 <= _ou_slope(euler_scheme(1)) <= 1.2


def check_nv_order():
    return 1.7 <= _ou_slope(nv_scheme(1)) <= 2.3


def check_gbm_exact():
    m = make_builtin("GBM")
    errs = pathwise_exactness(m, FlowConfig(), [euler_scheme(1), nv_scheme(1)], 1.0, [8, 16], np.array([1.0]), 200, 3)
    return max(errs.values()) < 1e-12


def check_stratonovich():
    m = make_builtin("GBM")
    return abs(stratonovich_drift(m, np.array([1.0]))[0] - 0.08) < 1e-15


def check_zero_step():
    m = make_builtin("HEAT_SPDE")
    x = np.linspace(-1, 1, 16)
    return np.array_equal(drift_flow(m, FlowConfig(), 0.0, x), x)


def check_worker_independence():
    m = make_builtin("OU")
    args = (m, FlowConfig(), nv_scheme(1), Payoff("moment2"), 1.0, 8, np.array([1.0]), 9000, Stream(5))
    return estimate_expectation(*args, workers=1) == estimate_expectation(*args, workers=3)


def check_curves():
    g = CurveGrid(4.0, 64, 1.0)
    flat = flat_curve(g, 3.0)
    ok = abs(s_operator(flat)(2.0) - 18.0) < 1e-12
    ok &= np.array_equal(shift_semigroup(flat, 0.37).values, flat.values)
    lin = ForwardCurve.from_function(g, lambda x: x)
    ok &= abs(shift_semigroup(lin, 0.1)(1.0) - 1.1) < 1e-12
    ok &= abs(h_alpha_norm(flat) - 3.0) < 1e-12
    return bool(ok)


CHECKS = [
    ("euler order on OU", check_euler_order),
    ("nv order on OU", check_nv_order),
    ("GBM pathwise exactness", check_gbm_exact),
    ("Stratonovich correction", check_stratonovich),
    ("zero-length drift flow", check_zero_step),
    ("worker-count independence", check_worker_independence),
    ("forward-curve operators", check_curves),
]


def run_selftest(verbose: bool = True) -> bool:
    ok = True
    for name, fn in CHECKS:
        try:
            passed = bool(fn())
        except Exception:  # a crash is a failure, with the trace shown
            traceback.print_exc()
            passed = False
        ok &= passed
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'} {name}")
    return ok
