"""Forward-rate curves in the Musiela parametrisation.

A curve is sampled on the uniform maturity grid ``x_i = i * h``, ``i = 0..M``.
The array functions (``*_values``) act on the last axis so they accept
batches of curves; :class:`ForwardCurve` wraps a single curve.

The curve dynamics are

    dr = (d/dx r + alpha_HJM(r)) dt + sum_j sigma_j(r) dW_j,
    alpha_HJM(r) = sum_j S sigma_j(r),  S f(x) = f(x) * int_0^x f(y) dy,

with the shift semigroup ``(S_t h)(x) = h(x + t)`` generated by ``d/dx``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .errors import ConfigurationError
from .models import Payoff, SplitModel
from .weights import WeightFunction


@dataclass(frozen=True)
class CurveGrid:
    x_max: float = 20.0
    M: int = 256
    alpha: float = 1.0

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 8:
            raise ConfigurationError("maturity grid needs an integer M >= 8")
        if not self.x_max > 0:
            raise ConfigurationError("x_max must be positive")
        if not self.alpha > 0:
            raise ConfigurationError("weight exponent alpha must be positive")

    @property
    def h(self) -> float:
        return self.x_max / self.M

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.M + 1)


@dataclass(frozen=True, eq=False)
class ForwardCurve:
    grid: CurveGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.M + 1,):
            raise ConfigurationError(f"curve needs {self.grid.M + 1} node values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("curve values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: CurveGrid, fn: Callable[[np.ndarray], np.ndarray]) -> "ForwardCurve":
        return cls(grid, np.broadcast_to(np.asarray(fn(grid.x), dtype=float), (grid.M + 1,)).copy())

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def __call__(self, x) -> np.ndarray:
        return np.interp(x, self.grid.x, self.values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "value"])
            for xi, v in zip(self.grid.x, self.values):
                w.writerow([repr(float(xi)), repr(float(v))])

    @classmethod
    def from_csv(cls, path, alpha: float = 1.0) -> "ForwardCurve":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        x = np.array([float(r["x"]) for r in rows])
        v = np.array([float(r["value"]) for r in rows])
        if x.size < 9 or x[0] != 0.0:
            raise ConfigurationError("curve CSV needs at least 9 rows starting at x = 0")
        step = np.diff(x)
        if not np.allclose(step, step[0], rtol=1e-9, atol=0):
            raise ConfigurationError("curve CSV grid is not uniform")
        return cls(CurveGrid(float(x[-1]), x.size - 1, alpha), v)


def _same_grid(a: ForwardCurve, b: ForwardCurve) -> None:
    if a.grid != b.grid:
        raise ValueError("curves live on different maturity grids")


# ------------------------------------------------------------ array kernels


def s_operator_values(f: np.ndarray, h: float) -> np.ndarray:
    """``f(x) * int_0^x f`` with the cumulative trapezoid rule."""
    return f * cumulative_trapezoid(f, dx=h, axis=-1, initial=0.0)


def shift_values(v: np.ndarray, h: float, t: float) -> np.ndarray:
    """Resample at ``x + t`` (linear interpolation, flat beyond the last node)."""
    if t < 0:
        raise ValueError("the shift semigroup needs t >= 0")
    v = np.asarray(v, dtype=float)
    M = v.shape[-1] - 1
    cells = t / h
    k = round(cells)
    if abs(cells - k) <= 1e-9 * max(1.0, cells):
        # whole-cell shift: pure index arithmetic, no interpolation error
        idx = np.minimum(np.arange(M + 1) + k, M)
        return v[..., idx]
    pos = np.arange(M + 1) + cells
    i0 = np.minimum(np.floor(pos).astype(int), M)
    i1 = np.minimum(i0 + 1, M)
    w = np.where(i0 >= M, 0.0, pos - np.floor(pos))
    return (1.0 - w) * v[..., i0] + w * v[..., i1]


def h_alpha_norm_values(v: np.ndarray, h: float, alpha: float, variant: str = "derivative") -> np.ndarray:
    """``sqrt(|v(0)|^2 + int |v'|^2 e^{alpha x} dx)`` on the grid.

    ``variant="value"`` integrates ``|v|^2`` instead of ``|v'|^2``.
    """
    v = np.asarray(v, dtype=float)
    x = np.arange(v.shape[-1]) * h
    if variant == "derivative":
        g = np.gradient(v, h, axis=-1, edge_order=2)
    elif variant == "value":
        g = v
    else:
        raise ValueError(f"unknown norm variant {variant!r}")
    return np.sqrt(v[..., 0] ** 2 + trapezoid(g * g * np.exp(alpha * x), dx=h, axis=-1))


# ---------------------------------------------------------------- curve API


def s_operator(f: ForwardCurve) -> ForwardCurve:
    return ForwardCurve(f.grid, s_operator_values(f.values, f.grid.h))


def hjm_drift(curve: ForwardCurve, vols: Sequence[Callable[[ForwardCurve], ForwardCurve]]) -> ForwardCurve:
    """No-arbitrage drift ``sum_j S sigma_j(curve)``."""
    total = np.zeros_like(curve.values)
    for vol in vols:
        sig = vol(curve)
        _same_grid(curve, sig)
        total += s_operator_values(sig.values, curve.grid.h)
    return ForwardCurve(curve.grid, total)


def shift_semigroup(curve: ForwardCurve, t: float) -> ForwardCurve:
    return ForwardCurve(curve.grid, shift_values(curve.values, curve.grid.h, t))


def h_alpha_norm(curve: ForwardCurve, variant: str = "derivative") -> float:
    return float(h_alpha_norm_values(curve.values, curve.grid.h, curve.grid.alpha, variant))


def h_alpha_norms(curve: ForwardCurve) -> dict:
    """Both the derivative-based norm and the value-based variant."""
    return {v: h_alpha_norm(curve, v) for v in ("derivative", "value")}


def bond_payoff(grid: CurveGrid, tau: float = 1.0) -> Payoff:
    """Zero-coupon bond price ``exp(-int_0^tau h)`` (trapezoid rule)."""
    k = round(tau / grid.h)
    if k < 1 or abs(k * grid.h - tau) > 1e-9 or k > grid.M:
        raise ConfigurationError(f"bond maturity {tau} must be a positive grid node <= x_max")
    w = np.zeros(grid.M + 1)
    w[: k + 1] = grid.h
    w[0] = w[k] = 0.5 * grid.h
    return Payoff("exp_linear", weights=-w, name=f"bond(tau={tau})")


# --------------------------------------------------------------- volatilities


@dataclass(frozen=True)
class VolSpec:
    """``sigma(h)(x) = c * g(h(node_x)) * exp(-beta x)``.

    kind ``exp`` has ``g = 1``; kind ``scalar_gain`` uses the bounded smooth
    gain ``g(u) = 1 + tanh(u) / 2``.
    """

    kind: str = "exp"
    c: float = 0.5
    beta: float = 1.0
    node: float = 0.0

    def __post_init__(self):
        if self.kind not in ("exp", "scalar_gain"):
            raise ConfigurationError(f"unknown vol kind {self.kind!r}")
        if not np.isfinite(self.c) or not self.beta >= 0:
            raise ConfigurationError("vol needs finite c and beta >= 0")

    @property
    def state_independent(self) -> bool:
        return self.kind == "exp" or self.c == 0


def _vol_fields(grid: CurveGrid, spec: VolSpec):
    shape = spec.c * np.exp(-spec.beta * grid.x)
    if spec.kind == "exp":
        return (lambda r: np.zeros(np.shape(r)) + shape), None
    i = int(round(spec.node / grid.h))
    if not 0 <= i <= grid.M or abs(i * grid.h - spec.node) > 1e-9:
        raise ConfigurationError(f"gain node {spec.node} is not a grid node")

    def sigma(r):
        u = np.asarray(r)[..., i]
        return (1.0 + 0.5 * np.tanh(u))[..., None] * shape

    def jvp(r, v):
        u = np.asarray(r)[..., i]
        dg = 0.5 / np.cosh(u) ** 2
        return (dg * np.asarray(v)[..., i])[..., None] * shape

    return sigma, jvp


def make_hjm_model(grid: CurveGrid, vols: Sequence[VolSpec], s: float = 2.0) -> SplitModel:
    """SplitModel on node values with the shift as linear semigroup.

    State-independent vols give an additive-noise affine model with a
    closed-form drift flow ``z(t) = S_t z + D(x + t) - D(x)``, ``D`` the
    running integral of the (constant) HJM drift.
    """
    if not vols:
        raise ConfigurationError("HJM model needs at least one vol")
    vols = [v if isinstance(v, VolSpec) else VolSpec(**v) for v in vols]
    h = grid.h
    fields = [_vol_fields(grid, v) for v in vols]
    sigmas = tuple(f for f, _ in fields)
    jvps = tuple(j for _, j in fields)
    independent = all(j is None for j in jvps)

    def drift(r):
        r = np.asarray(r, dtype=float)
        return sum(s_operator_values(sig(r), h) for sig in sigmas)

    def semigroup(t, r):
        return shift_values(r, h, t)

    exact_flow = None
    if independent:
        a = drift(np.zeros(grid.M + 1))
        D = cumulative_trapezoid(a, dx=h, initial=0.0)

        def D_at(t):
            # beyond x_max the drift is continued flat, so D grows linearly
            pos = grid.x + t
            inside = np.interp(pos, grid.x, D)
            return np.where(pos > grid.x_max, D[-1] + a[-1] * (pos - grid.x_max), inside)

        def exact_flow(t, r):
            return shift_values(r, h, t) + (D_at(t) - D)

    norm = lambda r: h_alpha_norm_values(r, h, grid.alpha)  # noqa: E731
    weight = WeightFunction("polynomial", float(s), norm=norm)
    return SplitModel(
        name="HJM",
        dim=grid.M + 1,
        spectrum=np.zeros(grid.M + 1),
        drift=drift,
        diffusions=sigmas,
        diffusion_jacobians=(None,) * len(sigmas),
        diffusion_jvps=None if independent else jvps,
        exact_drift_flow=exact_flow,
        affine=independent,
        semigroup=semigroup,
        default_weight=weight,
        params=dict(x_max=grid.x_max, M=grid.M, alpha=grid.alpha, s=float(s),
                    vols=[dict(kind=v.kind, c=v.c, beta=v.beta, node=v.node) for v in vols]),
    )


def hjm_weight(grid: CurveGrid, s: float = 2.0) -> WeightFunction:
    return WeightFunction("polynomial", float(s), norm=lambda r: h_alpha_norm_values(r, grid.h, grid.alpha))


def flat_curve(grid: CurveGrid, level: float) -> ForwardCurve:
    return ForwardCurve(grid, np.full(grid.M + 1, float(level)))


def curve_snapshots(model: SplitModel, cfg, scheme, grid: CurveGrid, x0: np.ndarray, T: float, nsteps: int,
                    rng: np.random.Generator, every: int = 1) -> List[np.ndarray]:
    """States along one simulated path, every ``every`` steps (initial state first)."""
    from .splitting import step

    out = [np.asarray(x0, dtype=float).copy()]
    x = out[0]
    for k in range(nsteps):
        x = step(model, cfg, scheme, T / nsteps, x, rng)
        if (k + 1) % every == 0:
            out.append(x.copy())
    return out


__all__ = [
    "CurveGrid", "ForwardCurve", "VolSpec", "s_operator", "hjm_drift", "shift_semigroup", "h_alpha_norm",
    "h_alpha_norms", "bond_payoff", "make_hjm_model", "hjm_weight", "flat_curve", "curve_snapshots",
    "s_operator_values", "shift_values", "h_alpha_norm_values",
]

