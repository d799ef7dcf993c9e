"""Substep propagators: the deterministic drift flow and the diffusion flows.

The drift flow solves ``z' = A z + alpha_0(z)`` in a frame moving with the
linear semigroup, so the stiff linear part is applied exactly and only the
corrected drift is integrated (classical RK4 in the moving frame, i.e. the
Lawson scheme).  Diffusion substeps evaluate the flow of ``sigma_j`` at the
signed Brownian increment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalOverflowError
from .models import SplitModel, apply_A_semigroup, stratonovich_drift


@dataclass(frozen=True)
class FlowConfig:
    substeps: int = 4
    method: str = "rk4"
    # Honour closed-form flows supplied by the model.
    use_exact: bool = True

    def __post_init__(self):
        if int(self.substeps) < 1:
            raise ConfigurationError("flow substeps must be >= 1")
        if self.method != "rk4":
            raise ConfigurationError(f"unsupported flow integrator {self.method!r}")


def _check_finite(z: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(z)):
        bad = np.argwhere(~np.isfinite(z).all(axis=-1)) if z.ndim > 1 else None
        path = int(bad[0, 0]) if bad is not None and bad.size else None
        raise NumericalOverflowError(f"non-finite state in {what}", substep=what, path=path)
    return z


def drift_flow(m: SplitModel, cfg: FlowConfig, dt: float, x) -> np.ndarray:
    """Flow of ``A z + alpha_0(z)`` over time ``dt``."""
    if dt < 0:
        raise ValueError("drift flow needs dt >= 0")
    x = np.asarray(x, dtype=float)
    if dt == 0:
        return x.copy()
    if cfg.use_exact and m.exact_drift_flow is not None:
        return _check_finite(np.asarray(m.exact_drift_flow(dt, x), dtype=float), "drift")
    if m.drift_free:
        return _check_finite(apply_A_semigroup(m, dt, x), "drift")

    def S(t, v):
        return apply_A_semigroup(m, t, v)

    def f(v):
        return stratonovich_drift(m, v)

    h = dt / cfg.substeps
    z = x
    for _ in range(cfg.substeps):
        k1 = f(z)
        k2 = f(S(0.5 * h, z + 0.5 * h * k1))
        z_half = S(0.5 * h, z)
        k3 = f(z_half + 0.5 * h * k2)
        z_full = S(h, z)
        k4 = f(z_full + h * S(0.5 * h, k3))
        z = z_full + (h / 6.0) * (S(h, k1) + 2.0 * S(0.5 * h, k2 + k3) + k4)
    return _check_finite(z, "drift")


def diffusion_flow(m: SplitModel, cfg: FlowConfig, j: int, w, x) -> np.ndarray:
    """Flow of ``sigma_j`` (0-based index) run for signed time ``w``.

    ``w`` is a scalar for a single state or has shape ``x.shape[:-1]`` for a
    batch.  Negative times integrate with a negative step, which is the flow
    of the negated field.
    """
    if not 0 <= j < m.noise_dim:
        raise ValueError(f"diffusion index {j} outside 0..{m.noise_dim - 1}")
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        return x.copy()
    if cfg.use_exact and m.exact_diffusion_flows is not None:
        return _check_finite(np.asarray(m.exact_diffusion_flows[j](w, x), dtype=float), f"diffusion {j}")
    sigma = m.diffusions[j]
    wcol = w[..., None] if w.ndim else w
    jvps = m.diffusion_jvps or (None,) * m.noise_dim
    if m.diffusion_jacobians[j] is None and jvps[j] is None:
        # constant field: the flow is a translation
        return _check_finite(x + wcol * sigma(x), f"diffusion {j}")
    h = wcol / cfg.substeps
    z = x
    for _ in range(cfg.substeps):
        k1 = sigma(z)
        k2 = sigma(z + 0.5 * h * k1)
        k3 = sigma(z + 0.5 * h * k2)
        k4 = sigma(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return _check_finite(z, f"diffusion {j}")
