"""Splitting schemes as convex combinations of compositions of substep flows.

A scheme is a list of branches ``(weight, [(op, fraction), ...])`` where
``op`` is ``"drift"`` or a 0-based diffusion index.  One step of size ``dt``
picks a branch with probability ``weight`` and applies the substeps left to
right: in ``P^a P^b f(x) = E f(z_b(z_a(x)))`` flow ``a`` acts first.

One Gaussian increment ``W_j ~ N(0, dt)`` is drawn per diffusion per step; a
diffusion substep with fraction ``delta`` runs its flow for ``sqrt(delta) W_j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CapabilityError, ConfigurationError, NumericalOverflowError
from .flows import FlowConfig, diffusion_flow, drift_flow
from .models import SplitModel

Op = Union[str, int]
Branch = Tuple[float, Tuple[Tuple[Op, float], ...]]


@dataclass(frozen=True)
class SchemeSpec:
    name: str
    branches: Tuple[Branch, ...]

    def __post_init__(self):
        if not self.branches:
            raise ConfigurationError("scheme needs at least one branch")
        weights = []
        clean = []
        for weight, seq in self.branches:
            weight = float(weight)
            if weight < 0:
                raise ConfigurationError("branch weights must be >= 0")
            seen = set()
            steps = []
            for op, frac in seq:
                frac = float(frac)
                if frac < 0:
                    raise ConfigurationError("substep fractions must be >= 0")
                if op != "drift":
                    if isinstance(op, bool) or not isinstance(op, (int, np.integer)) or op < 0:
                        raise ConfigurationError(f"bad substep operator {op!r}")
                    op = int(op)
                    if op in seen:
                        # one increment per diffusion and step, so repeats would be correlated
                        raise ConfigurationError(f"diffusion {op} appears twice in one branch")
                    seen.add(op)
                steps.append((op, frac))
            weights.append(weight)
            clean.append((weight, tuple(steps)))
        if abs(sum(weights) - 1.0) > 1e-12:
            raise ConfigurationError("branch weights must sum to 1")
        object.__setattr__(self, "branches", tuple(clean))

    @property
    def weights(self) -> np.ndarray:
        return np.array([b[0] for b in self.branches])

    def max_diffusion(self) -> int:
        return max((op for _, seq in self.branches for op, _ in seq if op != "drift"), default=-1)

    def check_model(self, m: SplitModel) -> None:
        if self.max_diffusion() >= m.noise_dim:
            raise ConfigurationError(
                f"scheme {self.name} references diffusion {self.max_diffusion()} but model has {m.noise_dim}"
            )

    def symmetric_branches(self) -> bool:
        """True when every branch applies the same substep sequence."""
        return all(seq == self.branches[0][1] for _, seq in self.branches)


def euler_scheme(d: int) -> SchemeSpec:
    return SchemeSpec("euler", ((1.0, (("drift", 1.0),) + tuple((j, 1.0) for j in range(d))),))


def nv_scheme(d: int) -> SchemeSpec:
    fwd = tuple((j, 1.0) for j in range(d))
    return SchemeSpec(
        "nv",
        (
            (0.5, (("drift", 0.5),) + fwd + (("drift", 0.5),)),
            (0.5, (("drift", 0.5),) + fwd[::-1] + (("drift", 0.5),)),
        ),
    )


def scheme_by_name(name: str, d: int, branches=None) -> SchemeSpec:
    if name == "euler":
        return euler_scheme(d)
    if name == "nv":
        return nv_scheme(d)
    if name == "custom":
        if not branches:
            raise ConfigurationError("custom scheme needs branches")
        return SchemeSpec("custom", tuple((w, tuple((op, f) for op, f in seq)) for w, seq in branches))
    raise ConfigurationError(f"unknown scheme {name!r}")


def sample_branches(s: SchemeSpec, u) -> np.ndarray:
    """Map uniforms in [0, 1) to branch indices with probabilities ``weights``."""
    cdf = np.cumsum(s.weights)
    idx = np.searchsorted(cdf, np.asarray(u), side="right")
    return np.minimum(idx, len(s.branches) - 1)


def _apply_branch(m, cfg, seq, dt, x, dW):
    z = x
    # non-finite states are reported by the flows as NumericalOverflowError
    with np.errstate(over="ignore", invalid="ignore"):
        for op, frac in seq:
            if frac == 0:
                continue
            if op == "drift":
                z = drift_flow(m, cfg, frac * dt, z)
            else:
                w = dW[..., op]
                z = diffusion_flow(m, cfg, op, w if frac == 1.0 else np.sqrt(frac) * w, z)
    return z


def step_with_noise(m: SplitModel, cfg: FlowConfig, s: SchemeSpec, dt: float, x, dW, branch) -> np.ndarray:
    """One scheme step with given increments ``dW[..., j]`` and branch indices."""
    if not dt > 0:
        raise ValueError("step size must be positive")
    s.check_model(m)
    x = np.asarray(x, dtype=float)
    dW = np.asarray(dW, dtype=float)
    branch = np.asarray(branch)
    if len(s.branches) == 1 or s.symmetric_branches():
        return _apply_branch(m, cfg, s.branches[0][1], dt, x, dW)
    if x.ndim == 1:
        return _apply_branch(m, cfg, s.branches[int(branch)][1], dt, x, dW)
    out = np.empty_like(x)
    for b, (_, seq) in enumerate(s.branches):
        mask = branch == b
        if np.any(mask):
            out[mask] = _apply_branch(m, cfg, seq, dt, x[mask], dW[mask])
    return out


def draw_noise(rng: np.random.Generator, shape, d: int, dt: float):
    """Gaussian increments of variance ``dt`` and branch uniforms for one step."""
    shape = tuple(shape)
    dW = rng.standard_normal(shape + (d,)) * np.sqrt(dt)
    u = rng.random(shape)
    return dW, u


def step(m: SplitModel, cfg: FlowConfig, s: SchemeSpec, dt: float, x, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    dW, u = draw_noise(rng, x.shape[:-1], m.noise_dim, dt)
    return step_with_noise(m, cfg, s, dt, x, dW, sample_branches(s, u))


def simulate_with_noise(m, cfg, s, T, x0, dW, u) -> np.ndarray:
    """Run ``nsteps = dW.shape[-2]`` steps from ``x0`` with explicit noise.

    ``dW`` has shape ``batch + (nsteps, d)`` and ``u`` shape ``batch + (nsteps,)``.
    """
    dW = np.asarray(dW, dtype=float)
    nsteps = dW.shape[-2]
    if nsteps < 1:
        raise ValueError("need at least one step")
    dt = T / nsteps
    branches = sample_branches(s, u)
    x = np.asarray(x0, dtype=float)
    for k in range(nsteps):
        try:
            x = step_with_noise(m, cfg, s, dt, x, dW[..., k, :], branches[..., k])
        except NumericalOverflowError as exc:
            raise NumericalOverflowError(f"{exc} at step {k}", step=k, substep=exc.substep, path=exc.path) from exc
    return x


def simulate_path(m, cfg, s, T: float, nsteps: int, x0, rng: np.random.Generator) -> np.ndarray:
    """Terminal state after ``nsteps`` steps of size ``T / nsteps``."""
    if nsteps < 1:
        raise ValueError("nsteps must be >= 1")
    if not T > 0:
        raise ValueError("T must be positive")
    x = np.asarray(x0, dtype=float)
    dt = T / nsteps
    for k in range(nsteps):
        try:
            x = step(m, cfg, s, dt, x, rng)
        except NumericalOverflowError as exc:
            raise NumericalOverflowError(f"{exc} at step {k}", step=k, substep=exc.substep, path=exc.path) from exc
    return x


# ------------------------------------------------------------ affine models


def _affine_probe(flow, dim):
    probes = np.vstack([np.zeros(dim), np.eye(dim)])
    out = flow(probes)
    c = out[0]
    return (out[1:] - c).T, c


def affine_step_map(m: SplitModel, cfg: FlowConfig, s: SchemeSpec, dt: float, branch: int = 0):
    """Affine form of one step along ``branch``: ``x -> L x + c + G W``.

    ``W`` stacks the step's increments (each N(0, dt)); ``G`` has one column
    per diffusion.
    """
    if not m.affine:
        raise CapabilityError(f"model {m.name} is not affine")
    s.check_model(m)
    dim, d = m.dim, m.noise_dim
    L, c, G = np.eye(dim), np.zeros(dim), np.zeros((dim, d))
    for op, frac in s.branches[branch][1]:
        if frac == 0:
            continue
        if op == "drift":
            Ls, cs = _affine_probe(lambda X: drift_flow(m, cfg, frac * dt, X), dim)
            L, c, G = Ls @ L, Ls @ c + cs, Ls @ G
        else:
            G = G.copy()
            G[:, op] += np.sqrt(frac) * np.asarray(m.diffusions[op](np.zeros(dim)), dtype=float)
    return L, c, G


def _branch_maps(m, cfg, s, dt):
    return [affine_step_map(m, cfg, s, dt, b) for b in range(len(s.branches))]


def affine_law_is_gaussian(m, cfg, s, dt) -> bool:
    """True when all branches give the same affine map, so the law stays Gaussian."""
    maps = _branch_maps(m, cfg, s, dt)
    L0, c0, G0 = maps[0]
    return all(
        np.allclose(L, L0, rtol=1e-13, atol=1e-15)
        and np.allclose(c, c0, rtol=1e-13, atol=1e-15)
        and np.allclose(G @ G.T, G0 @ G0.T, rtol=1e-13, atol=1e-15)
        for L, c, G in maps[1:]
    )


def propagate_moments_affine(m: SplitModel, cfg: FlowConfig, s: SchemeSpec, T: float, nsteps: int, x0):
    """Exact mean and covariance of the scheme's terminal state."""
    if nsteps < 1:
        raise ValueError("nsteps must be >= 1")
    dt = T / nsteps
    maps = _branch_maps(m, cfg, s, dt)
    lam = s.weights
    mean = np.asarray(x0, dtype=float).reshape(m.dim).copy()
    cov = np.zeros((m.dim, m.dim))
    noise = [dt * G @ G.T for _, _, G in maps]
    for _ in range(nsteps):
        mus = [L @ mean + c for L, c, _ in maps]
        new_mean = sum(w * mu for w, mu in zip(lam, mus))
        new_cov = np.zeros_like(cov)
        for w, (L, _, _), mu, q in zip(lam, maps, mus, noise):
            if w == 0:
                continue
            dm = mu - new_mean
            new_cov += w * (L @ cov @ L.T + q + np.outer(dm, dm))
        mean, cov = new_mean, 0.5 * (new_cov + new_cov.T)
    return mean, cov
