"""Admissible weight functions and weighted supremum norms on point clouds.

A weight is ``psi(x) = rho(|x|)`` with ``rho`` one of

* ``polynomial``: ``(1 + r**2) ** (s / 2)``, ``s >= 2``
* ``cosh``: ``cosh(beta * r)``, ``beta > 0``
* ``gaussexp``: ``exp(eta * r**2)``, ``eta > 0``

where ``r`` is the Euclidean norm of the state, or the graph norm of
``A**level`` for a diagonal operator with the given spectrum.  Every family
has minimum 1 at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError

FAMILIES = ("polynomial", "cosh", "gaussexp")


@dataclass(frozen=True)
class WeightFunction:
    family: str
    param: float
    level: int = 0
    spectrum: Optional[Tuple[float, ...]] = None
    # Replaces the (Sobolev) Euclidean norm, e.g. the forward-curve norm.
    norm: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown weight family {self.family!r}")
        if self.family == "polynomial" and not self.param >= 2:
            raise ConfigurationError("polynomial weight needs s >= 2")
        if self.family in ("cosh", "gaussexp") and not self.param > 0:
            raise ConfigurationError(f"{self.family} weight needs a positive parameter")
        if self.level < 0:
            raise ConfigurationError("weight level must be >= 0")
        if self.level > 0 and self.spectrum is None and self.norm is None:
            raise ConfigurationError("a positive weight level needs a spectrum")
        if self.spectrum is not None:
            object.__setattr__(self, "spectrum", tuple(float(v) for v in self.spectrum))

    def norm_sq(self, x) -> np.ndarray:
        """Squared state norm along the last axis."""
        x = np.asarray(x, dtype=float)
        if self.norm is not None:
            return np.asarray(self.norm(x), dtype=float) ** 2
        if self.level == 0:
            return np.sum(x * x, axis=-1)
        lam = np.asarray(self.spectrum)
        if lam.shape[0] != x.shape[-1]:
            raise ConfigurationError(
                f"state dimension {x.shape[-1]} does not match spectrum length {lam.shape[0]}"
            )
        lam2 = lam * lam
        coeff = sum(lam2**i for i in range(self.level + 1))
        return np.sum(coeff * x * x, axis=-1)

    def __call__(self, x) -> np.ndarray:
        r2 = self.norm_sq(x)
        if self.family == "polynomial":
            return (1.0 + r2) ** (0.5 * self.param)
        if self.family == "cosh":
            return np.cosh(self.param * np.sqrt(r2))
        return np.exp(self.param * r2)


def polynomial_weight(s=2.0, level=0, spectrum=None) -> WeightFunction:
    return WeightFunction("polynomial", float(s), level, spectrum)


def eval_weight(w: WeightFunction, x) -> float:
    return float(w(np.atleast_1d(np.asarray(x, dtype=float))))


def sublevel_member(w: WeightFunction, x, R: float) -> bool:
    """Membership of ``x`` in the sublevel set ``{psi <= R}``."""
    if not R > 0:
        raise ValueError("sublevel radius R must be positive")
    return bool(eval_weight(w, x) <= R)


def _unpack(cloud) -> Tuple[np.ndarray, np.ndarray]:
    pairs = list(cloud)
    if not pairs:
        raise ValueError("point cloud is empty")
    xs = np.array([np.atleast_1d(np.asarray(p[0], dtype=float)) for p in pairs])
    fs = np.array([float(p[1]) for p in pairs])
    return xs, fs


def weighted_values(cloud: Iterable[Tuple[Sequence[float], float]], w: WeightFunction):
    """Return ``(psi(x), |f(x)| / psi(x))`` arrays for a cloud of ``(x, f(x))`` pairs."""
    xs, fs = _unpack(cloud)
    psi = w(xs)
    return psi, np.abs(fs) / psi


def weighted_sup_norm(cloud, w: WeightFunction) -> float:
    """Finite-sample surrogate of ``sup_x |f(x)| / psi(x)``."""
    _, ratios = weighted_values(cloud, w)
    return float(np.max(ratios))


def growth_decay_ratio(cloud, w: WeightFunction, R: float) -> float:
    """Supremum of ``|f| / psi`` over cloud points outside ``{psi <= R}``.

    Returns 0 when no sample lies outside the sublevel set.
    """
    if not R > 0:
        raise ValueError("sublevel radius R must be positive")
    psi, ratios = weighted_values(cloud, w)
    tail = ratios[psi > R]
    return float(np.max(tail)) if tail.size else 0.0
