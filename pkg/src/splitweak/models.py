"""Split models ``dx = (A x + alpha(x)) dt + sum_j sigma_j(x) dW^j`` and built-ins.

States are float arrays whose last axis is the state dimension; every vector
field acts on the last axis so the same callables serve single states and
batches of Monte Carlo paths.  ``A`` is diagonal (given by its spectrum)
unless the model supplies its own semigroup, as the forward-curve model does.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import CapabilityError, ConfigurationError

Field = Callable[[np.ndarray], np.ndarray]

BUILTIN_MODELS = ("OU", "GBM", "LINEAR_GROWTH_1D", "HEAT_SPDE")


@dataclass(frozen=True, eq=False)
class Payoff:
    """Test function ``f`` evaluated on terminal states.

    kinds: ``moment1`` (x_i), ``moment2`` (x_i**2), ``poly`` (sum c_k x_i**k,
    degree <= 4), ``exp_linear`` (exp(w . x)) and ``custom`` (any callable).
    """

    kind: str
    coordinate: int = 0
    coefficients: Tuple[float, ...] = ()
    weights: Optional[np.ndarray] = None
    func: Optional[Field] = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("moment1", "moment2", "poly", "exp_linear", "custom"):
            raise ConfigurationError(f"unknown payoff kind {self.kind!r}")
        if self.kind == "poly":
            if not 1 <= len(self.coefficients) <= 5:
                raise ConfigurationError("poly payoff needs 1 to 5 coefficients (degree <= 4)")
            object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if self.kind == "exp_linear":
            if self.weights is None:
                raise ConfigurationError("exp_linear payoff needs weights")
            object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.kind == "custom" and self.func is None:
            raise ConfigurationError("custom payoff needs a function")
        if self.coordinate < 0:
            raise ConfigurationError("payoff coordinate must be >= 0")

    def poly(self) -> Optional[Tuple[float, ...]]:
        """Polynomial coefficients in the payoff coordinate, or None."""
        if self.kind == "moment1":
            return (0.0, 1.0)
        if self.kind == "moment2":
            return (0.0, 0.0, 1.0)
        if self.kind == "poly":
            return self.coefficients
        return None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "custom":
            return np.asarray(self.func(x), dtype=float)
        if self.kind == "exp_linear":
            return np.exp(x @ self.weights)
        xi = x[..., self.coordinate]
        out = np.zeros_like(xi)
        for c in reversed(self.poly()):
            out = out * xi + c
        return out


def gaussian_raw_moments(mean: float, var: float, degree: int) -> list:
    m, v = float(mean), float(var)
    return [1.0, m, m * m + v, m**3 + 3 * m * v, m**4 + 6 * m * m * v + 3 * v * v][: degree + 1]


def gaussian_expectation(payoff: Payoff, mean, cov, gaussian: bool = True) -> float:
    """E f(X) from the first two moments of X.

    Degree <= 2 polynomials only need the moments; higher degrees and the
    exponential payoff need ``gaussian=True``.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    coeffs = payoff.poly()
    if coeffs is not None:
        i = payoff.coordinate
        if i >= mean.shape[0]:
            raise ConfigurationError(f"payoff coordinate {i} outside state dimension {mean.shape[0]}")
        degree = len(coeffs) - 1
        if degree > 2 and not gaussian:
            raise CapabilityError("degree > 2 payoff needs a Gaussian law")
        mom = gaussian_raw_moments(mean[i], cov[i, i], degree)
        return float(sum(c * mk for c, mk in zip(coeffs, mom)))
    if payoff.kind == "exp_linear":
        if not gaussian:
            raise CapabilityError("exponential payoff needs a Gaussian law")
        w = payoff.weights
        return float(np.exp(w @ mean + 0.5 * w @ cov @ w))
    raise CapabilityError(f"no moment formula for payoff kind {payoff.kind!r}")


@dataclass(frozen=True, eq=False)
class SplitModel:
    name: str
    dim: int
    spectrum: np.ndarray
    drift: Optional[Field]
    diffusions: Tuple[Field, ...]
    # None entries mean a constant field (zero Jacobian).
    diffusion_jacobians: Tuple[Optional[Callable], ...]
    # Optional Jacobian-vector products (x, v) -> D sigma_j(x) v, preferred over matrices.
    diffusion_jvps: Optional[Tuple[Optional[Callable], ...]] = None
    exact_drift_flow: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    exact_diffusion_flows: Optional[Tuple[Callable, ...]] = None
    moment_oracle: Optional[Callable[[Payoff, float, np.ndarray], float]] = None
    affine: bool = False
    semigroup: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    default_weight: Optional[object] = None
    # Closed-form terminal state from (T, x0, W_T), when the solution is a function of W_T.
    pathwise_solution: Optional[Callable[[float, np.ndarray, np.ndarray], np.ndarray]] = None
    params: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        spec = np.asarray(self.spectrum, dtype=float)
        object.__setattr__(self, "spectrum", spec)
        if self.dim < 1:
            raise ConfigurationError("model dimension must be >= 1")
        if spec.shape != (self.dim,):
            raise ConfigurationError(f"spectrum length {spec.shape} does not match dim {self.dim}")
        if len(self.diffusion_jacobians) != len(self.diffusions):
            raise ConfigurationError("one Jacobian entry per diffusion is required")
        if self.exact_diffusion_flows is not None and len(self.exact_diffusion_flows) != len(self.diffusions):
            raise ConfigurationError("one exact flow per diffusion is required")

    @property
    def noise_dim(self) -> int:
        return len(self.diffusions)

    @property
    def additive_noise(self) -> bool:
        jvps = self.diffusion_jvps or (None,) * self.noise_dim
        return all(j is None for j in self.diffusion_jacobians) and all(j is None for j in jvps)

    @property
    def drift_free(self) -> bool:
        """True when the corrected drift vanishes identically."""
        return self.drift is None and self.additive_noise


def _check_state(m: SplitModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != m.dim:
        raise ValueError(f"state has dimension {x.shape[-1] if x.ndim else 0}, model {m.name} needs {m.dim}")
    return x


def stratonovich_drift(m: SplitModel, x) -> np.ndarray:
    """alpha(x) - 1/2 sum_j D sigma_j(x) sigma_j(x); the A part is excluded."""
    x = _check_state(m, x)
    out = np.zeros_like(x) if m.drift is None else np.array(m.drift(x), dtype=float)
    jvps = m.diffusion_jvps or (None,) * m.noise_dim
    for sigma, jac, jvp in zip(m.diffusions, m.diffusion_jacobians, jvps):
        if jvp is not None:
            out -= 0.5 * jvp(x, sigma(x))
        elif jac is not None:
            out -= 0.5 * np.einsum("...ik,...k->...i", jac(x), sigma(x))
    return out


def apply_A_semigroup(m: SplitModel, t: float, x) -> np.ndarray:
    if t < 0:
        raise ValueError("the linear semigroup is only defined for t >= 0")
    x = _check_state(m, x)
    if m.semigroup is not None:
        return m.semigroup(t, x)
    return x * np.exp(t * m.spectrum)


def exact_expectation(m: SplitModel, payoff: Payoff, T: float, x0) -> float:
    """Closed-form E f(x(T, x0)); raises CapabilityError without an oracle."""
    if m.moment_oracle is None:
        raise CapabilityError(f"model {m.name} has no exact expectation oracle")
    return float(m.moment_oracle(payoff, T, _check_state(m, x0)))


# ---------------------------------------------------------------- built-ins


def _const_field(vec: np.ndarray) -> Field:
    vec = np.asarray(vec, dtype=float)
    return lambda x: np.zeros(np.shape(x)) + vec


def _shift_flow(vec: np.ndarray):
    vec = np.asarray(vec, dtype=float)

    def flow(w, x):
        return x + np.multiply.outer(np.asarray(w, dtype=float), vec).reshape(np.shape(x))

    return flow


def _phi1(k: float, t: float) -> float:
    """(exp(k t) - 1) / k, continuous at k = 0."""
    return t if k == 0 else np.expm1(k * t) / k


def _phi1_arr(k: float, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return t if k == 0 else np.expm1(k * t) / k


def _take(params: dict, defaults: dict, name: str) -> dict:
    unknown = set(params) - set(defaults)
    if unknown:
        raise ConfigurationError(f"unknown parameters for {name}: {sorted(unknown)}")
    out = dict(defaults)
    out.update(params)
    return out


def _ou(theta=1.0, mu=0.0, sigma=0.5, exact_flows=True) -> SplitModel:
    theta, mu, sigma = float(theta), float(mu), float(sigma)
    if theta < 0 or sigma < 0:
        raise ConfigurationError("OU needs theta >= 0 and sigma >= 0")

    def oracle(payoff, T, x0):
        mean = mu + (x0[0] - mu) * np.exp(-theta * T)
        var = sigma**2 * (_phi1(-2 * theta, T))
        return gaussian_expectation(payoff, [mean], [[var]])

    return SplitModel(
        name="OU",
        dim=1,
        spectrum=np.zeros(1),
        drift=lambda x: -theta * (np.asarray(x) - mu),
        diffusions=(_const_field([sigma]),),
        diffusion_jacobians=(None,),
        exact_drift_flow=(lambda t, x: mu + (x - mu) * np.exp(-theta * t)) if exact_flows else None,
        exact_diffusion_flows=(_shift_flow([sigma]),) if exact_flows else None,
        moment_oracle=oracle,
        affine=True,
        params=dict(theta=theta, mu=mu, sigma=sigma, exact_flows=bool(exact_flows)),
    )


def _gbm(mu=0.1, sigma=0.2, exact_flows=True) -> SplitModel:
    mu, sb = float(mu), float(sigma)
    k = mu - 0.5 * sb * sb

    def oracle(payoff, T, x0):
        coeffs = payoff.poly()
        if coeffs is None:
            raise CapabilityError("GBM oracle covers polynomial payoffs only")
        x = x0[payoff.coordinate]
        return float(
            sum(c * x**j * np.exp(j * mu * T + 0.5 * j * (j - 1) * sb * sb * T) for j, c in enumerate(coeffs))
        )

    def diff_flow(w, x):
        return x * np.exp(sb * np.asarray(w, dtype=float))[..., None] if np.ndim(w) else x * np.exp(sb * w)

    return SplitModel(
        name="GBM",
        dim=1,
        spectrum=np.zeros(1),
        drift=lambda x: mu * np.asarray(x),
        diffusions=(lambda x: sb * np.asarray(x),),
        diffusion_jacobians=(lambda x: sb * np.ones(np.shape(x) + (1,)),),
        exact_drift_flow=(lambda t, x: x * np.exp(k * t)) if exact_flows else None,
        exact_diffusion_flows=(diff_flow,) if exact_flows else None,
        moment_oracle=oracle,
        affine=False,
        pathwise_solution=lambda T, x0, W: np.asarray(x0) * np.exp(k * T + sb * np.asarray(W)),
        params=dict(mu=mu, sigma=sb, exact_flows=bool(exact_flows)),
    )


def _linear_growth(a=-0.5, b=0.3, c=0.2, exact_flows=True) -> SplitModel:
    a, b, c = float(a), float(b), float(c)
    k = a - 0.5 * b * b
    q = -0.5 * b * c

    def drift_flow(t, x):
        return x * np.exp(k * t) + q * _phi1(k, t)

    def diff_flow(w, x):
        w = np.asarray(w, dtype=float)
        if w.ndim:
            w = w[..., None]
        return x * np.exp(b * w) + c * _phi1_arr(b, w)

    return SplitModel(
        name="LINEAR_GROWTH_1D",
        dim=1,
        spectrum=np.zeros(1),
        drift=lambda x: a * np.asarray(x),
        diffusions=(lambda x: b * np.asarray(x) + c,),
        diffusion_jacobians=(lambda x: b * np.ones(np.shape(x) + (1,)),),
        exact_drift_flow=drift_flow if exact_flows else None,
        exact_diffusion_flows=(diff_flow,) if exact_flows else None,
        affine=False,
        params=dict(a=a, b=b, c=c, exact_flows=bool(exact_flows)),
    )


def _heat(K=16, d=4, amplitudes=None) -> SplitModel:
    K, d = int(K), int(d)
    if K < 1 or not 1 <= d <= K:
        raise ConfigurationError("HEAT_SPDE needs K >= 1 and 1 <= d <= K")
    amp = np.ones(d) if amplitudes is None else np.asarray(amplitudes, dtype=float)
    if amp.shape != (d,):
        raise ConfigurationError("HEAT_SPDE needs one noise amplitude per driven mode")
    lam = -((np.arange(1, K + 1) * np.pi) ** 2)
    vecs = [amp[j] * np.eye(K)[j] for j in range(d)]
    var_rate = np.zeros(K)
    var_rate[:d] = amp**2

    def oracle(payoff, T, x0):
        mean = x0 * np.exp(lam * T)
        var = var_rate * np.expm1(2 * lam * T) / (2 * lam)
        return gaussian_expectation(payoff, mean, np.diag(var))

    return SplitModel(
        name="HEAT_SPDE",
        dim=K,
        spectrum=lam,
        drift=None,
        diffusions=tuple(_const_field(v) for v in vecs),
        diffusion_jacobians=(None,) * d,
        exact_diffusion_flows=tuple(_shift_flow(v) for v in vecs),
        moment_oracle=oracle,
        affine=True,
        params=dict(K=K, d=d, amplitudes=[float(a) for a in amp]),
    )


_FACTORIES = {
    "OU": (_ou, dict(theta=1.0, mu=0.0, sigma=0.5, exact_flows=True)),
    "GBM": (_gbm, dict(mu=0.1, sigma=0.2, exact_flows=True)),
    "LINEAR_GROWTH_1D": (_linear_growth, dict(a=-0.5, b=0.3, c=0.2, exact_flows=True)),
    "HEAT_SPDE": (_heat, dict(K=16, d=4, amplitudes=None)),
}


def make_builtin(name: str, **params) -> SplitModel:
    """Instantiate one of the built-in models by name."""
    if name not in _FACTORIES:
        raise ConfigurationError(f"unknown model {name!r}; known: {', '.join(BUILTIN_MODELS)}")
    factory, defaults = _FACTORIES[name]
    return factory(**_take(params, defaults, name))


def builtin_defaults(name: str) -> dict:
    return dict(_FACTORIES[name][1])


def x0_array(m: SplitModel, x0: Sequence[float]) -> np.ndarray:
    return _check_state(m, np.atleast_1d(np.asarray(x0, dtype=float)))
