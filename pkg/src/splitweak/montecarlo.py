"""Weak-error estimation in weighted supremum norms and convergence fits.

The weighted weak error of a scheme at ``n`` steps is

    E_hat = max over grid points x0 of |P_T f(x0) - Q^n f(x0)| / psi(x0)

with ``P_T f`` from an exact oracle or a fine Ninomiya-Victoir reference.
Affine models with moment-computable payoffs are evaluated exactly through
``propagate_moments_affine``; everything else goes through Monte Carlo on
the block streams of :mod:`splitweak.streams`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import streams
from .errors import CapabilityError, ConfigurationError, InconclusiveResultError, NumericalOverflowError
from .flows import FlowConfig
from .models import Payoff, SplitModel, exact_expectation, gaussian_expectation
from .splitting import (
    SchemeSpec,
    affine_law_is_gaussian,
    nv_scheme,
    propagate_moments_affine,
    sample_branches,
    step_with_noise,
)
from .streams import Stream
from .weights import WeightFunction

ASSUMPTION_NOTE = (
    "polynomial payoffs are unbounded; their membership in the smooth test-function "
    "classes behind the optimal-order statements is assumed, not verified"
)


@dataclass(frozen=True)
class ReferencePolicy:
    kind: str = "exact"  # "exact" | "fine-nv"
    factor: int = 8
    path_factor: int = 10
    coupling: str = "independent"  # "independent" | "common"

    def __post_init__(self):
        if self.kind not in ("exact", "fine-nv"):
            raise ConfigurationError(f"unknown reference kind {self.kind!r}")
        if self.factor < 1 or self.path_factor < 1:
            raise ConfigurationError("reference factors must be >= 1")
        if self.coupling not in ("independent", "common"):
            raise ConfigurationError(f"unknown coupling {self.coupling!r}")
        if self.coupling == "common" and self.kind != "fine-nv":
            raise ConfigurationError("common random numbers need a fine-nv reference")


# ------------------------------------------------------------- Monte Carlo


def _noise(rng, n, d, dt, antithetic):
    if not antithetic:
        return rng.standard_normal((n, d)) * np.sqrt(dt), rng.random(n)
    h = n // 2
    dW = rng.standard_normal((h, d)) * np.sqrt(dt)
    u = rng.random(h)
    return np.concatenate([dW, -dW]), np.concatenate([u, 1.0 - u])


def _pair(vals: np.ndarray, antithetic: bool) -> np.ndarray:
    if not antithetic:
        return vals
    h = vals.shape[0] // 2
    return 0.5 * (vals[:h] + vals[h:])


def _check_paths(npaths, antithetic, block_size):
    if npaths < 2:
        raise ValueError("need at least two paths")
    if antithetic and (npaths % 2 or block_size % 2):
        raise ValueError("antithetic sampling needs even path and block counts")


def _run_blocks(fn, npaths, block_size, workers):
    try:
        return streams.map_blocks(fn, streams.blocks(npaths, block_size), workers)
    except NumericalOverflowError:
        raise


def sample_terminal_payoffs(
    m, cfg, s, payoff, T, nsteps, x0, npaths, stream: Stream, workers=1, antithetic=False, block_size=streams.BLOCK_SIZE
) -> np.ndarray:
    """Payoff samples (antithetic pairs averaged) in path order."""
    _check_paths(npaths, antithetic, block_size)
    if nsteps < 1:
        raise ValueError("nsteps must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    dt = T / nsteps

    def run(blk):
        b, start, n = blk
        rng = stream.block(b)
        X = np.tile(x0, (n, 1))
        for k in range(nsteps):
            dW, u = _noise(rng, n, m.noise_dim, dt, antithetic)
            try:
                X = step_with_noise(m, cfg, s, dt, X, dW, sample_branches(s, u))
            except NumericalOverflowError as exc:
                path = None if exc.path is None else start + exc.path
                raise NumericalOverflowError(
                    f"non-finite state on path {path} at step {k} ({exc.substep})", step=k, substep=exc.substep, path=path
                ) from exc
        return _pair(payoff(X), antithetic)

    return np.concatenate(_run_blocks(run, npaths, block_size, workers))


def _mean_se(vals: np.ndarray) -> Tuple[float, float]:
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(vals.shape[0]))


def estimate_expectation(m, cfg, s, payoff, T, nsteps, x0, npaths, stream, workers=1, antithetic=False):
    """Monte Carlo ``(mean, stderr)`` of ``f`` at the scheme's terminal state."""
    return _mean_se(sample_terminal_payoffs(m, cfg, s, payoff, T, nsteps, x0, npaths, stream, workers, antithetic))


def reference_value(
    m: SplitModel,
    payoff: Payoff,
    T: float,
    x0,
    cfg: FlowConfig,
    policy: ReferencePolicy,
    nsteps: int = 1,
    npaths: int = 0,
    stream: Optional[Stream] = None,
    workers: int = 1,
) -> Tuple[float, float]:
    """``(P_T f(x0), stderr)``: exact oracle, or NV at ``factor * nsteps`` steps."""
    if policy.kind == "exact":
        try:
            return exact_expectation(m, payoff, T, x0), 0.0
        except CapabilityError as exc:
            raise ConfigurationError(f"exact reference unavailable: {exc}") from exc
    if stream is None or npaths < 2:
        raise ConfigurationError("fine-nv reference needs a stream and a path count")
    nv = nv_scheme(m.noise_dim)
    return estimate_expectation(
        m, cfg, nv, payoff, T, nsteps * policy.factor, x0, npaths * policy.path_factor, stream, workers
    )


# ------------------------------------------------------------ affine exact


def affine_expectation(m, cfg, s, payoff, T, nsteps, x0) -> Optional[float]:
    """Exact E f(Q^n x0) for affine models, or None when not computable."""
    if not m.affine:
        return None
    coeffs = payoff.poly()
    if coeffs is None and payoff.kind != "exp_linear":
        return None
    gaussian = True
    if coeffs is None or len(coeffs) > 3:
        gaussian = affine_law_is_gaussian(m, cfg, s, T / nsteps)
        if not gaussian:
            return None
    mean, cov = propagate_moments_affine(m, cfg, s, T, nsteps, x0)
    return gaussian_expectation(payoff, mean, cov, gaussian=gaussian)


def _affine_reference(m, cfg, payoff, T, nsteps, x0, policy) -> Optional[float]:
    if policy.kind == "exact":
        try:
            return exact_expectation(m, payoff, T, x0)
        except CapabilityError as exc:
            raise ConfigurationError(f"exact reference unavailable: {exc}") from exc
    return affine_expectation(m, cfg, nv_scheme(m.noise_dim), payoff, T, nsteps * policy.factor, x0)


# ----------------------------------------------------------- coupled paths


def coupled_differences(
    m, cfg, schemes: Sequence[SchemeSpec], payoff, T, levels: Sequence[int], x0, factor, npaths, stream,
    workers=1, antithetic=False, block_size=streams.BLOCK_SIZE,
):
    """Scheme-minus-reference payoff samples on common Brownian paths.

    The reference is NV at ``factor * max(levels)`` steps; each coarse level
    sums the fine increments of its step.  Returns ``(reference samples,
    {(scheme name, n): difference samples})``.
    """
    _check_paths(npaths, antithetic, block_size)
    n_ref = factor * max(levels)
    for n in levels:
        if n_ref % n:
            raise ConfigurationError(f"level {n} does not divide the reference step count {n_ref}")
    nv = nv_scheme(m.noise_dim)
    x0 = np.asarray(x0, dtype=float)
    dt_f = T / n_ref
    d = m.noise_dim

    def run(blk):
        b, start, n = blk
        rng = stream.block(b)
        Xr = np.tile(x0, (n, 1))
        Xs = {(si, lv): Xr.copy() for si in range(len(schemes)) for lv in levels}
        acc = {lv: np.zeros((n, d)) for lv in levels}
        coin = {}
        for k in range(n_ref):
            dW, u = _noise(rng, n, d, dt_f, antithetic)
            Xr = step_with_noise(m, cfg, nv, dt_f, Xr, dW, sample_branches(nv, u))
            for lv in levels:
                r = n_ref // lv
                if k % r == 0:
                    acc[lv][:] = 0.0
                    coin[lv] = u
                acc[lv] += dW
                if (k + 1) % r == 0:
                    for si, s in enumerate(schemes):
                        Xs[si, lv] = step_with_noise(m, cfg, s, T / lv, Xs[si, lv], acc[lv], sample_branches(s, coin[lv]))
        fr = payoff(Xr)
        diffs = {(schemes[si].name, lv): _pair(payoff(X) - fr, antithetic) for (si, lv), X in Xs.items()}
        return _pair(fr, antithetic), diffs

    results = _run_blocks(run, npaths, block_size, workers)
    ref = np.concatenate([r[0] for r in results])
    keys = results[0][1].keys()
    return ref, {k: np.concatenate([r[1][k] for r in results]) for k in keys}


# ---------------------------------------------------------- weighted error


@dataclass
class PointError:
    grid_point: int
    psi: float
    reference: float
    estimate: float
    raw_error: float
    weighted_error: float
    stderr: float


@dataclass
class LevelError:
    scheme: str
    nsteps: int
    dt: float
    error: float  # weighted weak error, max over the grid
    stderr: float  # max over grid of weighted standard errors
    argmax: int
    points: List[PointError]
    exact: bool  # evaluated without Monte Carlo noise
    resolved: bool = True

    @classmethod
    def from_points(cls, scheme, nsteps, dt, points, exact):
        werr = np.array([p.weighted_error for p in points])
        arg = int(np.argmax(werr))
        se = max(p.stderr / p.psi for p in points)
        return cls(scheme, nsteps, dt, float(werr[arg]), float(se), arg, points, exact)


def weighted_weak_error(
    m: SplitModel,
    cfg: FlowConfig,
    s: SchemeSpec,
    payoff: Payoff,
    T: float,
    nsteps: int,
    grid: Sequence,
    weight: WeightFunction,
    policy: ReferencePolicy = ReferencePolicy(),
    npaths: int = 10_000,
    seed: int = 0,
    mode: str = "auto",
    workers: int = 1,
    antithetic: bool = False,
    ref_nsteps: Optional[int] = None,
    scheme_index: int = 0,
) -> LevelError:
    """Weighted weak error of ``s`` at ``nsteps`` steps over ``grid``.

    ``mode`` is ``"auto"`` (affine exact when possible), ``"affine"`` or ``"mc"``.
    """
    grid = [np.asarray(g, dtype=float) for g in grid]
    if not grid:
        raise ValueError("initial-state grid is empty")
    if mode not in ("auto", "affine", "mc"):
        raise ConfigurationError(f"unknown evaluation mode {mode!r}")
    ref_n = nsteps if ref_nsteps is None else ref_nsteps
    dt = T / nsteps
    points = []
    exact = False
    if mode in ("auto", "affine"):
        vals = [affine_expectation(m, cfg, s, payoff, T, nsteps, x0) for x0 in grid]
        if all(v is not None for v in vals):
            exact = True
            for g, (x0, v) in enumerate(zip(grid, vals)):
                ref = _affine_reference(m, cfg, payoff, T, ref_n, x0, policy)
                psi = float(weight(x0))
                err = abs(ref - v)
                points.append(PointError(g, psi, ref, v, err, err / psi, 0.0))
        elif mode == "affine":
            raise CapabilityError("affine evaluation unavailable for this model and payoff")
    if not exact:
        if policy.coupling == "common":
            rep = coupled_weak_errors(
                m, cfg, [s], payoff, T, [nsteps], grid, weight, policy, npaths, seed, workers, antithetic,
                ref_nsteps=ref_n,
            )
            return rep[0]
        root = Stream(seed)
        for g, x0 in enumerate(grid):
            est, se = estimate_expectation(
                m, cfg, s, payoff, T, nsteps, x0, npaths, root.child(streams.SCHEME, scheme_index, nsteps, g),
                workers, antithetic,
            )
            ref, rse = reference_value(
                m, payoff, T, x0, cfg, policy, ref_n, npaths, root.child(streams.REFERENCE, ref_n, g), workers
            )
            psi = float(weight(x0))
            err = abs(ref - est)
            points.append(PointError(g, psi, ref, est, err, err / psi, math.hypot(se, rse)))
    return LevelError.from_points(s.name, nsteps, dt, points, exact)


def coupled_weak_errors(
    m, cfg, schemes, payoff, T, levels, grid, weight, policy, npaths, seed, workers=1, antithetic=False,
    ref_nsteps=None,
) -> List[LevelError]:
    """Weighted weak errors of several schemes and levels on common paths."""
    levels = list(levels)
    factor = policy.factor if ref_nsteps is None else (ref_nsteps * policy.factor) // max(levels)
    root = Stream(seed)
    per_key: Dict[Tuple[str, int], List[PointError]] = {}
    for g, x0 in enumerate(grid):
        x0 = np.asarray(x0, dtype=float)
        psi = float(weight(x0))
        ref, diffs = coupled_differences(
            m, cfg, schemes, payoff, T, levels, x0, factor, npaths, root.child(streams.COUPLED, g), workers, antithetic
        )
        ref_mean = float(np.mean(ref))
        for key, dv in diffs.items():
            mean, se = _mean_se(dv)
            err = abs(mean)
            per_key.setdefault(key, []).append(PointError(g, psi, ref_mean, ref_mean + mean, err, err / psi, se))
    return [
        LevelError.from_points(s.name, n, T / n, per_key[s.name, n], False) for s in schemes for n in levels
    ]


# -------------------------------------------------------------- order fits


@dataclass
class OrderFit:
    scheme: str
    slope: float
    residual: float
    levels_used: List[int]
    exact: bool = False

    @property
    def conclusive(self) -> bool:
        return self.exact or len(self.levels_used) >= 3


def fit_order(scheme: str, levels: Sequence[LevelError], resolution=0.3, exact_tol=1e-12) -> OrderFit:
    """Least-squares slope of log E_hat against log dt over resolved levels.

    A level is unresolved when its standard error exceeds ``resolution * E_hat``.
    When every level is below ``exact_tol`` the scheme is flagged exact.
    """
    if all(lv.error <= exact_tol for lv in levels):
        for lv in levels:
            lv.resolved = False
        return OrderFit(scheme, float("nan"), float("nan"), [], exact=True)
    used = []
    for lv in levels:
        lv.resolved = lv.error > exact_tol and lv.stderr <= resolution * lv.error
        if lv.resolved:
            used.append(lv)
    if len(used) < 2:
        return OrderFit(scheme, float("nan"), float("nan"), [lv.nsteps for lv in used])
    x = np.log([lv.dt for lv in used])
    y = np.log([lv.error for lv in used])
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    return OrderFit(scheme, float(slope), float(np.sqrt(np.mean(res**2))), [lv.nsteps for lv in used])


@dataclass
class ExperimentConfig:
    model: SplitModel
    schemes: List[SchemeSpec]
    payoff: Payoff
    weight: WeightFunction
    T: float
    levels: List[int]
    npaths: int
    grid: List[np.ndarray]
    seed: int
    reference: ReferencePolicy = ReferencePolicy()
    flow: FlowConfig = FlowConfig()
    mode: str = "auto"
    resolution: float = 0.3
    exact_tol: float = 1e-12
    antithetic: bool = False
    raw: dict = field(default_factory=dict)


@dataclass
class ErrorReport:
    levels: List[LevelError]
    fits: Dict[str, OrderFit]
    wall_clock: float = 0.0
    notes: List[str] = field(default_factory=list)

    def level(self, scheme: str, nsteps: int) -> LevelError:
        return next(lv for lv in self.levels if lv.scheme == scheme and lv.nsteps == nsteps)

    def rows(self):
        """Detail rows in the CSV column order."""
        for lv in self.levels:
            for p in lv.points:
                yield (lv.scheme, lv.nsteps, lv.dt, p.grid_point, p.raw_error, p.weighted_error, p.stderr,
                       int(p.grid_point == lv.argmax))

    def summary_rows(self):
        for name, fit in self.fits.items():
            yield (name, fit.slope, fit.residual, fit.levels_used)


def convergence_study(config: ExperimentConfig, workers: int = 1) -> ErrorReport:
    """Weighted weak errors at every level and fitted orders per scheme.

    Raises InconclusiveResultError (carrying the report) when a scheme has
    fewer than three resolved levels and is not exact.
    """
    import time

    c = config
    levels = sorted(c.levels)
    if len(levels) < 3:
        raise ConfigurationError("a convergence study needs at least three step-count levels")
    t0 = time.perf_counter()
    ref_n = max(levels)
    all_levels: List[LevelError] = []
    coupled = c.reference.coupling == "common"
    # levels that cannot be evaluated exactly go to Monte Carlo; with common
    # random numbers they share one coupled run per grid point
    if coupled and c.mode != "affine":
        probe = None if c.mode == "mc" else affine_expectation(
            c.model, c.flow, c.schemes[0], c.payoff, c.T, levels[0], c.grid[0]
        )
        if probe is None:
            all_levels = coupled_weak_errors(
                c.model, c.flow, c.schemes, c.payoff, c.T, levels, c.grid, c.weight, c.reference, c.npaths, c.seed,
                workers, c.antithetic,
            )
    if not all_levels:
        for si, s in enumerate(c.schemes):
            for n in levels:
                all_levels.append(
                    weighted_weak_error(
                        c.model, c.flow, s, c.payoff, c.T, n, c.grid, c.weight, c.reference, c.npaths, c.seed,
                        c.mode, workers, c.antithetic, ref_nsteps=ref_n, scheme_index=si,
                    )
                )
    fits = {}
    for s in c.schemes:
        mine = [lv for lv in all_levels if lv.scheme == s.name]
        fits[s.name] = fit_order(s.name, mine, c.resolution, c.exact_tol)
    notes = []
    if c.payoff.poly() is not None:
        notes.append(ASSUMPTION_NOTE)
    report = ErrorReport(all_levels, fits, time.perf_counter() - t0, notes)
    bad = [name for name, fit in fits.items() if not fit.conclusive]
    if bad:
        raise InconclusiveResultError(f"fewer than 3 resolved levels for: {', '.join(bad)}", report)
    return report


# -------------------------------------------------------- weight moments


@dataclass
class SupermartingaleRow:
    t: float
    grid_point: int
    ratio: float
    rel_stderr: float
    bound: float
    violation: bool


@dataclass
class SupermartingaleReport:
    omega: float
    rows: List[SupermartingaleRow]

    @property
    def violations(self) -> List[SupermartingaleRow]:
        return [r for r in self.rows if r.violation]


def supermartingale_check(
    m: SplitModel,
    cfg: FlowConfig,
    weight: WeightFunction,
    T: float,
    grid: Sequence,
    npaths: int,
    timepoints: Sequence[float],
    seed: int = 0,
    scheme: Optional[SchemeSpec] = None,
    dt: float = 1.0 / 128,
    fit_horizon: Optional[float] = None,
    workers: int = 1,
) -> SupermartingaleReport:
    """Estimate ``r(t, x0) = E psi(x(t, x0)) / psi(x0)`` and fit a growth rate.

    ``omega`` is the largest ``log r / t`` over timepoints ``t <= fit_horizon``
    (default: the smallest timepoint, i.e. the short-time window).  Every
    ``(t, x0)`` is then checked against ``exp(omega t) (1 + 3 rel_stderr)``.
    ``dt`` is the largest step; each interval between timepoints is split
    into equal steps.
    """
    times = sorted(float(t) for t in timepoints)
    if not times or times[0] <= 0 or times[-1] > T + 1e-12:
        raise ValueError("timepoints must lie in (0, T]")
    if not dt > 0:
        raise ValueError("dt must be positive")
    # each interval between timepoints gets equal steps of size <= dt
    segments = []
    prev = 0.0
    for t in times:
        if t > prev:
            k = max(1, math.ceil((t - prev) / dt - 1e-9))
            segments.append((k, (t - prev) / k))
        else:
            segments.append((0, 0.0))
        prev = t
    scheme = scheme or nv_scheme(m.noise_dim)
    horizon = times[0] if fit_horizon is None else fit_horizon
    root = Stream(seed)
    d = m.noise_dim
    stats = {}
    for g, x0 in enumerate(grid):
        x0 = np.asarray(x0, dtype=float)
        stream = root.child(streams.SUPERMARTINGALE, g)

        def run(blk, x0=x0, stream=stream):
            b, start, n = blk
            rng = stream.block(b)
            X = np.tile(x0, (n, 1))
            rec = []
            for k, h in segments:
                for _ in range(k):
                    dW, u = _noise(rng, n, d, h, False)
                    X = step_with_noise(m, cfg, scheme, h, X, dW, sample_branches(scheme, u))
                rec.append(weight(X))
            return np.array(rec)

        samples = np.concatenate(_run_blocks(run, npaths, streams.BLOCK_SIZE, workers), axis=1)
        psi0 = float(weight(x0))
        for ti, t in enumerate(times):
            mean, se = _mean_se(samples[ti])
            stats[t, g] = (mean / psi0, se / mean if mean > 0 else 0.0)
    fit = [math.log(r) / t for (t, g), (r, _) in stats.items() if t <= horizon + 1e-12]
    omega = max(fit)
    rows = []
    for (t, g), (r, rel) in sorted(stats.items()):
        # 1e-12 absorbs rounding when a fitted point is checked against itself
        bound = math.exp(omega * t) * (1.0 + 3.0 * rel) * (1.0 + 1e-12)
        rows.append(SupermartingaleRow(t, g, r, rel, bound, r > bound))
    return SupermartingaleReport(omega, rows)


def growth_control_ratios(small: Sequence[LevelError], large: Sequence[LevelError]) -> Dict[Tuple[str, int], float]:
    """Per (scheme, level) ratio of the extended-grid error to the base-grid error."""
    base = {(lv.scheme, lv.nsteps): lv.error for lv in small}
    return {(lv.scheme, lv.nsteps): (lv.error / base[lv.scheme, lv.nsteps] if base[lv.scheme, lv.nsteps] else
                                     (1.0 if lv.error == 0 else math.inf)) for lv in large}


# ------------------------------------------------------ consistency checks


@dataclass
class EquivalenceRow:
    scheme: str
    nsteps: int
    grid_point: int
    mc_mean: float
    mc_stderr: float
    affine_value: float

    @property
    def zscore(self) -> float:
        diff = self.mc_mean - self.affine_value
        return abs(diff) / self.mc_stderr if self.mc_stderr > 0 else (0.0 if diff == 0 else math.inf)


def oracle_equivalence(
    m, cfg, schemes, payoff, T, levels, grid, npaths, seed, workers=1
) -> List[EquivalenceRow]:
    """Monte Carlo estimates next to the exact affine value of the same scheme."""
    root = Stream(seed)
    rows = []
    for si, s in enumerate(schemes):
        for n in levels:
            for g, x0 in enumerate(grid):
                exact = affine_expectation(m, cfg, s, payoff, T, n, x0)
                if exact is None:
                    raise CapabilityError(f"no affine value for {m.name} with payoff {payoff.kind}")
                mean, se = estimate_expectation(
                    m, cfg, s, payoff, T, n, x0, npaths, root.child(streams.SCHEME, si, n, g), workers
                )
                rows.append(EquivalenceRow(s.name, n, g, mean, se, exact))
    return rows


def pathwise_exactness(m, cfg, schemes, T, levels, x0, npaths, seed) -> Dict[Tuple[str, int], float]:
    """Largest ``|scheme - closed form|`` over paths driven by the same increments."""
    if m.pathwise_solution is None:
        raise CapabilityError(f"model {m.name} has no closed-form pathwise solution")
    x0 = np.asarray(x0, dtype=float)
    out = {}
    for si, s in enumerate(schemes):
        for n in levels:
            rng = Stream(seed).child(streams.SCHEME, si, n).block(0)
            dt = T / n
            X = np.tile(x0, (npaths, 1))
            W = np.zeros((npaths, m.noise_dim))
            for _ in range(n):
                dW, u = _noise(rng, npaths, m.noise_dim, dt, False)
                X = step_with_noise(m, cfg, s, dt, X, dW, sample_branches(s, u))
                W += dW
            exact = m.pathwise_solution(T, x0, W)
            out[s.name, n] = float(np.max(np.abs(X - exact)))
    return out
