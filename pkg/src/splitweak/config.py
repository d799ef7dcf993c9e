"""TOML experiment documents: validation and resolution into run objects.

Every violation is collected with a dotted path into the document, so one
pass reports all problems.  A minimal document::

    study = "convergence"
    T = 1.0
    steps = [8, 16, 32, 64, 128]
    npaths = 1000
    seed = 7
    schemes = ["euler"]

    [model]
    name = "OU"

    [payoff]
    kind = "moment2"

    [grid]
    values = [-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0]
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import tomli

from .errors import ConfigurationError
from .flows import FlowConfig
from .hjm import CurveGrid, VolSpec, bond_payoff, hjm_weight, make_hjm_model
from .models import BUILTIN_MODELS, Payoff, make_builtin
from .montecarlo import ExperimentConfig, ReferencePolicy
from .splitting import scheme_by_name
from .weights import WeightFunction

STUDIES = ("convergence", "equivalence", "growth", "pathwise", "supermartingale")
MIN_PATHS = 100

_TOP = {"study", "T", "steps", "npaths", "seed", "schemes", "mode", "resolution", "exact_tol", "antithetic",
        "model", "payoff", "weight", "grid", "reference", "flow", "supermartingale", "growth", "hjm"}
_SECTIONS = {
    "payoff": {"kind", "coordinate", "coefficients", "weights", "tau"},
    "weight": {"family", "param", "level"},
    "grid": {"points", "coordinate", "values"},
    "reference": {"kind", "factor", "path_factor", "coupling"},
    "flow": {"substeps", "use_exact"},
    "supermartingale": {"timepoints", "dt", "fit_horizon", "scheme"},
    "growth": {"values", "max_ratio"},
    "hjm": {"x_max", "M", "alpha", "s", "vols", "initial_levels"},
}
_VOL_KEYS = {"kind", "c", "beta", "node"}


@dataclass
class RunConfig:
    study: str
    experiment: ExperimentConfig
    timepoints: List[float] = field(default_factory=list)
    sm_dt: float = 1.0 / 128
    fit_horizon: Optional[float] = None
    sm_scheme: str = "nv"
    grid_large: List[np.ndarray] = field(default_factory=list)
    max_ratio: float = 1.5
    curve_grid: Optional[CurveGrid] = None
    doc: Dict[str, Any] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.doc)


def config_hash(doc: dict) -> str:
    """sha256 of the canonical (sorted-key) JSON form; key order is irrelevant."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


class _Errors:
    def __init__(self):
        self.items: List[str] = []

    def add(self, path: str, msg: str):
        self.items.append(f"{path}: {msg}")

    def unknown(self, section: dict, allowed: set, prefix: str):
        for k in section:
            if k not in allowed:
                self.add(f"{prefix}{k}", "unknown key")


def _num(errs, doc, key, path, default=None, positive=False, integer=False, required=False):
    if key not in doc:
        if required:
            errs.add(path, "missing required key")
        return default
    v = doc[key]
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok:
        errs.add(path, f"expected {'an integer' if integer else 'a number'}")
        return default
    if positive and not v > 0:
        errs.add(path, "must be positive")
        return default
    return v


def _grid_points(errs, sec, path, dim) -> List[np.ndarray]:
    pts = []
    if "points" in sec:
        for i, p in enumerate(sec["points"]):
            a = np.atleast_1d(np.asarray(p, dtype=float))
            if a.shape != (dim,):
                errs.add(f"{path}.points[{i}]", f"expected {dim} coordinates")
            else:
                pts.append(a)
    if "values" in sec:
        c = sec.get("coordinate", 0)
        if not isinstance(c, int) or not 0 <= c < dim:
            errs.add(f"{path}.coordinate", f"must be an integer in [0, {dim})")
            c = 0
        for v in sec["values"]:
            a = np.zeros(dim)
            a[c] = float(v)
            pts.append(a)
    return pts


def parse_text(text: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"config is not valid TOML: {exc}", [f"<document>: {exc}"]) from exc


def validate_config(text_or_doc, seed_override: Optional[int] = None) -> RunConfig:
    """Resolve a TOML document (text or parsed dict) into a :class:`RunConfig`.

    Raises ConfigurationError whose ``errors`` lists every violation.
    """
    doc = parse_text(text_or_doc) if isinstance(text_or_doc, str) else dict(text_or_doc)
    errs = _Errors()
    errs.unknown(doc, _TOP, "")
    for name, allowed in _SECTIONS.items():
        if name in doc:
            if not isinstance(doc[name], dict):
                errs.add(name, "expected a table")
            else:
                errs.unknown(doc[name], allowed, f"{name}.")

    study = doc.get("study", "convergence")
    if study not in STUDIES:
        errs.add("study", f"must be one of {', '.join(STUDIES)}")
    T = _num(errs, doc, "T", "T", 1.0, positive=True)
    npaths = _num(errs, doc, "npaths", "npaths", 1000, integer=True)
    if isinstance(npaths, int) and npaths < MIN_PATHS:
        errs.add("npaths", f"npaths below minimum {MIN_PATHS}")
    seed = _num(errs, doc, "seed", "seed", 0, integer=True, required=seed_override is None)
    if seed_override is not None:
        seed = int(seed_override)
    if isinstance(seed, int) and not -(2**63) <= seed < 2**64:
        errs.add("seed", "must fit in 64 bits")
    steps = doc.get("steps", [])
    if not isinstance(steps, list) or not all(isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in steps):
        errs.add("steps", "expected a list of positive integers")
        steps = []
    elif any(b <= a for a, b in zip(steps, steps[1:])):
        errs.add("steps", "step counts must be strictly increasing")
    if study != "supermartingale" and not steps:
        errs.add("steps", "missing required key")
    mode = doc.get("mode", "auto")
    if mode not in ("auto", "affine", "mc"):
        errs.add("mode", "must be auto, affine or mc")
    resolution = _num(errs, doc, "resolution", "resolution", 0.3, positive=True)
    exact_tol = _num(errs, doc, "exact_tol", "exact_tol", 1e-12, positive=True)
    antithetic = doc.get("antithetic", False)
    if not isinstance(antithetic, bool):
        errs.add("antithetic", "expected true or false")

    # model
    model = None
    mdoc = doc.get("model")
    curve_grid = None
    if not isinstance(mdoc, dict) or "name" not in mdoc:
        errs.add("model.name", "missing required key")
    else:
        params = {k: v for k, v in mdoc.items() if k != "name"}
        name = mdoc["name"]
        if name == "HJM":
            if params:
                errs.add("model", "HJM parameters belong in the [hjm] table")
            hdoc = doc.get("hjm")
            if not isinstance(hdoc, dict):
                errs.add("hjm", "missing required table for model HJM")
            else:
                try:
                    curve_grid = CurveGrid(float(hdoc.get("x_max", 20.0)), int(hdoc.get("M", 256)),
                                           float(hdoc.get("alpha", 1.0)))
                    vols = []
                    for i, v in enumerate(hdoc.get("vols", [])):
                        if not isinstance(v, dict):
                            errs.add(f"hjm.vols[{i}]", "expected a table")
                            continue
                        errs.unknown(v, _VOL_KEYS, f"hjm.vols[{i}].")
                        vols.append(VolSpec(**{k: v[k] for k in v if k in _VOL_KEYS}))
                    if not vols:
                        errs.add("hjm.vols", "at least one vol is required")
                    else:
                        model = make_hjm_model(curve_grid, vols, float(hdoc.get("s", 2.0)))
                except (ConfigurationError, TypeError, ValueError) as exc:
                    errs.add("hjm", str(exc))
        elif name not in BUILTIN_MODELS:
            errs.add("model.name", f"unknown model {name!r}; known: {', '.join(BUILTIN_MODELS + ('HJM',))}")
        else:
            try:
                model = make_builtin(name, **params)
            except (ConfigurationError, TypeError, ValueError) as exc:
                errs.add("model", str(exc))

    # schemes
    schemes = []
    names = doc.get("schemes", ["euler", "nv"])
    if not isinstance(names, list) or not names:
        errs.add("schemes", "expected a non-empty list")
    elif model is not None:
        for i, nm in enumerate(names):
            if nm not in ("euler", "nv"):
                errs.add(f"schemes[{i}]", f"unknown scheme {nm!r}")
            else:
                schemes.append(scheme_by_name(nm, model.noise_dim))

    # payoff
    payoff = None
    pdoc = doc.get("payoff", {}) if isinstance(doc.get("payoff", {}), dict) else {}
    if study not in ("supermartingale", "pathwise"):
        kind = pdoc.get("kind")
        if kind is None:
            errs.add("payoff.kind", "missing required key")
        elif kind == "bond":
            if curve_grid is None:
                errs.add("payoff.kind", "bond payoff needs model HJM")
            else:
                try:
                    payoff = bond_payoff(curve_grid, float(pdoc.get("tau", 1.0)))
                except ConfigurationError as exc:
                    errs.add("payoff.tau", str(exc))
        else:
            try:
                payoff = Payoff(kind, coordinate=int(pdoc.get("coordinate", 0)),
                                coefficients=tuple(pdoc.get("coefficients", ())),
                                weights=pdoc.get("weights"))
                if model is not None and payoff.poly() is not None and payoff.coordinate >= model.dim:
                    errs.add("payoff.coordinate", f"outside state dimension {model.dim}")
            except ConfigurationError as exc:
                errs.add("payoff", str(exc))

    # weight
    weight = None
    wdoc = doc.get("weight", {}) if isinstance(doc.get("weight", {}), dict) else {}
    if curve_grid is not None:
        if "weight" in doc:
            errs.add("weight", "HJM uses the curve-norm weight; set hjm.s instead")
        weight = hjm_weight(curve_grid, float(doc["hjm"].get("s", 2.0)))
    elif model is not None:
        try:
            lvl = int(wdoc.get("level", 0))
            weight = WeightFunction(wdoc.get("family", "polynomial"), float(wdoc.get("param", 2.0)), lvl,
                                    tuple(model.spectrum) if lvl > 0 else None)
        except (ConfigurationError, TypeError, ValueError) as exc:
            errs.add("weight", str(exc))

    # grid
    grid: List[np.ndarray] = []
    if model is not None:
        if curve_grid is not None:
            levels = doc["hjm"].get("initial_levels", [0.05])
            grid = [np.full(model.dim, float(v)) for v in levels]
            if "grid" in doc:
                errs.add("grid", "HJM grids come from hjm.initial_levels")
        else:
            gdoc = doc.get("grid")
            if isinstance(gdoc, dict):
                grid = _grid_points(errs, gdoc, "grid", model.dim)
        if not grid:
            errs.add("grid", "initial-state grid must be nonempty")

    # reference and flows
    reference = ReferencePolicy()
    rdoc = doc.get("reference", {}) if isinstance(doc.get("reference", {}), dict) else {}
    try:
        reference = ReferencePolicy(rdoc.get("kind", "exact"), int(rdoc.get("factor", 8)),
                                    int(rdoc.get("path_factor", 10)), rdoc.get("coupling", "independent"))
    except (ConfigurationError, TypeError, ValueError) as exc:
        errs.add("reference", str(exc))
    flow = FlowConfig()
    fdoc = doc.get("flow", {}) if isinstance(doc.get("flow", {}), dict) else {}
    try:
        flow = FlowConfig(int(fdoc.get("substeps", 4)), "rk4", bool(fdoc.get("use_exact", True)))
    except (ConfigurationError, TypeError, ValueError) as exc:
        errs.add("flow", str(exc))

    run = dict(timepoints=[], sm_dt=1.0 / 128, fit_horizon=None, sm_scheme="nv", grid_large=[], max_ratio=1.5)
    if study == "supermartingale":
        sdoc = doc.get("supermartingale")
        if not isinstance(sdoc, dict) or "timepoints" not in sdoc:
            errs.add("supermartingale.timepoints", "missing required key")
        else:
            tps = [float(t) for t in sdoc["timepoints"]]
            if not tps or any(not 0 < t <= T for t in tps):
                errs.add("supermartingale.timepoints", "timepoints must lie in (0, T]")
            run["timepoints"] = tps
            run["sm_dt"] = float(sdoc.get("dt", 1.0 / 128))
            run["fit_horizon"] = sdoc.get("fit_horizon")
            run["sm_scheme"] = sdoc.get("scheme", "nv")
            if run["sm_scheme"] not in ("euler", "nv"):
                errs.add("supermartingale.scheme", "must be euler or nv")
    if study == "growth":
        gd = doc.get("growth")
        if not isinstance(gd, dict) or "values" not in gd:
            errs.add("growth.values", "missing required key")
        elif model is not None:
            run["grid_large"] = _grid_points(errs, {"values": gd["values"],
                                                    "coordinate": doc.get("grid", {}).get("coordinate", 0)},
                                             "growth", model.dim)
            run["max_ratio"] = float(gd.get("max_ratio", 1.5))
    if study != "supermartingale" and len(steps) < 3 and study in ("convergence", "growth"):
        errs.add("steps", "a convergence study needs at least three step-count levels")

    if errs.items:
        raise ConfigurationError("; ".join(errs.items), errs.items)

    exp = ExperimentConfig(
        model=model, schemes=schemes, payoff=payoff, weight=weight, T=float(T), levels=list(steps),
        npaths=int(npaths), grid=grid, seed=int(seed), reference=reference, flow=flow, mode=mode,
        resolution=float(resolution), exact_tol=float(exact_tol), antithetic=antithetic, raw=doc,
    )
    return RunConfig(study=study, experiment=exp, curve_grid=curve_grid, doc=doc, **run)


def load_config(path, seed_override: Optional[int] = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return validate_config(fh.read(), seed_override)
