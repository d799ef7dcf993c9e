"""Command-line entry point.

Exit codes: 0 success, 1 a built-in check failed, 2 configuration or argument error,
3 numerical overflow, 4 inconclusive convergence fit.  Failures also write
``error.json`` into the output directory and print the same record to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import CapabilityError, ConfigurationError, InconclusiveResultError, NumericalOverflowError
from .hjm import curve_snapshots, h_alpha_norm_values
from .models import BUILTIN_MODELS, builtin_defaults
from .montecarlo import (
    ErrorReport,
    convergence_study,
    growth_control_ratios,
    oracle_equivalence,
    pathwise_exactness,
    supermartingale_check,
)
from .splitting import nv_scheme, scheme_by_name
from .streams import Stream

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_OVERFLOW, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4

ERROR_HEADER = ["scheme", "nsteps", "dt", "grid_point", "raw_error", "weighted_error", "stderr", "argmax_flag"]
SUMMARY_HEADER = ["scheme", "slope", "residual", "levels_used"]


def fmt(v) -> str:
    """Round-trip exact text for CSV cells."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return ";".join(fmt(x) for x in v)
    return str(v)


def write_csv(path: Path, header: List[str], rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def write_report(out: Path, report: ErrorReport, stem: str = "") -> Dict[str, str]:
    paths = {
        f"{stem}errors": write_csv(out / f"{stem}errors.csv", ERROR_HEADER, report.rows()),
        f"{stem}summary": write_csv(out / f"{stem}summary.csv", SUMMARY_HEADER, report.summary_rows()),
    }
    return {k: str(v) for k, v in paths.items()}


def write_grid(out: Path, grid, weight, name="grid.csv") -> str:
    rows = [(g, float(weight(x)), list(np.atleast_1d(x))) for g, x in enumerate(grid)]
    return str(write_csv(out / name, ["grid_point", "psi", "x0"], rows))


class Manifest:
    """Run manifest, written before any result and rewritten on every exit path."""

    def __init__(self, out: Path, command: str, cfg: Optional[RunConfig], config_path: Optional[str]):
        self.path = out / "manifest.json"
        self.data = {
            "command": command,
            "config": config_path,
            "config_hash": cfg.config_hash if cfg else None,
            "seed": cfg.experiment.seed if cfg else None,
            "version": __version__,
            "outputs": {},
            "wall_clock": {},
            "status": "running",
        }
        if cfg is not None and cfg.experiment.payoff is not None and cfg.experiment.payoff.poly() is not None:
            from .montecarlo import ASSUMPTION_NOTE

            self.data["assumptions"] = [ASSUMPTION_NOTE]
        self.flush()

    def flush(self):
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def finish(self, status: str, outputs=None, wall=None):
        self.data["status"] = status
        self.data["outputs"].update(outputs or {})
        self.data["wall_clock"].update(wall or {})
        self.flush()


def _error_record(out: Optional[Path], code: int, exc: BaseException) -> None:
    rec = {"exit_code": code, "type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigurationError):
        rec["errors"] = exc.errors
    if isinstance(exc, NumericalOverflowError):
        rec.update(step=exc.step, substep=exc.substep, path=exc.path)
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    if out is not None:
        with open(out / "error.json", "w", encoding="utf-8") as fh:
            json.dump(rec, fh, indent=2, sort_keys=True)
            fh.write("\n")


def bundled_configs() -> List[str]:
    return sorted(p.name[:-5] for p in resources.files("splitweak").joinpath("configs").iterdir()
                  if p.name.endswith(".toml"))


def resolve_config_path(name: str) -> str:
    if os.path.exists(name):
        return name
    cand = resources.files("splitweak").joinpath("configs", name if name.endswith(".toml") else name + ".toml")
    if cand.is_file():
        return str(cand)
    raise ConfigurationError(f"config {name!r} not found (bundled: {', '.join(bundled_configs())})")


# ------------------------------------------------------------------ studies


def _convergence(cfg: RunConfig, out: Path, workers: int) -> tuple:
    exp = cfg.experiment
    outputs = {"grid": write_grid(out, exp.grid, exp.weight)}
    study = cfg.study
    if study == "convergence":
        try:
            report = convergence_study(exp, workers)
        except InconclusiveResultError as exc:
            if exc.report is not None:
                outputs.update(write_report(out, exc.report))
            exc.outputs = outputs
            raise
        outputs.update(write_report(out, report))
        for name, fit in report.fits.items():
            label = "exact" if fit.exact else f"slope={fit.slope:.4f}"
            print(f"{name}: {label} levels={fit.levels_used}")
        return outputs, EXIT_OK
    if study == "equivalence":
        rows = oracle_equivalence(exp.model, exp.flow, exp.schemes, exp.payoff, exp.T, exp.levels, exp.grid,
                                  exp.npaths, exp.seed, workers)
        header = ["scheme", "nsteps", "grid_point", "mc_mean", "mc_stderr", "affine_value", "zscore", "within_3se"]
        outputs["equivalence"] = str(write_csv(out / "equivalence.csv", header, (
            (r.scheme, r.nsteps, r.grid_point, r.mc_mean, r.mc_stderr, r.affine_value, r.zscore, r.zscore <= 3.0)
            for r in rows)))
        worst = max(r.zscore for r in rows)
        print(f"max |z| = {worst:.3f} over {len(rows)} comparisons")
        return outputs, EXIT_OK if worst <= 3.0 else EXIT_CHECK
    if study == "growth":
        base = convergence_study(exp, workers)
        from dataclasses import replace

        large = convergence_study(replace(exp, grid=cfg.grid_large), workers)
        outputs.update(write_report(out, base))
        outputs.update(write_report(out, large, "extended_"))
        outputs["extended_grid"] = write_grid(out, cfg.grid_large, exp.weight, "extended_grid.csv")
        ratios = growth_control_ratios(base.levels, large.levels)
        rows = [(s, n, base.level(s, n).error, large.level(s, n).error, r, r <= cfg.max_ratio)
                for (s, n), r in ratios.items()]
        outputs["growth"] = str(write_csv(out / "growth.csv",
                                          ["scheme", "nsteps", "error_base", "error_extended", "ratio", "within_bound"],
                                          rows))
        worst = max(ratios.values())
        print(f"max growth ratio = {worst:.6f} (bound {cfg.max_ratio})")
        return outputs, EXIT_OK if worst <= cfg.max_ratio else EXIT_CHECK
    if study == "pathwise":
        res = {}
        for g, x0 in enumerate(exp.grid):
            for (s, n), e in pathwise_exactness(exp.model, exp.flow, exp.schemes, exp.T, exp.levels, x0,
                                                exp.npaths, exp.seed + g).items():
                res[s, n, g] = e
        outputs["pathwise"] = str(write_csv(out / "pathwise.csv", ["scheme", "nsteps", "grid_point", "max_abs_error"],
                                            ((s, n, g, e) for (s, n, g), e in res.items())))
        worst = max(res.values())
        print(f"max pathwise error = {worst:.3e}")
        return outputs, EXIT_OK if worst < 1e-12 else EXIT_CHECK
    raise ConfigurationError(f"study {study!r} is not run by the convergence command")


def _supermartingale(cfg: RunConfig, out: Path, workers: int) -> tuple:
    exp = cfg.experiment
    if cfg.study != "supermartingale":
        raise ConfigurationError("supermartingale command needs study = \"supermartingale\"")
    rep = supermartingale_check(
        exp.model, exp.flow, exp.weight, exp.T, exp.grid, exp.npaths, cfg.timepoints, exp.seed,
        scheme_by_name(cfg.sm_scheme, exp.model.noise_dim), cfg.sm_dt, cfg.fit_horizon, workers,
    )
    outputs = {"grid": write_grid(out, exp.grid, exp.weight)}
    outputs["supermartingale"] = str(write_csv(
        out / "supermartingale.csv", ["t", "grid_point", "ratio", "rel_stderr", "bound", "violation"],
        ((r.t, r.grid_point, r.ratio, r.rel_stderr, r.bound, r.violation) for r in rep.rows)))
    outputs["omega"] = str(write_csv(out / "omega.csv", ["omega", "violations"], [(rep.omega, len(rep.violations))]))
    print(f"omega_hat = {rep.omega:.6f}, violations = {len(rep.violations)}")
    ok = np.isfinite(rep.omega) and not rep.violations
    return outputs, EXIT_OK if ok else EXIT_CHECK


def _hjm_demo(cfg: RunConfig, out: Path, workers: int, debug_norm: bool) -> tuple:
    exp = cfg.experiment
    if cfg.curve_grid is None:
        raise ConfigurationError("hjm-demo needs model HJM")
    grid = cfg.curve_grid
    x = grid.x
    nfine = max(exp.levels)
    rng = Stream(exp.seed).child(9).block(0)
    snaps = curve_snapshots(exp.model, exp.flow, nv_scheme(exp.model.noise_dim), grid, exp.grid[0], exp.T, nfine,
                            rng, every=max(1, nfine // 4))
    times = [exp.T * i / (len(snaps) - 1) for i in range(len(snaps))]
    outputs = {"curves": str(write_csv(out / "curves.csv", ["t", "x", "value"],
                                       ((t, xi, v) for t, s in zip(times, snaps) for xi, v in zip(x, s))))}
    if debug_norm:
        rows = [(t, float(h_alpha_norm_values(s, grid.h, grid.alpha, "derivative")),
                 float(h_alpha_norm_values(s, grid.h, grid.alpha, "value"))) for t, s in zip(times, snaps)]
        outputs["norms"] = str(write_csv(out / "norms.csv", ["t", "norm_derivative", "norm_value"], rows))
    res, code = _convergence(cfg, out, workers)
    outputs.update(res)
    return outputs, code


def run(command: str, config: Optional[str], out: Optional[str], seed: Optional[int] = None, workers: int = 1,
        debug_hjm_norm: bool = False) -> int:
    """Execute one command; returns the process exit status."""
    if command == "list-models":
        for name in BUILTIN_MODELS:
            print(f"{name} {json.dumps(builtin_defaults(name), sort_keys=True)}")
        print("HJM {\"x_max\": 20.0, \"M\": 256, \"alpha\": 1.0, \"s\": 2.0}")
        return EXIT_OK
    if command == "selftest":
        from .selftest import run_selftest

        return EXIT_OK if run_selftest() else EXIT_CHECK
    out_dir = Path(out or "out")
    out_dir.mkdir(parents=True, exist_ok=True)
    if config is None:
        _error_record(out_dir, EXIT_CONFIG, ConfigurationError("--config is required"))
        return EXIT_CONFIG
    manifest = None
    t0 = time.perf_counter()
    try:
        path = resolve_config_path(config)
        cfg = load_config(path, seed)
        manifest = Manifest(out_dir, command, cfg, path)
        if command == "convergence":
            outputs, code = _convergence(cfg, out_dir, workers)
        elif command == "supermartingale":
            outputs, code = _supermartingale(cfg, out_dir, workers)
        elif command == "hjm-demo":
            outputs, code = _hjm_demo(cfg, out_dir, workers, debug_hjm_norm)
        else:
            raise ConfigurationError(f"unknown command {command!r}")
        manifest.finish("ok" if code == EXIT_OK else "check-failed", outputs, {command: time.perf_counter() - t0})
        return code
    except (ValueError, CapabilityError, NumericalOverflowError, InconclusiveResultError) as caught:
        exc = caught
    code = {NumericalOverflowError: EXIT_OVERFLOW, InconclusiveResultError: EXIT_INCONCLUSIVE}.get(
        type(exc), EXIT_CONFIG)
    if manifest is None:
        manifest = Manifest(out_dir, command, None, config)
    manifest.finish(f"error:{code}", getattr(exc, "outputs", {}), {command: time.perf_counter() - t0})
    _error_record(out_dir, code, exc)
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="splitweak", description="Weak-order studies for splitting schemes.")
    ap.add_argument("command", choices=["convergence", "supermartingale", "hjm-demo", "list-models", "selftest"])
    ap.add_argument("--config", help="TOML config path or bundled config name")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--workers", type=int, default=1, help="worker threads (never changes results)")
    ap.add_argument("--debug-hjm-norm", action="store_true", help="also write the value-based curve norm")
    args = ap.parse_args(argv)
    return run(args.command, args.config, args.out, args.seed, max(1, args.workers), args.debug_hjm_norm)


if __name__ == "__main__":
    sys.exit(main())
