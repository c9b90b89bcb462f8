"""Command-line entry point: ``optimize``, ``fair``, ``check-gradients`` and ``export-geometry``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import SolverError
from .config import ConfigError, RunConfig, build_problem, build_shell, load_config, parse_config
from .density import (
    DensityConfigError,
    DensityField,
    load_field,
    mean_element_length,
    neighborhood_matrix,
    save_field,
)
from .export import write_vtk
from .fairing import FairingConfig, FairingError, fair_boundaries, write_curves_json, write_svg
from .geometry import build_multilevel, surface_to_dict
from .optimize import DesignPipeline, OptimizationError, run
from .sensitivities import compliance_gradient, fd_gradient_check, local_volume_gradient, volume_gradient, write_gradient_csv

log = logging.getLogger("igashell")

__all__ = ["main", "run_cli"]


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="igashell", description="Density-based topology optimisation of NURBS shells.")
    ap.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="run the optimisation, then fair the boundaries")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
    p.add_argument("--checkpoint-every", type=int, default=0, metavar="K", help="save the field every K iterations")
    p.add_argument("--no-fair", action="store_true", help="skip boundary fairing")
    p.add_argument("--gradients", action="store_true", help="also write the final gradients as CSV")

    f = sub.add_parser("fair", help="extract and fair boundaries of a saved density field")
    f.add_argument("--field", required=True, type=Path)
    f.add_argument("--config", type=Path, default=None, help="fairing parameters are read from here")
    f.add_argument("--out", type=Path, default=None)

    g = sub.add_parser("check-gradients", help="compare adjoint gradients with central differences")
    g.add_argument("--config", required=True, type=Path)
    g.add_argument("--samples", type=int, default=10)
    g.add_argument("--step", type=float, default=1e-5)
    g.add_argument("--tau", type=float, default=None, help="projection sharpness (default: tau_start)")
    g.add_argument("--out", type=Path, default=None, help="write gradients.csv here")

    e = sub.add_parser("export-geometry", help="write the analysis mesh of the configured geometry")
    e.add_argument("--config", type=Path, default=None)
    e.add_argument("--out", type=Path, default=None)
    for q in (p, f, g, e):
        q.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="BLAS thread limit")
    return ap


def _thread_limit(n: int | None):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _out_dir(args: argparse.Namespace, cfg: RunConfig | None, default: str = "out") -> Path:
    out = args.out if args.out is not None else Path(cfg["output_dir"] if cfg is not None else default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config_echo(out: Path, cfg: RunConfig) -> None:
    (out / "config.json").write_text(cfg.to_json() + "\n")


def _fair_and_write(fld: DensityField, fcfg: FairingConfig, out: Path, meta: dict) -> list:
    grid, curves = fair_boundaries(fld, fcfg)
    write_svg(out / "contours.svg", grid, curves)
    write_curves_json(out / "curves.json", curves, meta)
    log.info("faired %d boundary curve(s)", len(curves))
    return curves


def _cmd_optimize(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    _write_config_echo(out, cfg)
    problem = build_problem(cfg)
    meta = {"config": cfg.data}

    def checkpoint(it, fld, rec):
        if args.checkpoint_every and it % args.checkpoint_every == 0:
            save_field(fld, out / "checkpoint_field.json", {**meta, "iteration": it})

    try:
        res = run(problem, callback=checkpoint)
    except OptimizationError as exc:
        exc.history.write_csv(out / "history.csv")
        raise
    res.history.write_csv(out / "history.csv")
    res.history.write_timings(out / "timings.csv")
    save_field(res.field, out / "field.json", meta)
    polylines = []
    if cfg["fairing"]["enabled"] and not args.no_fair:
        polylines = [c.physical for c in _fair_and_write(res.field, cfg.fairing, out, meta)]
    write_vtk(out / "mesh.vtk", problem.multilevel.analysis.mid_surface, res.final.rho_e, polylines)
    if args.gradients:
        write_gradient_csv(out / "gradients.csv", problem.multilevel.design_basis.shape[:2], {"dC": res.final.dC, "dV": res.final.dV})
    last = res.history.records[-1]
    print(
        f"iterations {len(res.history)}  converged {res.converged}  compliance {res.final.compliance:.6g}  "
        f"V/Vs {last.volume_fraction:.4f}  grayscale {last.grayscale:.3f}"
    )
    print(f"outputs written to {out}")
    return 0


def _cmd_fair(args: argparse.Namespace) -> int:
    if not args.field.exists():
        raise FileNotFoundError(f"field file not found: {args.field}")
    fld = load_field(args.field)
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        with open(args.field) as fh:
            echoed = json.load(fh).get("meta", {}).get("config")
        cfg = parse_config(echoed or {})
    out = args.out if args.out is not None else args.field.parent
    out.mkdir(parents=True, exist_ok=True)
    n = len(_fair_and_write(fld, cfg.fairing, out, {"field": str(args.field), "fairing": cfg.data["fairing"]}))
    print(f"{n} boundary curve(s) written to {out}")
    return 0


def _cmd_check_gradients(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    problem = build_problem(cfg)
    pipe = DesignPipeline(problem)
    W = pipe.W
    if W is None:
        delta = mean_element_length(pipe.model.areas)
        W = neighborhood_matrix(pipe.model.centroids, pipe.model.Ve0, cfg.local.radius * delta)
    rng = np.random.default_rng(cfg["seed"])
    n = pipe.P.shape[1]
    x = rng.uniform(0.2, 0.8, n)
    tau = cfg.continuation.tau_start if args.tau is None else args.tau
    kappa, gamma = pipe.kappa, cfg.local.gamma
    idx = rng.choice(n, size=min(args.samples, n), replace=False)
    U = pipe.model.solve(pipe.element_densities(x, tau))
    dC = compliance_gradient(pipe.model, U, pipe.P, x, tau, kappa)
    dV = volume_gradient(pipe.model.Ve0, pipe.P, x, tau, kappa)
    _, dVbar = local_volume_gradient(W, pipe.P, x, tau, kappa, gamma)

    def vbar(z):
        return local_volume_gradient(W, pipe.P, z, tau, kappa, gamma)[0]

    reports = {
        "compliance": fd_gradient_check(lambda z: pipe.compliance(z, tau), x, dC, idx, args.step),
        "volume": fd_gradient_check(lambda z: pipe.volume(z, tau), x, dV, idx, args.step),
        "local_volume": fd_gradient_check(vbar, x, dVbar, idx, args.step),
    }
    for name, rep in reports.items():
        print(f"{name:14s} max relative error {rep.max_rel_error:.3e}  ({len(idx)} coefficients)")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_gradient_csv(args.out / "gradients.csv", problem.multilevel.design_basis.shape[:2], {"dC": dC, "dV": dV, "dVbar": dVbar})
    return 0


def _cmd_export_geometry(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config is not None else parse_config({})
    out = _out_dir(args, cfg)
    shell = build_shell(cfg)
    ml = build_multilevel(shell, tuple(cfg["design_spans"]), tuple(cfg["analysis_spans"]))
    surf = ml.analysis.mid_surface
    write_vtk(out / "geometry.vtk", surf, title=f"{cfg['geometry']['preset']} analysis mesh")
    (out / "geometry.json").write_text(json.dumps(surface_to_dict(ml.cad.mid_surface)))
    _write_config_echo(out, cfg)
    print(f"geometry written to {out}")
    return 0


_COMMANDS = {
    "optimize": _cmd_optimize,
    "fair": _cmd_fair,
    "check-gradients": _cmd_check_gradients,
    "export-geometry": _cmd_export_geometry,
}


def run_cli(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv`` and run the subcommand; returns the process exit code."""
    level = os.environ.get("IGA_TOPOPT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for attr in ("config", "field"):
        path = getattr(args, attr, None)
        if path is not None and not path.exists():
            ap.print_usage(sys.stderr)
            print(f"igashell: error: --{attr} file not found: {path}", file=sys.stderr)
            return 2
    try:
        with _thread_limit(args.threads):
            return _COMMANDS[args.command](args)
    except (ConfigError, DensityConfigError, FairingError) as exc:
        print(f"igashell: error: {exc}", file=sys.stderr)
        return 2
    except (OptimizationError, SolverError, FileNotFoundError, ValueError) as exc:
        print(f"igashell: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())
