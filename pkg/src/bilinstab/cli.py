"""Command line front end.

Exit codes: 0 success, 1 mathematical failure (hypothesis, moment solve,
integration, contraction), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .models import CATALOG, QuadratureNotConverged, hypothesis_check, load_model
from .moments import MomentError, build_biorthogonal, control_norm_certificate, synthesize_null_control
from .simulator import IntegrationError, integrate_bilinear
from .spectral import gap_alpha, shift_to_zero_ground
from .stabilization import (
    FitError,
    basin_probe,
    dumps_report,
    fit_constants,
    run_report,
    run_stabilization,
    window_csv,
)

EXIT_OK, EXIT_MATH, EXIT_CONFIG = 0, 1, 2
REPORT_SCHEMA = "bilinstab.report/1"


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class _Ctx:
    def __init__(self, args, cfg: RunConfig):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out or cfg.out_dir)

    def say(self, *lines):
        if not self.args.quiet:
            for line in lines:
                print(line)

    def write(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(text)
        return path

    def report(self, command: str, body: dict) -> dict:
        return {"schema": REPORT_SCHEMA, "command": command, "timestamp": _timestamp(),
                "config": self.cfg.to_dict(), **body}


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, perturbation=replace(cfg.perturbation, seed=args.seed))
    if args.precision is not None:
        cfg = replace(cfg, precision=args.precision)
    return cfg


def cmd_models(ctx: _Ctx) -> int:
    ctx.say(f"{'id':<14} {'lambda_1':>14} {'alpha':>12} {'C_B':>10}   (N=8)")
    rows = {}
    for mid in CATALOG:
        m = load_model(mid, 8)
        alpha = gap_alpha(m.eigenvalues)
        rows[mid] = {"lambda1": m.lambda1, "alpha": alpha, "C_B": m.operator_norm}
        ctx.say(f"{mid:<14} {m.lambda1:>14.10g} {alpha:>12.8g} {m.operator_norm:>10.6g}")
    if ctx.args.out:
        ctx.write("models.json", json.dumps({"schema": REPORT_SCHEMA, "models": rows}, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_check(ctx: _Ctx) -> int:
    cfg = ctx.cfg
    model = cfg.build()
    rep = hypothesis_check(model, cfg.control.tau, b_floor=cfg.tolerances.b_floor * model.operator_norm)
    ctx.say(f"model {model.name}, N={model.truncation}", *rep.lines())
    body = {
        "passed": rep.passed,
        "alpha": rep.alpha,
        "gap_ok": rep.gap_ok,
        "coupling_ok": rep.coupling_ok,
        "series_ok": rep.series_ok,
        "min_abs_coupling": rep.min_abs_coupling,
        "argmin_index": rep.argmin_index,
        "zero_couplings": list(rep.zero_couplings),
        "partial_sum": rep.partial_sum,
        "tail_estimate": rep.tail_estimate,
        "lambda1": model.lambda1,
        "ground_coupling": [float(b) for b in model.ground_coupling],
    }
    ctx.write("check.json", dumps_report(ctx.report("check", body)))
    return EXIT_OK if rep.passed else EXIT_MATH


def _control(cfg: RunConfig):
    model = cfg.build()
    shifted = shift_to_zero_ground(model)
    v0 = cfg.v0(model.truncation)
    fam = build_biorthogonal(shifted.eigenvalues, cfg.control.T, tol=cfg.tolerances.moment,
                             precision=cfg.precision)
    p = synthesize_null_control(shifted, v0, cfg.control.T, fam,
                                b_floor=cfg.tolerances.b_floor * model.operator_norm)
    return model, shifted, v0, fam, p


def cmd_control(ctx: _Ctx) -> int:
    model, shifted, v0, fam, p = _control(ctx.cfg)
    cert = control_norm_certificate(p, shifted, v0, fam)
    ctx.write("control_table.txt", p.sample_table())
    ctx.write("control_coeffs.txt", p.coefficient_text())
    body = {
        "model": model.name,
        "v0": [float(x) for x in v0],
        "l2_norm": cert.l2_norm,
        "bound": cert.bound,
        "lambda_hat": cert.lambda_hat,
        "certificate_holds": cert.holds,
        "moments": [float(x) for x in p.moments()],
        "family": {"residual": fam.residual, "quadrature_residual": fam.quadrature_residual,
                   "condition_estimate": fam.condition_estimate, "precision": fam.precision},
    }
    ctx.write("control.json", dumps_report(ctx.report("control", body)))
    ctx.say(f"||p||_L2 = {cert.l2_norm:.6e} <= Lambda_hat ||v0|| = {cert.bound:.6e}"
            f"  [{'ok' if cert.holds else 'FAIL'}]")
    return EXIT_OK if cert.holds else EXIT_MATH


def cmd_simulate(ctx: _Ctx) -> int:
    cfg = ctx.cfg
    model, shifted, v0, fam, p = _control(cfg)
    u0 = cfg.u0(model.truncation)
    T = cfg.control.T
    traj = integrate_bilinear(model, p, u0, (0.0, T), cfg.integrator)
    ref = integrate_bilinear(model, p, u0, (0.0, T), cfg.integrator.reference)
    err = float(np.linalg.norm(traj.coeffs[-1] - ref.coeffs[-1]))
    ctx.write("trajectory.txt", traj.to_table())
    psi = np.exp(-model.lambda1 * T)
    dist = float(np.linalg.norm(traj.coeffs[-1] - psi * np.eye(model.truncation)[0]))
    body = {
        "model": model.name,
        "T": T,
        "endpoint": [float(x) for x in traj.coeffs[-1]],
        "reference_error": err,
        "reference_ok": err <= cfg.integrator.tol,
        "distance_to_ground_state": dist,
    }
    ctx.write("simulate.json", dumps_report(ctx.report("simulate", body)))
    ctx.say(f"endpoint error vs reference = {err:.3e} (tol {cfg.integrator.tol:.1e})",
            f"||u(T) - psi_1(T)|| = {dist:.6e}")
    return EXIT_OK if err <= cfg.integrator.tol else EXIT_MATH


def cmd_stabilize(ctx: _Ctx) -> int:
    cfg = ctx.cfg
    model = cfg.build()
    run = run_stabilization(model, cfg.u0(model.truncation), cfg.control.T, cfg.control.windows,
                            cfg.stabilization())
    fit, fit_error = None, ""
    try:
        fit = fit_constants(run)
    except FitError as exc:
        fit_error = str(exc)
    rep = run_report(run, fit, fit_error, config=cfg.to_dict(), timestamp=_timestamp())
    ctx.write("stabilize.json", dumps_report(rep))
    ctx.write("windows.csv", window_csv(run))
    for w in run.windows:
        ctx.say(f"n={w.index}  ||v(nT)||={w.v_norm_start:.6e}  ||p||={w.control_l2:.6e}")
    ctx.say(f"final ||v|| = {run.v_norms[-1]:.6e}")
    if fit is not None:
        ctx.say(f"K_hat={fit.K_hat:.6g}  omega_hat={fit.omega:.6g}  omega_T={fit.omega_T:.6g}"
                f"  theta={fit.theta:.4g}")
    elif fit_error:
        ctx.say(f"fit skipped: {fit_error}")
    if run.failed:
        print(f"contraction failure: {run.failure}", file=sys.stderr)
        return EXIT_MATH
    return EXIT_OK


def cmd_probe(ctx: _Ctx) -> int:
    cfg = ctx.cfg
    model = cfg.build()
    r = basin_probe(model, cfg.control.T, cfg.stabilization(), seed=cfg.perturbation.seed)
    body = {"model": model.name, "T": cfg.control.T, "seed": cfg.perturbation.seed, "radius": r}
    ctx.write("probe.json", dumps_report(ctx.report("probe", body)))
    ctx.say(f"empirical stabilizability radius R_hat = {r:.6g}")
    return EXIT_OK


COMMANDS = {
    "models": cmd_models,
    "check": cmd_check,
    "control": cmd_control,
    "simulate": cmd_simulate,
    "stabilize": cmd_stabilize,
    "probe": cmd_probe,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bilinstab", description="Bilinear stabilization of parabolic equations.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="TOML run configuration")
    ap.add_argument("--out", help="output directory (overrides [output] dir)")
    ap.add_argument("--seed", type=int, help="perturbation seed (overrides the config)")
    ap.add_argument("--precision", choices=("double", "extended"))
    ap.add_argument("--quiet", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        ctx = _Ctx(args, cfg)
        return COMMANDS[args.command](ctx)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MomentError, IntegrationError, QuadratureNotConverged, FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MATH


if __name__ == "__main__":
    sys.exit(main())
