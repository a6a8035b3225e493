"""Batch driver: configure a flow scale, run verification suites and
scaling experiments, export reports.

Subcommands
-----------
verify-bounds   symbol scan plus the randomized two-sided action bound
stokes          contour-shift identity on a small unit lattice
scaling         nonperturbative decay experiments over a coupling grid
rg-step         full coarse-graining integral against its approximation
export-operators  dump the operator suite and the kinetic symbol scan

All commands accept --config (JSON, deep-merged over the defaults),
--seed, --budget and --out.  Outputs are CSV tables, a JSON manifest
carrying the config hash and the seed, and rendered figures.  CSV
content is bit-identical for a fixed config and seed.

Exit codes: 0 pass, 1 violation, 2 usage error, 3 inconclusive.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import reports
from .action import proposition1_scan, symbol_constants
from .domains import sample_An_batch, sample_checkInt
from .experiments import (
    EXPERIMENT_KINDS,
    ExperimentError,
    error_scaling_experiment,
    params_for,
    rg_step_comparison,
)
from .interaction import Interaction
from .lattice import LatticeError, coarse_lattice, unit_lattice
from .operators import FlowParams, ParamsError, RGOperators, save_linop
from .quadrature import QuadratureError, stokes_identity_check

__all__ = ["RunConfig", "load_config", "main", "build_parser",
           "EXIT_PASS", "EXIT_VIOLATION", "EXIT_USAGE",
           "EXIT_INCONCLUSIVE"]

EXIT_PASS = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2
EXIT_INCONCLUSIVE = 3

DEFAULT_CONFIG = {
    "params": {
        "v0": 1e-3, "n": 1, "L": 2, "eps": 0.1, "c0": 0.1, "a": 1.0,
        "lambda_scale": 1.0, "mu_scale": 1.0, "eta": 0.8,
        "eta_prime": 0.7,
    },
    "lattice": {"spatial_dim": 1, "extents": [4, 2]},
    "interaction": {"kind": "local-quartic"},
    "verify_bounds": {"samples": 300, "delta": 0.1},
    "stokes": {"extents": [1, 1], "lambda_zero": False,
               "break_branch": False},
    "scaling": {"kinds": ["step2"], "grid": None, "template": None},
    "rg_step": {"extents": [1, 1], "v0": 1e-4, "tolerance": None,
                "control": False},
}

# FlowParams fields that a config may pin directly; applied through
# replace() so every invariant is re-validated at load time
_DIRECT_PARAM_KEYS = ("mu_n", "lambda_n", "kappa_n", "kappa_prime_n",
                      "r_n", "a_n")


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved run: flow parameters, lattice and interaction
    specs, and the per-command sections of the merged config."""

    params: FlowParams
    spatial_dim: int
    extents: tuple
    interaction: Interaction
    raw: dict

    def section(self, name: str) -> dict:
        return self.raw.get(name, {})


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path: str | None) -> RunConfig:
    """Merge a JSON config file over the defaults and build the run
    objects, re-validating every flow-parameter invariant."""
    raw = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise UsageError("config must be a JSON object")
        raw = _deep_merge(raw, user)
    psec = dict(raw["params"])
    direct = {k: psec.pop(k) for k in _DIRECT_PARAM_KEYS if k in psec}
    try:
        params = FlowParams.default(**psec)
        if direct:
            params = params.replace(**direct)
    except (ParamsError, TypeError) as exc:
        raise UsageError(f"params: {exc}") from exc
    lsec = raw["lattice"]
    try:
        spatial_dim = int(lsec["spatial_dim"])
        extents = tuple(int(e) for e in lsec["extents"])
        # the coarse sublattice must exist too, or every command fails
        coarse_lattice(unit_lattice(spatial_dim, extents, params.L))
    except (KeyError, LatticeError, ValueError, TypeError) as exc:
        raise UsageError(f"lattice: {exc}") from exc
    isec = raw["interaction"]
    try:
        inter = Interaction(kind=isec.get("kind", "local-quartic"),
                            lambda_n=isec.get("lambda_n",
                                              params.lambda_n))
    except ValueError as exc:
        raise UsageError(f"interaction: {exc}") from exc
    return RunConfig(params=params, spatial_dim=spatial_dim,
                     extents=extents, interaction=inter, raw=raw)


def _outdir(args) -> str:
    out = args.out or "reports"
    os.makedirs(out, exist_ok=True)
    return out


def _finish(config, args, command, files, extras, started) -> None:
    out = _outdir(args)
    reports.write_manifest(
        os.path.join(out, f"{command}_manifest.json"), command,
        config.raw, args.seed, args.budget,
        [os.path.basename(f) for f in files], extras,
        time.time() - started)


def cmd_verify_bounds(config: RunConfig, args) -> int:
    started = time.time()
    sec = config.section("verify_bounds")
    samples = args.samples if args.samples is not None \
        else int(sec.get("samples", 300))
    if samples <= 0:
        raise UsageError("--samples must be a positive integer")
    delta = float(sec.get("delta", 0.1))
    params, inter = config.params, config.interaction
    unit = unit_lattice(config.spatial_dim, config.extents, params.L)
    ops = RGOperators(params, unit)
    constants = symbol_constants(params, ops)
    rng = np.random.default_rng(args.seed)
    psis = sample_An_batch(params, unit, rng, samples)
    scan = proposition1_scan(psis, params, inter, delta, ops, constants)
    out = _outdir(args)
    rows = [(i, scan["re_An"][i], scan["lower"][i], scan["upper"][i],
             min(scan["re_An"][i] - scan["lower"][i],
                 scan["upper"][i] - scan["re_An"][i]))
            for i in range(samples)]
    csv_path = reports.write_csv(
        os.path.join(out, "bounds.csv"),
        ["sample", "re_An", "lower", "upper", "margin"], rows)
    fig_path = reports.plot_bound_margins(
        os.path.join(out, "bounds.png"), scan["re_An"], scan["lower"],
        scan["upper"])
    symbol_bad = constants["min_re_nonzero"] <= 0
    extras = {
        "violations": scan["violations"],
        "min_margin": scan["min_margin"],
        "gamma_grad": constants["gamma_grad"],
        "gamma_tilde_grad": constants["gamma_tilde_grad"],
        "min_re_symbol_nonzero": constants["min_re_nonzero"],
        "delta": delta,
        "samples": samples,
    }
    _finish(config, args, "verify-bounds", [csv_path, fig_path], extras, started)
    ok = scan["violations"] == 0 and not symbol_bad
    print(f"verify-bounds: {samples} samples, "
          f"{scan['violations']} violations, "
          f"min margin {scan['min_margin']:.3e} -> "
          f"{'pass' if ok else 'FAIL'}")
    return EXIT_PASS if ok else EXIT_VIOLATION


def cmd_stokes(config: RunConfig, args) -> int:
    started = time.time()
    sec = config.section("stokes")
    extents = tuple(int(e) for e in sec.get("extents", (1, 1)))
    params = config.params
    if sec.get("lambda_zero", False):
        params = params.replace(lambda_n=0.0)
    unit = unit_lattice(1, extents, params.L)
    if unit.nsites > 2:
        raise UsageError("stokes needs a unit lattice with at most 2 "
                         "sites")
    ops = RGOperators(params, unit)
    rng = np.random.default_rng(args.seed)
    theta = sample_checkInt(params, ops.coarse, rng, scale=0.5)
    budget = args.budget or 60000
    rep = stokes_identity_check(
        theta, params, budget=budget, ops=ops, seed=args.seed,
        break_branch=bool(sec.get("break_branch", False)))
    out = _outdir(args)
    rows = [(name, rep[name].value.real, rep[name].value.imag,
             rep[name].log_abs, rep[name].abs_error,
             rep[name].evaluations)
            for name in ("top", "sbot", "annulus", "wall")]
    csv_path = reports.write_csv(
        os.path.join(out, "stokes.csv"),
        ["part", "re", "im", "log_abs", "abs_error", "evaluations"],
        rows)
    fig_path = reports.plot_stokes_parts(os.path.join(out, "stokes.png"),
                                         rep)
    extras = {
        "residual": rep["residual"],
        "relative_residual": rep["relative_residual"],
        "tolerance": rep["tolerance"],
        "passed": rep["passed"],
        "inconclusive": rep["inconclusive"],
        "wall_sign": rep["sign"],
        "lambda_n": params.lambda_n,
        "break_branch": bool(sec.get("break_branch", False)),
    }
    _finish(config, args, "stokes", [csv_path, fig_path], extras, started)
    print(f"stokes: relative residual {rep['relative_residual']:.3e} "
          f"(tolerance {rep['tolerance']:.3e}) -> "
          f"{'pass' if rep['passed'] else 'FAIL'}"
          f"{' [inconclusive]' if rep['inconclusive'] else ''}")
    if rep["passed"]:
        return EXIT_PASS
    return EXIT_INCONCLUSIVE if rep["inconclusive"] else EXIT_VIOLATION


def cmd_scaling(config: RunConfig, args) -> int:
    started = time.time()
    sec = config.section("scaling")
    kinds = sec.get("kinds", ["step2"])
    if kinds in ("all", ["all"]):
        kinds = list(EXPERIMENT_KINDS)
    for kind in kinds:
        if kind not in EXPERIMENT_KINDS:
            raise UsageError(f"unknown experiment kind {kind!r}")
    grid = sec.get("grid")
    if grid is not None and len(grid) < 2:
        raise UsageError("the coupling grid needs at least two points "
                         "(the decay fit is undefined otherwise)")
    template = sec.get("template")
    fits = []
    failures = []
    for kind in kinds:
        try:
            fit = error_scaling_experiment(
                kind, params_template=template, coupling_grid=grid,
                budget=args.budget, seed=args.seed)
        except ExperimentError as exc:
            raise UsageError(f"{kind}: {exc}") from exc
        fits.append(fit)
        if not fit.passed:
            bad = ""
            diffs = np.diff(fit.log_errors)
            rising = np.nonzero(diffs[1:] >= 0)[0]
            if rising.size:
                bad = (f" (non-monotone at v0="
                       f"{fit.grid[rising[0] + 2]:.3e})")
            failures.append(f"{kind}{bad}")
        print(f"scaling[{kind}]: exponent {fit.fitted_exponent:.3f}, "
              f"r2 {fit.r_squared:.4f}, monotone {fit.monotone}, "
              f"superpolynomial {fit.superpolynomial} -> "
              f"{'pass' if fit.passed else 'FAIL'}")
    out = _outdir(args)
    rows = []
    for fit in fits:
        for v, y in zip(fit.grid, fit.log_errors):
            rows.append((fit.kind, v, y, fit.fitted_exponent,
                         fit.fitted_prefactor, fit.r_squared))
    csv_path = reports.write_csv(
        os.path.join(out, "scaling.csv"),
        ["kind", "v0", "log_error", "fitted_exponent",
         "fitted_prefactor", "r_squared"], rows)
    fig_path = reports.plot_decay_fits(os.path.join(out, "scaling.png"),
                                       fits)
    extras = {
        "experiments": [
            {"kind": f.kind, "fitted_exponent": f.fitted_exponent,
             "fitted_prefactor": f.fitted_prefactor,
             "r_squared": f.r_squared, "monotone": f.monotone,
             "superpolynomial": f.superpolynomial, "passed": f.passed}
            for f in fits
        ],
        "failures": failures,
    }
    _finish(config, args, "scaling", [csv_path, fig_path], extras, started)
    if failures:
        print(f"scaling: failed gates: {', '.join(failures)}")
        return EXIT_VIOLATION
    return EXIT_PASS


def cmd_rg_step(config: RunConfig, args) -> int:
    started = time.time()
    sec = config.section("rg_step")
    extents = tuple(int(e) for e in sec.get("extents", (1, 1)))
    v0 = float(sec.get("v0", config.params.v0))
    template = sec.get("template", {"c0": 0.8, "mu_scale": 0.1})
    try:
        params = params_for(v0, template)
    except ParamsError as exc:
        raise UsageError(f"rg_step: {exc}") from exc
    inter = Interaction(kind=config.interaction.kind,
                        lambda_n=params.lambda_n)
    if sec.get("control", False):
        # exactly solvable control: no interaction, box lifted out of
        # the way so only the Gaussian weights remain
        params = params.replace(lambda_n=0.0, kappa_n=1e3,
                                kappa_prime_n=1e3, r_n=9.0)
        inter = Interaction(kind=inter.kind, lambda_n=0.0)
    budget = args.budget or 150000
    try:
        rep = rg_step_comparison(params, inter, budget=budget,
                                 seed=args.seed, extents=extents)
    except (ExperimentError, QuadratureError) as exc:
        raise UsageError(str(exc)) from exc
    tol = sec.get("tolerance")
    tol = rep["perturbative_scale"] if tol is None else float(tol)
    if params.lambda_n == 0.0:
        tol = max(tol, 100.0 * rep["error_floor"], 1e-9)
    resolvable = rep["error_floor"] < tol
    out = _outdir(args)
    rows = [
        ("full", rep["full"].value.real, rep["full"].value.imag,
         rep["full"].rel_error),
        ("approx", rep["approx"].value.real, rep["approx"].value.imag,
         rep["approx"].rel_error),
    ]
    csv_path = reports.write_csv(
        os.path.join(out, "rg_step.csv"),
        ["part", "re", "im", "rel_error"], rows)
    fig_path = reports.plot_rg_step(os.path.join(out, "rg_step.png"),
                                    rep, tol)
    extras = {
        "relative_difference": rep["relative_difference"],
        "tolerance": tol,
        "error_floor": rep["error_floor"],
        "conclusive": rep["conclusive"],
        "N_n_measured": rep["N_n_measured"],
        "N_n_gaussian": rep["N_n_gaussian"],
        "Z_tilde_modeled": rep["Z_tilde_modeled"],
        "perturbative_scale": rep["perturbative_scale"],
        "theta_cut": rep["theta_cut"],
    }
    _finish(config, args, "rg-step", [csv_path, fig_path], extras, started)
    ok = rep["relative_difference"] < tol and resolvable
    print(f"rg-step: relative difference "
          f"{rep['relative_difference']:.3e} vs tolerance {tol:.3e} -> "
          f"{'pass' if ok else 'FAIL'}"
          f"{'' if resolvable else ' [quadrature floor above tolerance]'}")
    if ok:
        return EXIT_PASS
    return EXIT_VIOLATION if resolvable else EXIT_INCONCLUSIVE


def cmd_export_operators(config: RunConfig, args) -> int:
    started = time.time()
    params = config.params
    unit = unit_lattice(config.spatial_dim, config.extents, params.L)
    ops = RGOperators(params, unit)
    out = _outdir(args)
    files = []
    named = {
        "Q": ops.Q, "Qn": ops.Qn, "Dn": ops.Dn, "Delta": ops.Delta,
        "C_n": ops.C_n, "D_n": ops.D_n,
        "C_half": ops.covariance(0.5), "D_half": ops.sqrt_covariance(0.5),
    }
    for name, op in named.items():
        path = os.path.join(out, f"op_{name}.json")
        save_linop(op, path)
        files.append(path)
    constants = symbol_constants(params, ops)
    kgrid = constants["momenta"]
    sym = constants["symbol"]
    rows = [tuple(k) + (s.real, s.imag) for k, s in zip(kgrid, sym)]
    header = [f"k{i}" for i in range(kgrid.shape[1])] + ["re", "im"]
    csv_path = reports.write_csv(os.path.join(out, "symbol.csv"),
                                 header, rows)
    files.append(csv_path)
    fig_path = reports.plot_symbol(os.path.join(out, "symbol.png"),
                                   kgrid, sym)
    files.append(fig_path)
    extras = {
        "det_C": complex(ops.det_C),
        "gamma_grad": constants["gamma_grad"],
        "gamma_tilde_grad": constants["gamma_tilde_grad"],
        "min_re_symbol_nonzero": constants["min_re_nonzero"],
    }
    _finish(config, args, "export-operators", files, extras, started)
    print(f"export-operators: wrote {len(files)} files to {out}")
    return EXIT_PASS


_COMMANDS = {
    "verify-bounds": cmd_verify_bounds,
    "stokes": cmd_stokes,
    "scaling": cmd_scaling,
    "rg-step": cmd_rg_step,
    "export-operators": cmd_export_operators,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bsrg",
        description="Verification suites and scaling experiments for "
                    "one block-spin coarse-graining step.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="JSON config merged over the defaults")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--budget", type=int, default=None,
                       help="quadrature evaluation budget")
        p.add_argument("--out", default=None,
                       help="output directory (default: reports)")
        if name == "verify-bounds":
            p.add_argument("--samples", type=int, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        return _COMMANDS[args.command](config, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
