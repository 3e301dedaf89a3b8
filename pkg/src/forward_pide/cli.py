"""Batch front end.

Exit codes: 0 success, 1 input or configuration error, 2 validation or
tolerance failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import cdo_engine, io, mc_oracle
from .config import ConfigError, RunConfig, load_config
from .grid import GridSpec
from .levy_tails import DivergenceError, build_tail_table, check_integrability, measure_from_dict
from .models import (
    _MODEL_KEYS,
    Basket,
    JumpDiffusion,
    ProjectionRequiredError,
    PureJumpLocalLevy,
    StochVolJump,
    TimeChangedLevy,
    effective_coefficients,
    model_from_dict,
    suggest_grid,
    validate_model,
)
from .pide_engine import CallSurface, StepSizeError, solve_forward, validate_surface

log = logging.getLogger("forward_pide")

EXIT_OK, EXIT_INPUT, EXIT_VALIDATION = 0, 1, 2


class InputError(Exception):
    """Bad input that should terminate the command with exit code 1."""


# --------------------------------------------------------------------------- #
# Config sections -> objects
# --------------------------------------------------------------------------- #


def build_model(cfg: RunConfig):
    data = cfg.get("model")
    if data is None:
        raise cfg.error("missing required section 'model'")
    kind = data.get("kind")
    if kind in _MODEL_KEYS:
        for key in data:
            if key not in _MODEL_KEYS[kind] | {"kind", "rate"}:
                raise cfg.error(f"unknown key {key!r} in model {kind}; allowed: "
                                f"{sorted(_MODEL_KEYS[kind] | {'kind', 'rate'})}", "model", key)
    try:
        return model_from_dict(data)
    except (ValueError, TypeError, KeyError) as exc:
        raise cfg.error(f"invalid model: {exc}", "model") from None


def build_grid(cfg: RunConfig, model=None) -> GridSpec:
    data = cfg.get("grid")
    if data is None:
        raise cfg.error("missing required section 'grid'")
    data = dict(data)
    try:
        if data.pop("auto", False):
            if model is None:
                raise ValueError("grid.auto needs a model")
            extra = set(data) - {"n_k", "maturities", "substeps", "grading"}
            if extra:
                raise ValueError(f"grid.auto takes only n_k, maturities, substeps, grading; got {sorted(extra)}")
            return suggest_grid(model, data["maturities"], data.get("n_k", 400),
                                data.get("substeps", 100), grading=data.get("grading", 1.0))
        return GridSpec.from_dict(data)
    except (ValueError, TypeError, KeyError) as exc:
        raise cfg.error(f"invalid grid: {exc}", "grid") from None


def build_mc(cfg: RunConfig, seed: int | None) -> mc_oracle.MCConfig:
    data = dict(cfg.get("mc") or {})
    if seed is not None:
        data["master_seed"] = seed
    try:
        return mc_oracle.MCConfig(**data)
    except (ValueError, TypeError) as exc:
        raise cfg.error(f"invalid mc section: {exc}", "mc") from None


def solver_options(cfg: RunConfig) -> dict:
    return dict(cfg.get("solver") or {})


def _check_model(model) -> None:
    report = validate_model(model)
    if not report.passed:
        names = ", ".join(c.name for c in report.failures())
        raise InputError(f"model violates assumption(s) {names}:\n{report.to_text()}")


def _project(model, grid, cfg, seed, threads):
    mc = build_mc(cfg, seed)
    opts = dict(cfg.get("project") or {})
    if "mc" not in cfg.sections:
        raise InputError(f"{model.kind} needs a projection directive: add an 'mc' section "
                         "(and optionally 'project')")
    try:
        if isinstance(model, Basket):
            return mc_oracle.project_index(model, grid, mc, threads=threads, **opts)
        return mc_oracle.project_effective_coefficients(model, grid, mc, threads=threads, **opts)
    except TypeError as exc:
        raise cfg.error(f"invalid project section: {exc}", "project") from None


def pide_surface(cfg: RunConfig, seed, threads) -> tuple[CallSurface, object]:
    """Surface from either a coefficients document or the model section."""
    if "coefficients" in cfg.sections:
        path = cfg.resolve(cfg.get("coefficients"))
        try:
            coeffs, spot, grid = io.read_coefficients(path)
        except (ValueError, KeyError) as exc:
            raise cfg.error(f"bad coefficients document: {exc}", "coefficients") from None
        return solve_forward(coeffs, spot, grid, **solver_options(cfg)), None
    model = build_model(cfg)
    _check_model(model)
    grid = build_grid(cfg, model)
    try:
        coeffs = effective_coefficients(model, grid)
    except ProjectionRequiredError:
        coeffs = _project(model, grid, cfg, seed, threads)
    return solve_forward(coeffs, model.spot, grid, **solver_options(cfg)), model


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #


def _validation_tols(cfg):
    v = cfg.get("validation") or {}
    return float(v.get("tol", 1e-9)), float(v.get("martingale_tol", 1e-12))


def cmd_solve(cfg: RunConfig, out: Path, seed=None, threads=None) -> int:
    surface, _ = pide_surface(cfg, seed, threads)
    surface.to_csv(out / "surface.csv")
    tol, mtol = _validation_tols(cfg)
    report = validate_surface(surface, tol, mtol)
    (out / "validation.txt").write_text(report.to_text() + "\n")
    status = "pass" if report.passed else "FAIL"
    print(f"solve: {surface.values.size} nodes written; validation {status}")
    return EXIT_OK if report.passed else EXIT_VALIDATION


def _compare_nodes(cfg: RunConfig, surface: CallSurface | None, model):
    sec = cfg.get("compare") or {}
    if "maturities" in sec:
        mats = np.asarray(sec["maturities"], dtype=float)
    elif surface is not None:
        mats = surface.maturities[surface.maturities > 0]
    else:
        mats = np.asarray(build_grid(cfg, model).maturities, dtype=float)
        mats = mats[mats > 0]
    spot = model.spot if model is not None else surface.spot
    Ks = np.asarray(sec.get("strikes", spot * np.array([0.8, 0.9, 1.0, 1.1, 1.2])), dtype=float)
    return mats, Ks


def z_scores(pide: np.ndarray, mean: np.ndarray, se: np.ndarray, exact_tol: float = 1e-10):
    """``(pide - mean) / se``; zero-variance nodes count as exact matches when they agree."""
    diff = pide - mean
    exact = (se == 0) & (np.abs(diff) <= exact_tol * np.maximum(1.0, np.abs(mean)))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(exact, 0.0, np.inf))
    return z, exact


def cmd_compare(cfg: RunConfig, out: Path, seed=None, threads=None) -> int:
    model = build_model(cfg)
    surface, _ = pide_surface(cfg, seed, threads)
    mats, Ks = _compare_nodes(cfg, surface, model)
    mc = build_mc(cfg, seed)
    res = mc_oracle.price_calls_mc(model, mats, Ks, mc, threads)
    pide = np.vstack([surface.price(T, Ks) for T in mats])
    z, exact = z_scores(pide, res.mean, res.std_error)
    rows = []
    for i, T in enumerate(mats):
        for j, K in enumerate(Ks):
            rows.append((T, K, pide[i, j], res.mean[i, j], res.std_error[i, j], z[i, j]))
    io.write_rows(out / "compare.csv", "T,K,pide,mc_mean,mc_stderr,z_score", rows)
    limit = float((cfg.get("compare") or {}).get("z_limit", 4.0))
    zmax = float(np.max(np.abs(z)))
    within3 = float(np.mean(np.abs(z) <= 3.0))
    if exact.all():
        summary = f"compare: all {z.size} nodes exact-match (zero MC variance)"
    else:
        summary = (f"compare: max |z| = {zmax:.3f} over {z.size} nodes; "
                   f"{100 * within3:.1f}% within 3 SE; limit {limit:g}")
    status = "pass" if zmax <= limit else "FAIL"
    (out / "compare.txt").write_text(f"{summary}; {status}\n")
    print(f"{summary}; {status}")
    return EXIT_OK if zmax <= limit else EXIT_VALIDATION


def cmd_mc(cfg: RunConfig, out: Path, seed=None, threads=None) -> int:
    model = build_model(cfg)
    _check_model(model)
    mats, Ks = _compare_nodes(cfg, None, model)
    res = mc_oracle.price_calls_mc(model, mats, Ks, build_mc(cfg, seed), threads)
    res.to_csv(out / "mc.csv")
    print(f"mc: {res.mean.size} estimates from {res.n_effective} samples")
    return EXIT_OK


def _tail_measure(cfg: RunConfig):
    sec = cfg.get("tails") or {}
    if "measure" in sec:
        try:
            return measure_from_dict(sec["measure"])
        except ValueError as exc:
            raise cfg.error(f"invalid measure: {exc}", "tails", "measure") from None
    model = build_model(cfg)
    if isinstance(model, PureJumpLocalLevy):
        return model.base
    if isinstance(model, (JumpDiffusion, TimeChangedLevy, StochVolJump)):
        return model.jumps
    raise cfg.error("tails needs tails.measure or a model with a jump measure", "tails")


def cmd_tails(cfg: RunConfig, out: Path, seed=None, threads=None) -> int:
    measure = _tail_measure(cfg)
    report = check_integrability(measure)
    if not report.passed:
        names = ", ".join(c.name for c in report.failures())
        raise InputError(f"measure violates assumption(s) {names}:\n{report.to_text()}")
    sec = cfg.get("tails") or {}
    if "z" in sec:
        grid = np.asarray(sec["z"], dtype=float)
    else:
        grid = (sec.get("z_min", -1.0), sec.get("z_max", 1.0), sec.get("n", 201))
    try:
        table = build_tail_table(measure, grid)
    except (ValueError, TypeError) as exc:
        raise cfg.error(f"invalid tail grid: {exc}", "tails") from None
    table.to_csv(out / "tails.csv")
    print(f"tails: {table.z.size} values; psi(0-) = {table.left_limit:.17g}")
    return EXIT_OK


def cmd_cdo(cfg: RunConfig, out: Path, seed=None, threads=None) -> int:
    sec = cfg.get("cdo")
    if sec is None:
        raise cfg.error("missing required section 'cdo'")
    try:
        spec = cdo_engine.loss_spec_from_dict(sec["spec"])
    except KeyError:
        raise cfg.error("cdo needs a 'spec'", "cdo") from None
    except (ValueError, TypeError) as exc:
        raise cfg.error(f"invalid loss spec: {exc}", "cdo", "spec") from None
    mats = sec.get("maturities", [1.0])
    Ks = np.asarray(sec.get("attachments", np.linspace(0.0, 1.0, 11)), dtype=float)
    engines = sec.get("engine", "density")
    engines = [engines] if isinstance(engines, str) else list(engines)
    for e in engines:
        if e not in ("density", "recursion", "mc"):
            raise cfg.error(f"unknown cdo engine {e!r}; expected density, recursion or mc", "cdo", "engine")
    written = []
    if "density" in engines:
        if spec.lgd is not None:
            grid = cdo_engine.LossGrid.for_spec(spec, cells_per_default=sec.get("cells_per_default", 1))
        else:
            grid = cdo_engine.LossGrid(sec.get("n_cells", 1000))
        surf = cdo_engine.solve_tranche_forward(spec, grid, mats, Ks, substeps=sec.get("substeps"),
                                                method=sec.get("method", "uniformized"))
        surf.to_csv(out / "tranche.csv")
        written.append("tranche.csv")
    if "recursion" in engines:
        if spec.lgd is None:
            raise cfg.error("the recursion engine needs a constant-LGD spec", "cdo", "engine")
        rec = cdo_engine.cont_savescu_recursion(spec.lgd, mats)
        rec.to_csv(out / "tranche_recursion.csv")
        written.append("tranche_recursion.csv")
    if "mc" in engines:
        res = cdo_engine.mc_tranche(spec, mats, Ks, build_mc(cfg, seed), threads)
        res.to_csv(out / "tranche_mc.csv")
        written.append("tranche_mc.csv")
    print("cdo: wrote " + ", ".join(written))
    return EXIT_OK


def cmd_project(cfg: RunConfig, out: Path, seed=None, threads=None) -> int:
    model = build_model(cfg)
    _check_model(model)
    grid = build_grid(cfg, model)
    try:
        coeffs = effective_coefficients(model, grid)
        log.info("model has closed-form coefficients; no simulation needed")
    except ProjectionRequiredError:
        coeffs = _project(model, grid, cfg, seed, threads)
    io.write_coefficients(out / "coefficients.json", coeffs, model.spot, grid)
    print(f"project: coefficients on {coeffs.times.size} x {coeffs.k.size} nodes")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, out: Path, seed=None, threads=None) -> int:
    lines, ok = [], True
    if "model" in cfg.sections:
        model = build_model(cfg)
        report = validate_model(model)
        lines.append(report.to_text())
        ok &= report.passed
        if "grid" in cfg.sections:
            grid = build_grid(cfg, model)
            try:
                grid.check_spot(model.spot)
                lines.append("grid: pass (spot inside the strike domain)")
            except ValueError as exc:
                lines.append(f"grid: FAIL ({exc})")
                ok = False
    if "coefficients" in cfg.sections:
        try:
            io.read_coefficients(cfg.resolve(cfg.get("coefficients")))
            lines.append("coefficients: pass (document parses)")
        except (ValueError, KeyError) as exc:
            lines.append(f"coefficients: FAIL ({exc})")
            ok = False
    if not lines:
        raise cfg.error("nothing to validate: give a model or coefficients")
    (out / "validation.txt").write_text("\n".join(lines) + "\n")
    print("validate: " + ("pass" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_VALIDATION


COMMANDS = {
    "solve": cmd_solve,
    "compare": cmd_compare,
    "mc": cmd_mc,
    "tails": cmd_tails,
    "cdo": cmd_cdo,
    "project": cmd_project,
    "validate": cmd_validate,
}


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("threads must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forward-pide", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", help="output directory (default: outputs.dir or .)")
        p.add_argument("--seed", type=_u64, help="override mc.master_seed")
        p.add_argument("--threads", type=_positive, default=1, help="worker threads for Monte Carlo")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


cmd_solve.__doc__ = "Solve the forward equation; write surface.csv and validation.txt."
cmd_compare.__doc__ = "Compare the forward surface with Monte Carlo; write compare.csv."
cmd_mc.__doc__ = "Monte Carlo call prices; write mc.csv."
cmd_tails.__doc__ = "Tabulate the exponential double tail; write tails.csv."
cmd_cdo.__doc__ = "Expected tranche notionals; write tranche*.csv."
cmd_project.__doc__ = "Markovian projection; write coefficients.json."
cmd_validate.__doc__ = "Check model assumptions; write validation.txt."


def _output_dir(cfg: RunConfig, arg: str | None) -> Path:
    out = Path(arg) if arg else cfg.resolve((cfg.get("outputs") or {}).get("dir", "."))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise InputError(f"output directory {out} is not writable")
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    start = time.perf_counter()
    try:
        cfg = load_config(args.config)
        out = _output_dir(cfg, args.out)
        code = COMMANDS[args.command](cfg, out, args.seed, args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StepSizeError as exc:
        print(f"error: {exc} (suggested substeps: {exc.suggested_substeps})", file=sys.stderr)
        return EXIT_INPUT
    except (DivergenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
