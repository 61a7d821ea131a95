"""Command-line entry point: ``pbiharmonic COMMAND --config PATH --out DIR``.

Commands: ``forward``, ``poincare``, ``dn``, ``extend``, ``invert``, ``verify``.
Each run writes ``manifest.json`` (resolved config, version, command line),
``result.json`` and any fields into the output directory.  Exit codes: 0
success, 1 numerical failure, 2 configuration or input error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .dnmap import DnContext, TraceDatum, dn_matrix_linear, dn_pair, export_matrix_csv, trace_norm
from .energy import AnisotropyField, ConformalCoefficient
from .extension import PoissonKernelSpec, default_heights, extend, normal_trace, save_slices
from .grid import Field, GridSpec, load_field, save_field
from .inverse import (MeasurementOracle, block_partition, bump_probes, reconstruct_sigma,
                      write_decision_ledger)
from .poincare import poincare_eigenpair
from .solver import (DEFAULT_EPS_SCHEDULE, ConvergenceError, DomainMask, box_indicator,
                     solve_exterior_value, solve_interior_source)

__all__ = ["main", "build_grid", "build_mask", "build_data", "build_anisotropy", "build_sigma"]


# --- builders ---------------------------------------------------------------

def build_grid(cfg: ExperimentConfig) -> GridSpec:
    n = cfg.get("grid", "n", int)
    N = cfg.get("grid", "N", int)
    L = cfg.get("grid", "L", float, default=2 * np.pi)
    try:
        return GridSpec(n, N, L)
    except ValueError as exc:
        raise ConfigError("grid", None, str(exc)) from exc


def _resolve_path(cfg, text):
    p = Path(text)
    if not p.is_absolute() and getattr(cfg, "base_dir", None) is not None:
        p = cfg.base_dir / p
    return p


def build_mask(cfg: ExperimentConfig, grid: GridSpec) -> DomainMask:
    bitmap = cfg.get("mask", "bitmap", str, required=False)
    try:
        if bitmap:
            arr = np.loadtxt(_resolve_path(cfg, bitmap), ndmin=2)
            return DomainMask(grid, arr.reshape(grid.shape) > 0.5)
        lo = cfg.get("mask", "lo", "floats")
        hi = cfg.get("mask", "hi", "floats")
        return DomainMask.box(grid, lo, hi)
    except (ValueError, OSError) as exc:
        raise ConfigError("mask", None, str(exc)) from exc


def build_data(cfg: ExperimentConfig, grid: GridSpec, section: str = "data") -> Field:
    kind = cfg.get(section, "type", str, default="zero")
    X = np.stack(grid.coords(), axis=-1)
    amp = cfg.get(section, "amplitude", float, default=1.0)
    if kind == "zero":
        return grid.zeros()
    if kind == "gaussian":
        width = cfg.get(section, "width", float, default=0.5)
        center = np.broadcast_to(cfg.get(section, "center", "floats", default=[0.0]), (grid.n,))
        r2 = np.sum((X - center) ** 2, axis=-1)
        return Field(grid, (amp * np.exp(-r2 / (2 * width ** 2)))[..., None])
    if kind == "cosine":
        k = cfg.get(section, "k", float, default=1.0)
        return Field(grid, (amp * np.cos(k * X[..., 0]))[..., None])
    if kind == "file":
        path = _resolve_path(cfg, cfg.get(section, "path", str))
        try:
            u = load_field(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(section, "path", str(exc)) from exc
        if u.grid != grid:
            raise ConfigError(section, "path", "field grid differs from [grid]")
        return u
    raise ConfigError(section, "type", f"unknown data type {kind!r}", cfg.lines.get((section, "type")))


def build_anisotropy(cfg: ExperimentConfig, grid: GridSpec, m: int = 1):
    if not cfg.has("anisotropy"):
        return None
    kind = cfg.get("anisotropy", "type", str, default="identity")
    try:
        if kind == "identity":
            return None
        if kind == "diagonal":
            return AnisotropyField.diagonal(grid, cfg.get("anisotropy", "diag", "floats"))
        if kind == "constant":
            vals = np.array(cfg.get("anisotropy", "matrix", "floats"))
            k = int(round(np.sqrt(vals.size)))
            return AnisotropyField.constant(grid, vals.reshape(k, k))
    except ValueError as exc:
        raise ConfigError("anisotropy", None, str(exc)) from exc
    raise ConfigError("anisotropy", "type", f"unknown anisotropy type {kind!r}")


def build_sigma(cfg: ExperimentConfig, grid: GridSpec, section: str = "sigma"):
    if not cfg.has(section):
        return None
    value = cfg.get(section, "value", float, default=1.0)
    floor = cfg.get(section, "floor", float, default=value)
    sig = np.full(grid.shape, value)
    lo = cfg.get(section, "inclusion_lo", "floats", required=False)
    if lo is not None:
        hi = cfg.get(section, "inclusion_hi", "floats")
        sig[box_indicator(grid, lo, hi)] = cfg.get(section, "inclusion_value", float)
    try:
        return ConformalCoefficient(grid, sig, floor)
    except ValueError as exc:
        raise ConfigError(section, None, str(exc)) from exc


def _problem(cfg):
    s = cfg.get("problem", "s", float)
    p = cfg.get("problem", "p", float)
    if not s > 0:
        raise ConfigError("problem", "s", f"s must be positive, got {s}")
    if not p > 1:
        raise ConfigError("problem", "p", f"p must exceed 1, got {p}")
    return s, p


def _solver(cfg, args):
    tol = args.tol if args.tol is not None else cfg.get("solver", "tol", float, default=1e-10)
    budget = cfg.get("solver", "budget", int, required=False)
    eps = tuple(cfg.get("solver", "eps_schedule", "floats", default=list(DEFAULT_EPS_SCHEDULE)))
    return tol, budget, eps


# --- commands ---------------------------------------------------------------

def cmd_forward(cfg, args, out: Path) -> dict:
    grid = build_grid(cfg)
    mask = build_mask(cfg, grid)
    s, p = _problem(cfg)
    tol, budget, eps = _solver(cfg, args)
    kind = cfg.get("problem", "kind", str, default="exterior")
    data = build_data(cfg, grid)
    A = build_anisotropy(cfg, grid)
    sigma = build_sigma(cfg, grid)
    if kind == "exterior":
        solve = solve_exterior_value
    elif kind == "interior":
        solve = solve_interior_source
    else:
        raise ConfigError("problem", "kind", f"expected exterior or interior, got {kind!r}")
    rep = solve(data, mask, A, s, p, tol, sigma, max_iter=budget, eps_schedule=eps)
    save_field(rep.solution, out / "solution.bin")
    save_field(rep.solution, out / "solution.csv")
    return {"kind": kind, **rep.to_dict()}


def cmd_poincare(cfg, args, out: Path) -> dict:
    grid = build_grid(cfg)
    mask = build_mask(cfg, grid)
    s, p = _problem(cfg)
    tol, budget, _ = _solver(cfg, args)
    restarts = cfg.get("poincare", "restarts", int, default=5)
    seeds = cfg.get("poincare", "seeds", "ints", required=False)
    if seeds is None:
        seeds = [args.seed + k for k in range(restarts)]
    res = poincare_eigenpair(mask, s, p, tol=tol, restarts=restarts, seeds=seeds,
                             max_iter=budget, workers=args.threads)
    save_field(res.minimizer, out / "minimizer.bin")
    save_field(res.minimizer, out / "minimizer.csv")
    return res.to_dict()


def cmd_dn(cfg, args, out: Path) -> dict:
    grid = build_grid(cfg)
    mask = build_mask(cfg, grid)
    s, p = _problem(cfg)
    tol, _, eps = _solver(cfg, args)
    ctx = DnContext(mask, s, p, build_anisotropy(cfg, grid), build_sigma(cfg, grid), tol, eps)
    mode = cfg.get("dn", "mode", str, default="pairs")
    result = {"mode": mode, "tol": tol, "eps_schedule": list(eps)}
    if mode == "matrix":
        M, ext = dn_matrix_linear(ctx)
        export_matrix_csv(M, out / "dn_matrix.csv", ext)
        result.update({"size": int(M.shape[0]), "asymmetry": float(np.max(np.abs(M - M.T)))})
        return result
    if mode != "pairs":
        raise ConfigError("dn", "mode", f"expected matrix or pairs, got {mode!r}")
    count = cfg.get("dn", "pairs", int, default=4)
    seed = cfg.get("dn", "seed", int, default=args.seed)
    window = mask.exterior
    fs = bump_probes(grid, window, count, seed=seed, radius=cfg.get("dn", "radius", float,
                                                                    default=4 * grid.h))
    gs = bump_probes(grid, window, count, seed=seed + 1000)
    rows = []
    for f, g in zip(fs, gs):
        F, G = TraceDatum.from_field(f, mask), TraceDatum.from_field(g, mask)
        val = dn_pair(ctx, F, G)
        rows.append({"pair": val, "self": dn_pair(ctx, F, F),
                     "norm_f": trace_norm(F, s, p), "norm_g": trace_norm(G, s, p)})
    ratios = [abs(r["pair"]) / (r["norm_f"] ** (p - 1) * r["norm_g"]) for r in rows]
    result.update({"seed": seed, "pairs": rows, "bound_constant_upper_representative": max(ratios)})
    return result


def cmd_extend(cfg, args, out: Path) -> dict:
    grid = build_grid(cfg)
    s = cfg.get("problem", "s", float)
    if not 0 < s < 1:
        raise ConfigError("problem", "s", f"extension order must lie in (0, 1), got {s}",
                          cfg.lines.get(("problem", "s")))
    u = build_data(cfg, grid)
    heights = cfg.get("extend", "heights", "floats", required=False)
    if heights is None:
        heights = default_heights(grid, cfg.get("extend", "levels", int, default=8),
                                  cfg.get("extend", "ratio", float, default=0.7),
                                  cfg.get("extend", "y_min", float, default=2.5 * grid.h))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sl = extend(u, heights, PoissonKernelSpec(grid.n, s))
    save_slices(sl, out / "slices")
    result = {"s": s, "heights": list(map(float, sl.heights)), "support_ratio": sl.support_ratio,
              "warnings": [str(w.message) for w in caught],
              "contraction_p2": list(map(float, sl.contraction(2.0))),
              "contraction_p3": list(map(float, sl.contraction(3.0)))}
    if len(sl.heights) >= 4 and np.any(u.values):
        try:
            T, c, info = normal_trace(sl, return_info=True)
        except ValueError as exc:
            result["trace_skipped"] = str(exc)
        else:
            save_field(T, out / "trace.bin")
            result.update({"calibration": c, **{k: v for k, v in info.items()}})
    return result


def invert_setup(cfg, args):
    """Grid, mask, true coefficient, probes, blocks and levels of an inversion config."""
    grid = build_grid(cfg)
    mask = build_mask(cfg, grid)
    s, p = _problem(cfg)
    sigma = build_sigma(cfg, grid)
    if sigma is None:
        raise ConfigError("sigma", None, "missing section")
    margin = cfg.get("invert", "window_margin", float, default=2 * grid.h)
    idx = np.argwhere(mask.interior)
    ax = grid.axis()
    lo = ax[idx.min(axis=0)] - margin
    hi = ax[idx.max(axis=0)] + grid.h + margin
    window = ~box_indicator(grid, lo, hi)
    if not window.any():
        raise ConfigError("invert", "window_margin", "window is empty")
    probes = bump_probes(grid, window, cfg.get("invert", "probes", int, default=8),
                         seed=cfg.get("invert", "probe_seed", int, default=args.seed))
    blocks = block_partition(grid, mask, cfg.get("invert", "block", int, default=4))
    levels = cfg.get("invert", "levels", "range")
    return grid, mask, s, p, sigma, window, probes, blocks, levels


def cmd_invert(cfg, args, out: Path) -> dict:
    grid, mask, s, p, sigma, window, probes, blocks, levels = invert_setup(cfg, args)
    tol, budget, _ = _solver(cfg, args)
    budget = cfg.get("invert", "budget", int, required=False) or budget
    eta = cfg.get("invert", "eta", float, default=0.0)
    oracle = MeasurementOracle(mask, sigma, s, p, build_anisotropy(cfg, grid), tol, eta,
                               cfg.get("invert", "noise_seed", int, default=args.seed))
    est = reconstruct_sigma(oracle, probes, blocks, levels, sigma.floor, budget=budget,
                            max_sweeps=cfg.get("invert", "max_sweeps", int, default=4))
    save_field(est.field, out / "sigma_estimate.bin")
    save_field(est.field, out / "sigma_estimate.csv")
    write_decision_ledger(est, out / "decisions.csv")
    truth = np.array([float(np.mean(sigma.sigma[b])) for b in blocks])
    rel = np.abs(est.estimate - truth) / truth
    return {"estimate": est.estimate.tolist(), "lower": est.lower.tolist(),
            "upper": est.upper.tolist(), "truth": truth.tolist(),
            "max_relative_error": float(rel.max()), "inconclusive": est.inconclusive,
            "solves": est.solves, "sweeps": est.sweeps, "eta": eta}


def cmd_verify(cfg, args, out: Path) -> dict:
    from .verify import run_all

    only = cfg.get("verify", "only", "ints", required=False)
    rows = run_all(out=out, stream=sys.stdout, only=only)
    return {"criteria": rows, "all_passed": all(r["passed"] for r in rows)}


COMMANDS = {
    "forward": cmd_forward,
    "poincare": cmd_poincare,
    "dn": cmd_dn,
    "extend": cmd_extend,
    "invert": cmd_invert,
    "verify": cmd_verify,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pbiharmonic", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="INI experiment config")
    ap.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for restarts")
    ap.add_argument("--seed", type=int, default=0, help="base seed")
    ap.add_argument("--tol", type=float, default=None, help="override solver tolerance")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out
    try:
        if args.config is not None:
            cfg = load_config(args.config)
        elif args.command == "verify":
            cfg = parse_config("")
        else:
            raise ConfigError("file", None, "--config is required for this command")
        if args.threads < 1:
            raise ConfigError("cli", "threads", "must be >= 1")
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        result = COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, RuntimeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if isinstance(exc, ConvergenceError):
            out.mkdir(parents=True, exist_ok=True)
            save_field(exc.report.solution, out / "last_iterate.bin")
            (out / "result.json").write_text(json.dumps(_jsonable(exc.report.to_dict()), indent=2))
        return 1
    except (ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    manifest = {
        "version": __version__,
        "command": args.command,
        "config": cfg.raw,
        "config_path": str(args.config) if args.config else None,
        "seed": args.seed,
        "threads": args.threads,
        "tol_override": args.tol,
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True))
    result["wall_time_total"] = time.perf_counter() - t0
    (out / "result.json").write_text(json.dumps(_jsonable(result), indent=2, sort_keys=True))
    if args.command == "verify":
        return 0 if result["all_passed"] else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
