"""Command-line interface: fit, select, simulate, gof, interpret, eval.

Every option can also come from a flat key=value config file (--config);
explicit flags win over file values, and the fully resolved configuration
is logged to stderr before the run.  Exit status: 0 on success, 2 on input
errors, 3 under --strict when a solver failed to converge.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .admm import SolverConfig, admm_fit, extract_structure, write_trace_csv
from .data import load_csv, save_csv
from .evaluation import run_simulation_study, write_c1_csv, write_study_csv
from .gof import parametric_bootstrap_gof, write_gof_report
from .interpret import (
    factor_scores,
    load_scale_key,
    loadings_from_L,
    maximal_cliques,
    scale_correlations,
    varimax,
    write_clique_report,
)
from .modelio import ModelFile, load_model, save_model
from .pseudolik import FlagParams
from .selection import grid_search_select, write_path_csv
from .simulate import GibbsConfig, builtin_design, simulate_dataset, write_truth_json

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3


def _parse_grid(text: str) -> np.ndarray:
    try:
        lo, hi, n = text.split(":")
        grid = np.linspace(float(lo), float(hi), int(n))
    except ValueError as exc:
        raise ValueError(f"grid {text!r} must look like lo:hi:n") from exc
    if grid.size == 0 or (grid <= 0).any():
        raise ValueError(f"grid {text!r} must be positive and non-empty")
    return grid


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _load_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Built-in defaults, then config-file values, then explicit flags."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        file_values = _load_config_file(args.config)
        for key, value in file_values.items():
            if key not in resolved:
                raise ValueError(f"config file key {key!r} is not an option of this command")
            resolved[key] = value
    for key in resolved:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
    print("resolved config: " + " ".join(f"{k}={v}" for k, v in sorted(resolved.items())),
          file=sys.stderr)
    return resolved


def _solver_config(opts: dict, subproblem_grad_tol: float | None = None) -> SolverConfig:
    tol_abs = float(opts["tol"])
    kwargs = {}
    if subproblem_grad_tol is not None:
        kwargs["subproblem_grad_tol"] = subproblem_grad_tol
    return SolverConfig(
        lam=float(opts["lam"]),
        max_iter=int(opts["max_iter"]),
        tol_abs=tol_abs,
        tol_rel=10.0 * tol_abs,
        **kwargs,
    )


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value file; flags override it")
    parser.add_argument("--out", help="output path (or prefix)")


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lambda", dest="lam", type=float, help="ADMM scale parameter")
    parser.add_argument("--tol", type=float, help="absolute stopping tolerance (relative is 10x)")
    parser.add_argument("--max-iter", type=int, help="ADMM iteration cap")
    parser.add_argument("--strict", action="store_true", default=None,
                        help="exit 3 if any solve failed to converge")


SOLVER_DEFAULTS = {"lam": 1.0, "tol": 1e-6, "max_iter": 5000, "strict": False}


def _cmd_simulate(args) -> int:
    defaults = {"setting": 1, "n": 500, "seed": 0, "edge_strength": 1.0,
                "loading": None, "out": "simulated.csv"}
    opts = _resolve(args, defaults)
    loading = None if opts["loading"] is None else float(opts["loading"])
    design = builtin_design(int(opts["setting"]), edge_strength=float(opts["edge_strength"]),
                            loading=loading)
    data, truth = simulate_dataset(design, int(opts["n"]), int(opts["seed"]))
    out = Path(opts["out"])
    save_csv(data, out)
    write_truth_json(truth, out.with_suffix(out.suffix + ".truth.json"))
    print(f"wrote {out} ({data.n_subjects} x {data.n_items}) and truth sidecar")
    return EXIT_OK


def _cmd_fit(args) -> int:
    defaults = dict(SOLVER_DEFAULTS, gamma=0.01, rho=15.0, out="model.json",
                    data=None, trace=None)
    opts = _resolve(args, defaults)
    if not opts["data"]:
        raise ValueError("--data is required")
    data = load_csv(opts["data"])
    gamma = float(opts["gamma"])
    delta = gamma * float(opts["rho"])
    config = _solver_config(opts)
    fit = admm_fit(data, gamma, delta, config, keep_history=opts["trace"] is not None)
    k_hat, edges = extract_structure(fit)
    if opts["trace"]:
        write_trace_csv(fit, opts["trace"])
    model = ModelFile(
        l=fit.l_hat, s=fit.s_hat, k_hat=k_hat, edges=tuple(edges),
        a=loadings_from_L(fit.l_hat, k_hat).A,
        provenance={"command": "fit", "gamma": gamma, "rho": float(opts["rho"]),
                    "delta": delta, "lambda": config.lam, "converged": fit.converged,
                    "iterations": fit.iterations},
    )
    save_model(model, opts["out"])
    print(f"K_hat={k_hat} n_edges={len(edges)} objective={fit.objective:.6f} "
          f"converged={fit.converged} -> {opts['out']}")
    if opts["strict"] and not fit.converged:
        print("solver did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_select(args) -> int:
    defaults = dict(SOLVER_DEFAULTS, gamma_grid="0.001:0.02:20", rho_grid="10.5:20:20",
                    jobs=1, out="model.json", path_csv=None, data=None)
    opts = _resolve(args, defaults)
    if not opts["data"]:
        raise ValueError("--data is required")
    data = load_csv(opts["data"])
    gamma_grid = _parse_grid(str(opts["gamma_grid"]))
    rho_grid = _parse_grid(str(opts["rho_grid"]))
    config = _solver_config(opts)
    result = grid_search_select(data, gamma_grid, rho_grid, config, jobs=int(opts["jobs"]))
    out = Path(opts["out"])
    path_csv = opts["path_csv"] or out.with_suffix(".path.csv")
    write_path_csv(result, path_csv)
    best = result.best
    model = ModelFile(
        l=result.final_l, s=result.final_s, k_hat=best.k_hat, edges=best.edge_set,
        a=loadings_from_L(result.final_l, best.k_hat).A,
        provenance={"command": "select", "gamma": best.gamma, "delta": best.delta,
                    "rho": best.rho, "bic": best.bic, "lambda": config.lam,
                    "grid": {"gamma": str(opts["gamma_grid"]), "rho": str(opts["rho_grid"])}},
    )
    save_model(model, out)
    n_bad = sum(not e.usable for e in result.path)
    print(f"best gamma={best.gamma:.6g} rho={best.rho:.6g} K_hat={best.k_hat} "
          f"n_edges={best.n_edges} bic={best.bic:.4f} -> {out} (path: {path_csv})")
    if opts["strict"] and n_bad:
        print(f"{n_bad} grid points did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_gof(args) -> int:
    defaults = {"boot": 200, "burn_in": 500, "thin": 5, "seed": 0,
                "out": "gof.txt", "data": None, "model": None}
    opts = _resolve(args, defaults)
    if not opts["data"] or not opts["model"]:
        raise ValueError("--data and --model are required")
    data = load_csv(opts["data"])
    model = load_model(opts["model"])
    params = FlagParams(L=model.l, S=model.s)
    gibbs = GibbsConfig(burn_in_sweeps=int(opts["burn_in"]), thin_sweeps=int(opts["thin"]),
                        seed=int(opts["seed"]))
    report = parametric_bootstrap_gof(data, params, int(opts["boot"]), gibbs)
    out = Path(opts["out"])
    write_gof_report(report, out, stats_csv_path=out.with_suffix(".stats.csv"))
    print(f"observed={report.stat_observed:.4f} p_lower={report.p_lower:.4f} "
          f"p_upper={report.p_upper:.4f} p_two_sided={report.p_two_sided:.4f} -> {out}")
    return EXIT_OK


def _cmd_interpret(args) -> int:
    defaults = {"out": "interpret", "data": None, "model": None, "scales": None,
                "min_clique": 3, "no_kaiser": False}
    opts = _resolve(args, defaults)
    if not opts["model"]:
        raise ValueError("--model is required")
    model = load_model(opts["model"])
    prefix = Path(opts["out"])
    a = model.a if model.a is not None else loadings_from_L(model.l, model.k_hat).A
    rotation = varimax(a, kaiser=not opts["no_kaiser"])
    _write_matrix_csv(prefix.parent / (prefix.name + ".loadings.csv"), rotation.A_rot,
                      header=",".join(f"factor{k + 1}" for k in range(rotation.A_rot.shape[1])))
    cliques = maximal_cliques(model.edges, model.n_items, min_size=1)
    write_clique_report(cliques, model.s, prefix.parent / (prefix.name + ".cliques.txt"),
                        min_size=int(opts["min_clique"]))
    messages = [f"rotated loadings and cliques -> {prefix}.*"]
    if opts["data"]:
        data = load_csv(opts["data"])
        scores = factor_scores(rotation.A_rot, data)
        _write_matrix_csv(prefix.parent / (prefix.name + ".scores.csv"), scores,
                          header=",".join(f"factor{k + 1}" for k in range(scores.shape[1])))
        if opts["scales"]:
            key = load_scale_key(opts["scales"])
            table = scale_correlations(scores, key, data)
            _write_matrix_csv(prefix.parent / (prefix.name + ".scale_correlations.csv"),
                              table, header=",".join(key.labels))
        messages.append("scores written")
    print("; ".join(messages))
    return EXIT_OK


def _cmd_eval(args) -> int:
    # the study harness runs with its own calibrated solver settings
    defaults = {"lam": 10.0, "tol": 1e-5, "max_iter": 5000, "strict": False,
                "settings": "1", "ns": "500", "reps": 3, "seed": 0, "jobs": 1,
                "edge_strength": 1.0, "loading": None, "gamma_grid": None,
                "rho_grid": None, "out": "study"}
    opts = _resolve(args, defaults)
    gamma_grid = _parse_grid(str(opts["gamma_grid"])) if opts["gamma_grid"] else None
    rho_grid = _parse_grid(str(opts["rho_grid"])) if opts["rho_grid"] else None
    settings = _parse_int_list(str(opts["settings"]))
    ns = _parse_int_list(str(opts["ns"]))
    results = run_simulation_study(
        settings, ns, int(opts["reps"]), int(opts["seed"]), jobs=int(opts["jobs"]),
        edge_strength=float(opts["edge_strength"]),
        loading=None if opts["loading"] is None else float(opts["loading"]),
        gamma_grid=gamma_grid, rho_grid=rho_grid,
        config=_solver_config(opts, subproblem_grad_tol=1e-6),
    )
    prefix = Path(opts["out"])
    write_study_csv(results, prefix.parent / (prefix.name + ".study.csv"))
    write_c1_csv(results, prefix.parent / (prefix.name + ".c1.csv"))
    for r in results:
        print(f"setting {r.setting} N={r.n_subjects}: C1={r.c1_mean:.2f} C2={r.c2_mean:.2f} "
              f"C3={r.c3_mean:.3f} C4={r.c4_mean:.3f} (reps={r.n_reps}, failed={r.n_failed})")
    return EXIT_OK


def _write_matrix_csv(path, matrix, header: str = "") -> None:
    matrix = np.atleast_2d(np.asarray(matrix))
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(header + "\n")
        for row in matrix:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flagmodel",
        description="low-rank latent factors plus a sparse Ising graph for binary data",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a dataset from a built-in design")
    p.add_argument("--setting", type=int, choices=(1, 2, 3))
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--edge-strength", type=float)
    p.add_argument("--loading", type=float)
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="one regularized fit at fixed penalties")
    p.add_argument("--data")
    p.add_argument("--gamma", type=float)
    p.add_argument("--rho", type=float, help="delta = rho * gamma")
    p.add_argument("--trace", help="per-iteration trace CSV")
    _add_solver_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("select", help="grid search, BIC selection, and refit")
    p.add_argument("--data")
    p.add_argument("--gamma-grid", help="lo:hi:n")
    p.add_argument("--rho-grid", help="lo:hi:n")
    p.add_argument("--jobs", type=int)
    p.add_argument("--path-csv")
    _add_solver_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("gof", help="parametric-bootstrap goodness of fit")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--boot", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--seed", type=int)
    _add_common(p)
    p.set_defaults(func=_cmd_gof)

    p = sub.add_parser("interpret", help="loadings, rotation, scores, cliques")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--scales")
    p.add_argument("--min-clique", type=int)
    p.add_argument("--no-kaiser", action="store_true", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_interpret)

    p = sub.add_parser("eval", help="replicate the simulation study")
    p.add_argument("--settings", help="comma-separated setting ids")
    p.add_argument("--ns", help="comma-separated sample sizes")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--edge-strength", type=float)
    p.add_argument("--loading", type=float)
    p.add_argument("--gamma-grid", help="lo:hi:n")
    p.add_argument("--rho-grid", help="lo:hi:n")
    _add_solver_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
