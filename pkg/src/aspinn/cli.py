"""Command-line front end: ``aspinn solve | export-centers | compare``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import fields, replace

import numpy as np

from . import io
from . import reference as ref
from .model import NonFiniteError, eval_points
from .problems import PROBLEM_NAMES, get_problem
from .trainer import (
    ConfigError,
    TrainConfig,
    evaluation_set,
    reference_for,
    relative_l2,
    slice_errors,
    train,
)

log = logging.getLogger("aspinn")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
SOLUTION_GRID = 101
L2_STRIDE = 2

# config-file keys that are not TrainConfig fields
EXTRA_KEYS = {"out", "reference", "export_solution", "export_centers"}
CONFIG_KEYS = {f.name for f in fields(TrainConfig)} | EXTRA_KEYS


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- parsing helpers ------------------------------------------------------------


def parse_nodes(text: str) -> tuple[int, ...]:
    try:
        counts = tuple(int(tok) for tok in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError(f"--nodes expects counts like 4x2, got {text!r}") from None
    if not counts or any(c < 1 for c in counts):
        raise ConfigError(f"--nodes counts must be positive, got {text!r}")
    return counts


def parse_batch(text) -> int | float:
    text = str(text).strip()
    try:
        if any(ch in text for ch in ".eE"):
            value = float(text)
            if value == 1.0 and "." not in text:
                return int(value)
            return value
        return int(text)
    except ValueError:
        raise ConfigError(f"--batch expects a count or a fraction, got {text!r}") from None


def parse_bool(text) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def parse_slices(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"--slices expects comma-separated times, got {text!r}") from None


_CONVERTERS = {
    "nodes": parse_nodes,
    "samples": int,
    "boundary_samples": int,
    "test_samples": int,
    "boundary_test_samples": int,
    "batch": parse_batch,
    "alpha": float,
    "lr": float,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "iterations": int,
    "seed": int,
    "scale": float,
    "eval_every": int,
    "isotropic": parse_bool,
    "batch_boundary": parse_bool,
    "export_solution": parse_bool,
    "export_centers": parse_bool,
    "problem": str,
    "out": str,
    "reference": str,
}


def read_config_file(path: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = _CONVERTERS[key](value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


# -- commands ----------------------------------------------------------------------


def _solution_grid(problem):
    axes = [np.linspace(a, b, SOLUTION_GRID) for a, b in problem.domain.bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    if problem.domain.has_slit:
        pts = pts[~problem.domain.on_slit(pts)]
    return pts


def _coord_names(problem) -> list[str]:
    if problem.domain.kind == "spacetime-strip":
        return ["x", "t"]
    return ["x", "y", "z"][: problem.domain.dim]


def cmd_solve(args) -> int:
    settings = {}
    if args.config:
        settings.update(read_config_file(args.config))
    flag_map = {
        "problem": args.problem,
        "nodes": parse_nodes(args.nodes) if args.nodes else None,
        "samples": args.samples,
        "boundary_samples": args.boundary_samples,
        "batch": parse_batch(args.batch) if args.batch is not None else None,
        "alpha": args.alpha,
        "lr": args.lr,
        "iterations": args.iters,
        "seed": args.seed,
        "scale": args.scale_s,
        "eval_every": args.eval_every,
        "isotropic": True if args.isotropic else None,
        "out": args.out,
        "reference": args.reference,
    }
    settings.update({k: v for k, v in flag_map.items() if v is not None})
    if "problem" not in settings:
        raise ConfigError("missing --problem (one of " + ", ".join(PROBLEM_NAMES) + ")")
    out_dir = settings.pop("out", "aspinn-run")
    reference_path = settings.pop("reference", None)
    export_solution = settings.pop("export_solution", True)
    export_centers = settings.pop("export_centers", True)
    cfg = TrainConfig(**settings).resolved()

    problem = get_problem(cfg.problem)
    reference = None
    if reference_path:
        reference = ref.read_reference_csv(reference_path)
        if reference.dim != problem.domain.dim:
            raise ConfigError(
                f"reference grid is {reference.dim}D but {cfg.problem} is {problem.domain.dim}D"
            )
    os.makedirs(out_dir, exist_ok=True)

    report = train(cfg, problem=problem, reference=reference, l2_stride=L2_STRIDE)

    rows = []
    lookup = {int(i): k for k, i in enumerate(report.eval_iterations)}
    for it, value in enumerate(report.loss_history, 1):
        k = lookup.get(it)
        test = report.test_loss_history[k] if k is not None else math.nan
        l2 = report.l2_history[k] if k is not None and len(report.l2_history) else math.nan
        rows.append((it, value, test, l2))
    io.write_csv(os.path.join(out_dir, "loss_history.csv"), ["iter", "train_loss", "test_loss", "l2_error"], rows)
    io.write_params(os.path.join(out_dir, "params.json"), report.params)
    if export_centers:
        io.write_centers(os.path.join(out_dir, "centers.json"), report.params)
    if export_solution and not report.failed:
        pts = _solution_grid(problem)
        u = eval_points(report.params, pts)
        io.write_csv(
            os.path.join(out_dir, "solution.csv"),
            _coord_names(problem) + ["u"],
            np.column_stack([pts, u]),
        )
    run = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "reference": os.path.abspath(reference_path) if reference_path else None,
        "l2_metric": "relative" if report.l2_relative else "absolute-rms",
        "l2_stride": L2_STRIDE,
        "final_l2_error": report.final_l2 if len(report.l2_history) else None,
        "final_train_loss": float(report.loss_history[-1]) if len(report.loss_history) else None,
        "iterations_completed": len(report.loss_history),
        "failed": report.failed,
        "message": report.message,
        "anisotropy_clamped": report.clamped,
        "wall_time_s": report.wall_time,
        "sample_seed_root": cfg.seed,
        "versions": io.versions(),
    }
    io.write_json(os.path.join(out_dir, "run.json"), run)
    if report.failed:
        print(f"numerical failure: {report.message}", file=sys.stderr)
        return EXIT_NUMERICAL
    l2 = f"{report.final_l2:.4e}" if len(report.l2_history) else "n/a"
    print(f"{cfg.problem}: {len(report.loss_history)} iterations, final loss "
          f"{report.loss_history[-1]:.4e}, relative L2 {l2}; artifacts in {out_dir}")
    return EXIT_OK


def cmd_export_centers(args) -> int:
    params = io.read_params(args.params)
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.params)), "centers.json")
    io.write_centers(out, params)
    print(out)
    return EXIT_OK


def load_run(path: str):
    """(params, run document, problem) for a run directory."""
    params_path = os.path.join(path, "params.json")
    run_path = os.path.join(path, "run.json")
    if not os.path.exists(params_path) or not os.path.exists(run_path):
        raise ConfigError(f"{path} does not contain params.json and run.json")
    params = io.read_params(params_path)
    with open(run_path) as fh:
        run = json.load(fh)
    return params, run, get_problem(run["config"]["problem"])


def recompute_l2(path: str) -> float:
    """Final L2 of a finished run, from its artifacts alone."""
    params, run, problem = load_run(path)
    reference = ref.read_reference_csv(run["reference"]) if run.get("reference") else None
    truth = reference_for(problem, reference)
    stride = 1 if callable(truth) else run.get("l2_stride", L2_STRIDE)
    pts, vals = evaluation_set(problem, truth, stride=stride)
    return relative_l2(eval_points(params, pts), vals)[0]


def cmd_compare(args) -> int:
    params_a, run_a, problem = load_run(args.run_a)
    slices = parse_slices(args.slices) if args.slices else None
    rows = []
    if args.run_b:
        params_b, run_b, problem_b = load_run(args.run_b)
        if params_b.dim != params_a.dim or problem_b.name != problem.name:
            raise ConfigError(
                f"runs are incompatible: {problem.name} ({params_a.dim}D) vs "
                f"{problem_b.name} ({params_b.dim}D)"
            )
        truth = lambda pts: eval_points(params_b, pts)  # noqa: E731
        label = os.path.abspath(args.run_b)
    elif args.reference:
        truth = ref.read_reference_csv(args.reference)
        if truth.dim != params_a.dim:
            raise ConfigError(f"reference is {truth.dim}D but the run is {params_a.dim}D")
        label = os.path.abspath(args.reference)
    else:
        truth = reference_for(problem)
        if truth is None:
            raise ConfigError(f"{problem.name} has no built-in reference; pass --reference or a second run")
        label = "builtin"

    if problem.domain.kind == "spacetime-strip":
        T = problem.domain.time_horizon
        slices = slices if slices is not None else [0.0, T / 2, T]
        errors = slice_errors(params_a, problem, slices, truth)
        rows = [("slice", t, err) for t, err in errors.items()]
    else:
        if slices:
            raise ConfigError("--slices only applies to spacetime problems")
        if callable(truth):
            # same points the run's own L2 metric uses
            pts, _ = evaluation_set(problem, reference_for(problem), stride=L2_STRIDE)
            vals = truth(pts)
        else:
            pts, vals = evaluation_set(problem, truth, stride=L2_STRIDE)
        rows = [("grid", math.nan, relative_l2(eval_points(params_a, pts), vals)[0])]

    out = args.out or os.path.join(args.run_a, "comparison.csv")
    lines = ["kind,t,l2_error"] + [f"{k},{io.fmt(t)},{io.fmt(e)}" for k, t, e in rows]
    io.atomic_write(out, "\n".join(lines) + "\n")
    for kind, t, err in rows:
        where = f" t={t:g}" if kind == "slice" else ""
        print(f"{kind}{where}: relative L2 {err:.4e} vs {label}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aspinn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    solve = sub.add_parser("solve", help="train a model and write run artifacts")
    solve.add_argument("--config", help="key = value run configuration file")
    solve.add_argument("--problem", choices=PROBLEM_NAMES)
    solve.add_argument("--nodes", help="node grid, e.g. 4x2")
    solve.add_argument("--samples", type=int, help="interior training points M")
    solve.add_argument("--boundary-samples", type=int, help="boundary training points")
    solve.add_argument("--batch", help="batch size (integer) or fraction of M (e.g. 0.25)")
    solve.add_argument("--alpha", type=float, help="boundary penalty weight (default 10 x boundary samples)")
    solve.add_argument("--lr", type=float, help="Adam step size")
    solve.add_argument("--iters", type=int, help="number of Adam steps")
    solve.add_argument("--seed", type=int)
    solve.add_argument("--scale-s", type=float, help="log-Cholesky diagonal scale (default 0.5)")
    solve.add_argument("--eval-every", type=int, help="test metric cadence")
    solve.add_argument("--isotropic", action="store_true", help="tie zones to circles (SPINN mode)")
    solve.add_argument("--out", help="output directory")
    solve.add_argument("--reference", help="reference grid CSV used for the L2 metric")
    solve.set_defaults(func=cmd_solve)

    export = sub.add_parser("export-centers", help="node centers and zones of influence as JSON")
    export.add_argument("params", help="params.json of a run")
    export.add_argument("--out", help="output path (default: centers.json next to params)")
    export.set_defaults(func=cmd_export_centers)

    compare = sub.add_parser("compare", help="relative L2 between runs or against a reference")
    compare.add_argument("run_a")
    compare.add_argument("run_b", nargs="?")
    compare.add_argument("--reference", help="reference grid CSV")
    compare.add_argument("--slices", help="comma-separated times for spacetime problems")
    compare.add_argument("--out", help="output CSV (default: RUN_A/comparison.csv)")
    compare.set_defaults(func=cmd_compare)
    return parser


def _thread_limit():
    value = os.environ.get("ASPINN_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"ASPINN_THREADS must be a positive integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"aspinn: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(), warnings.catch_warnings():
            warnings.simplefilter("always")
            return args.func(args)
    except (ConfigError, ref.ReferenceError, io.ArtifactError, UsageError, FileNotFoundError) as exc:
        print(f"aspinn: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"aspinn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
