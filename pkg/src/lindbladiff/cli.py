"""Config-driven experiment runner with machine-readable JSON reports.

Subcommands
-----------
solve       integrate the master equation and report final-state health
qfi         evaluate the figure of merit (optionally its gradient)
grad-check  cross-validate adjoint / forward / finite-difference gradients
optimize    gradient-ascent protocol search; trace persisted as JSON lines
emit-plots  write plot-ready CSV tables for traces or trajectories

Reports carry the schema tag "lindbladiff-report/1" and echo every
resolved default, so a run is reproducible from its own report.
Wall-clock data lives only under the "timings" key; everything else is
byte-deterministic for a fixed config and seed.  Exit codes: 0 success,
2 validation error, 3 numerical failure, 4 failed gradient-check verdict.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .eigen import eigh
from .errors import (
    IntegrationError,
    LindbladiffError,
    ShapeMismatchError,
    ValidationError,
)
from .linalg import operator_to_json, to_dense, operator_from_json
from .model import (
    DensityOperator,
    LindbladModel,
    all_zero_density,
    model_from_json,
    preset_oat,
)
from .optimize import OptConfig, OptTrace, gradient_check, maximize_qfi
from .qfi import Generator, generator_from_preset, qfi_of_params
from .solver import SolveConfig, dense_segment, integrate

SCHEMA = "lindbladiff-report/1"

_TRACE_HEADER = ("iter", "F", "grad_norm", "step")
_TRAJECTORY_HEADER = ("t", "trace_rho", "purity", "min_eig")


# --------------------------------------------------------------------------
# config resolution
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved run description plus its JSON echo."""

    model: LindbladModel
    params: np.ndarray | None  # None means "initialize from seed" (optimize)
    state: DensityOperator
    t_span: tuple[float, float]
    solver: SolveConfig
    generator: Generator
    optimizer: OptConfig
    times_four: bool
    grad_fd_step: float
    grad_tolerance: float
    output: str | None
    echo: dict

    @property
    def x(self) -> np.ndarray:
        if self.params is None:
            raise ValidationError("parameters are required for this pipeline", path="/params")
        return self.params


def _repath(exc: ValidationError, base: str) -> ValidationError:
    """Re-anchor a nested validation error under a new JSON-pointer base."""
    msg = str(exc)
    if exc.path and msg.startswith(exc.path + ": "):
        msg = msg[len(exc.path) + 2 :]
    return ValidationError(msg, path=base + (exc.path or ""))


def _load_json(path: str, pointer: str) -> dict | list:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"file {path!r} does not exist", path=pointer)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"file {path!r} is not valid JSON ({exc})", path=pointer)


def _preset_size(spec: str, family: str, pointer: str) -> int:
    prefix = family + ":"
    if not spec.startswith(prefix):
        raise ValidationError(f"unknown preset {spec!r} (expected {prefix}<n>)", path=pointer)
    try:
        n = int(spec[len(prefix) :])
    except ValueError:
        raise ValidationError(f"preset size in {spec!r} is not an integer", path=pointer)
    if n < 1:
        raise ValidationError(f"preset size must be at least 1, got {n}", path=pointer)
    return n


def _qubit_count(dimension: int, pointer: str) -> int:
    n = dimension.bit_length() - 1
    if 2**n != dimension:
        raise ValidationError(
            f"dimension {dimension} is not a power of two; presets need qubit registers",
            path=pointer,
        )
    return n


def _resolve_model(spec, pointer: str) -> tuple[LindbladModel, dict]:
    if isinstance(spec, str):
        spec = {"preset": spec}
    if not isinstance(spec, dict):
        raise ValidationError("model must be a preset string or an object", path=pointer)
    if "file" in spec:
        raw = _load_json(spec["file"], pointer + "/file")
        try:
            model = model_from_json(raw)
        except ValidationError as exc:
            raise _repath(exc, pointer + "/file")
        return model, {"file": str(spec["file"])}
    if "preset" in spec:
        n = _preset_size(str(spec["preset"]), "oat", pointer + "/preset")
        gamma = float(spec.get("gamma", 0.0))
        if gamma < 0:
            raise ValidationError(f"gamma must be nonnegative, got {gamma}", path=pointer + "/gamma")
        return preset_oat(n, gamma), {"preset": f"oat:{n}", "gamma": gamma}
    raise ValidationError("model needs a 'preset' or a 'file'", path=pointer)


def _resolve_state(spec, model: LindbladModel, pointer: str) -> tuple[DensityOperator, object]:
    if spec is None:
        n = _qubit_count(model.dimension, pointer)
        spec = f"all-zero-pure:{n}"
    if isinstance(spec, str):
        n = _preset_size(spec, "all-zero-pure", pointer)
        if 2**n != model.dimension:
            raise ValidationError(
                f"state preset is {2**n}-dimensional but the model is {model.dimension}-dimensional",
                path=pointer,
            )
        return all_zero_density(n), f"all-zero-pure:{n}"
    if isinstance(spec, dict) and "file" in spec:
        raw = _load_json(spec["file"], pointer + "/file")
        try:
            matrix = to_dense(operator_from_json(raw, name="state"))
            state = DensityOperator.from_matrix(matrix)
        except ValidationError as exc:
            raise _repath(exc, pointer + "/file")
        if state.matrix.shape != (model.dimension, model.dimension):
            raise ValidationError(
                f"state shape {state.matrix.shape} does not match model dimension {model.dimension}",
                path=pointer + "/file",
            )
        return state, {"file": str(spec["file"])}
    raise ValidationError("state must be 'all-zero-pure:<n>' or {'file': path}", path=pointer)


def _resolve_generator(spec, model: LindbladModel, pointer: str) -> tuple[Generator, object]:
    if spec is None:
        n = _qubit_count(model.dimension, pointer)
        spec = f"Sz:{n}"
    if isinstance(spec, str):
        n = _preset_size(spec, "Sz", pointer)
        if 2**n != model.dimension:
            raise ValidationError(
                f"generator preset is {2**n}-dimensional but the model is {model.dimension}-dimensional",
                path=pointer,
            )
        return generator_from_preset("Sz", n), f"Sz:{n}"
    if isinstance(spec, dict) and "file" in spec:
        raw = _load_json(spec["file"], pointer + "/file")
        try:
            g = Generator(to_dense(operator_from_json(raw, name="generator")))
        except ValidationError as exc:
            raise _repath(exc, pointer + "/file")
        if g.dimension != model.dimension:
            raise ValidationError(
                f"generator dimension {g.dimension} does not match model dimension {model.dimension}",
                path=pointer + "/file",
            )
        return g, {"file": str(spec["file"])}
    raise ValidationError("generator must be 'Sz:<n>' or {'file': path}", path=pointer)


def _float_field(obj: dict, key: str, default, pointer: str):
    value = obj.get(key, default)
    if value is None:
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{key} must be a number, got {value!r}", path=f"{pointer}/{key}")


def _int_field(obj: dict, key: str, default, pointer: str):
    value = obj.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ValidationError(f"{key} must be an integer, got {value!r}", path=f"{pointer}/{key}")
    return int(value)


def _resolve_solver(spec, pointer: str) -> tuple[SolveConfig, dict]:
    spec = dict(spec or {})
    known = {"rtol", "atol", "initial_step", "max_steps", "checkpoints"}
    for key in spec:
        if key not in known:
            raise ValidationError(f"unknown solver option {key!r}", path=f"{pointer}/{key}")
    defaults = SolveConfig()
    try:
        cfg = SolveConfig(
            rtol=_float_field(spec, "rtol", defaults.rtol, pointer),
            atol=_float_field(spec, "atol", defaults.atol, pointer),
            initial_step=_float_field(spec, "initial_step", None, pointer),
            max_steps=_int_field(spec, "max_steps", defaults.max_steps, pointer),
            checkpoints=_int_field(spec, "checkpoints", None, pointer),
        )
    except ValidationError as exc:
        if exc.path:
            raise
        raise ValidationError(str(exc), path=pointer)
    echo = {
        "rtol": cfg.rtol,
        "atol": cfg.atol,
        "initial_step": cfg.initial_step,
        "max_steps": cfg.max_steps,
        "checkpoints": cfg.checkpoint_budget,
    }
    return cfg, echo


def _resolve_optimizer(spec, pointer: str) -> tuple[OptConfig, dict]:
    spec = dict(spec or {})
    known = {
        "max_iterations",
        "initial_step",
        "backtracking_factor",
        "armijo_constant",
        "grad_tolerance",
        "seed",
    }
    for key in spec:
        if key not in known:
            raise ValidationError(f"unknown optimizer option {key!r}", path=f"{pointer}/{key}")
    defaults = OptConfig()
    try:
        cfg = OptConfig(
            max_iterations=_int_field(spec, "max_iterations", defaults.max_iterations, pointer),
            initial_step=_float_field(spec, "initial_step", defaults.initial_step, pointer),
            backtracking_factor=_float_field(
                spec, "backtracking_factor", defaults.backtracking_factor, pointer
            ),
            armijo_constant=_float_field(spec, "armijo_constant", defaults.armijo_constant, pointer),
            grad_tolerance=_float_field(spec, "grad_tolerance", defaults.grad_tolerance, pointer),
            seed=_int_field(spec, "seed", defaults.seed, pointer),
        )
    except ValidationError as exc:
        if exc.path:
            raise
        raise ValidationError(str(exc), path=pointer)
    echo = {
        "max_iterations": cfg.max_iterations,
        "initial_step": cfg.initial_step,
        "backtracking_factor": cfg.backtracking_factor,
        "armijo_constant": cfg.armijo_constant,
        "grad_tolerance": cfg.grad_tolerance,
        "seed": cfg.seed,
    }
    return cfg, echo


def resolve_config(raw: dict, subcommand: str) -> ExperimentConfig:
    """Validate the raw config object and fill in every default.

    The returned echo contains only resolved values, so feeding it back
    through this function reproduces the exact same run.
    """
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object", path="")
    known = {
        "model",
        "params",
        "state",
        "t_span",
        "solver",
        "generator",
        "optimizer",
        "times_four",
        "grad_check",
        "output",
    }
    for key in raw:
        if key not in known:
            raise ValidationError(f"unknown config key {key!r}", path=f"/{key}")

    model, model_echo = _resolve_model(raw.get("model", "oat:2"), "/model")

    params = raw.get("params")
    if params is not None:
        if not isinstance(params, (list, tuple)):
            raise ValidationError("params must be an array of numbers", path="/params")
        try:
            params = np.array([float(v) for v in params], dtype=float)
        except (TypeError, ValueError):
            raise ValidationError("params must be an array of numbers", path="/params")
        if params.size != model.n_params:
            raise ValidationError(
                f"model takes {model.n_params} parameters, got {params.size}", path="/params"
            )
        if not np.all(np.isfinite(params)):
            raise ValidationError("params must be finite", path="/params")
    elif subcommand != "optimize":
        params = np.zeros(model.n_params)

    state, state_echo = _resolve_state(raw.get("state"), model, "/state")

    t_span = raw.get("t_span", [0.0, 1.0])
    if not isinstance(t_span, (list, tuple)) or len(t_span) != 2:
        raise ValidationError("t_span must be [t0, t1]", path="/t_span")
    try:
        t0, t1 = float(t_span[0]), float(t_span[1])
    except (TypeError, ValueError):
        raise ValidationError("t_span entries must be numbers", path="/t_span")
    if not (np.isfinite(t0) and np.isfinite(t1)):
        raise ValidationError("t_span entries must be finite", path="/t_span")
    if not t1 > t0:
        raise ValidationError(f"t_span needs t1 > t0, got [{t0}, {t1}]", path="/t_span/1")

    solver, solver_echo = _resolve_solver(raw.get("solver"), "/solver")
    generator, generator_echo = _resolve_generator(raw.get("generator"), model, "/generator")
    optimizer, optimizer_echo = _resolve_optimizer(raw.get("optimizer"), "/optimizer")

    times_four = raw.get("times_four", False)
    if not isinstance(times_four, bool):
        raise ValidationError("times_four must be a boolean", path="/times_four")

    gc = dict(raw.get("grad_check") or {})
    for key in gc:
        if key not in {"fd_step", "tolerance"}:
            raise ValidationError(f"unknown grad_check option {key!r}", path=f"/grad_check/{key}")
    fd_step = _float_field(gc, "fd_step", 1e-6, "/grad_check")
    tolerance = _float_field(gc, "tolerance", 1e-4, "/grad_check")
    if not fd_step > 0:
        raise ValidationError("fd_step must be positive", path="/grad_check/fd_step")
    if not tolerance > 0:
        raise ValidationError("tolerance must be positive", path="/grad_check/tolerance")

    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise ValidationError("output must be a path string", path="/output")

    echo = {
        "model": model_echo,
        "params": None if params is None else [float(v) for v in params],
        "state": state_echo,
        "t_span": [t0, t1],
        "solver": solver_echo,
        "generator": generator_echo,
        "optimizer": optimizer_echo,
        "times_four": times_four,
        "grad_check": {"fd_step": fd_step, "tolerance": tolerance},
        "output": output,
    }
    return ExperimentConfig(
        model=model,
        params=params,
        state=state,
        t_span=(t0, t1),
        solver=solver,
        generator=generator,
        optimizer=optimizer,
        times_four=times_four,
        grad_fd_step=fd_step,
        grad_tolerance=tolerance,
        output=output,
        echo=echo,
    )


# --------------------------------------------------------------------------
# plot data emission
# --------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def emit_plot_data(data, path: str, kind: str | None = None) -> str:
    """Write a plot-ready CSV table and return the resolved kind.

    ``data`` is an optimization trace (an OptTrace, or an iterable of its
    JSON rows) for kind "trace", or an iterable of (t, trace_rho, purity,
    min_eig) rows for kind "trajectory".  The kind is inferred when the
    data makes it unambiguous.  Numbers are written with 17 significant
    digits so round-tripping is exact.
    """
    if isinstance(data, OptTrace):
        if kind not in (None, "trace"):
            raise ValidationError(f"an optimization trace cannot emit kind {kind!r}")
        kind = "trace"
        rows = [(it.iteration, it.value, it.grad_norm, it.step) for it in data.iterates]
    else:
        items = list(data)
        if kind is None:
            if not items:
                raise ValidationError("cannot infer plot kind from empty data; pass kind explicitly")
            kind = "trace" if isinstance(items[0], dict) else "trajectory"
        if kind == "trace":
            rows = []
            for i, row in enumerate(items):
                if isinstance(row, dict):
                    try:
                        rows.append((row["iter"], row["F"], row["grad_norm"], row["step"]))
                    except KeyError as exc:
                        raise ValidationError(f"trace row {i} is missing column {exc}")
                else:
                    rows.append(tuple(row))
        elif kind == "trajectory":
            rows = [tuple(row) for row in items]
        else:
            raise ValidationError(f"unknown plot kind {kind!r}")

    header = _TRACE_HEADER if kind == "trace" else _TRAJECTORY_HEADER
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValidationError(f"plot row {i} has {len(row)} columns, expected {len(header)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return kind


# --------------------------------------------------------------------------
# pipelines
# --------------------------------------------------------------------------


def _final_state_summary(rho: np.ndarray) -> dict:
    dec = eigh(rho)
    return {
        "matrix": operator_to_json(rho),
        "trace": float(np.trace(rho).real),
        "purity": float(np.trace(rho @ rho).real),
        "min_eigenvalue": float(dec.eigenvalues[0]),
    }


def _stats_json(stats) -> dict:
    return {
        "accepted": stats.accepted,
        "rejected": stats.rejected,
        "rhs_evaluations": stats.rhs_evaluations,
        "trace_drift": stats.trace_drift,
        "hermiticity_drift": stats.hermiticity_drift,
        "min_step": stats.min_step,
        "max_step": stats.max_step,
    }


def _run_solve(cfg: ExperimentConfig) -> tuple[dict, dict, int]:
    tic = time.perf_counter()
    result = integrate(cfg.model, cfg.x, cfg.state, cfg.t_span, cfg.solver)
    elapsed = time.perf_counter() - tic
    stage = {
        "stats": _stats_json(result.stats),
        "checkpoints_retained": len(result.checkpoints),
        "final_state": _final_state_summary(result.final_state.matrix),
    }
    return {"solve": stage}, {"solve": elapsed}, 0


def _run_qfi(cfg: ExperimentConfig, want_gradient: bool) -> tuple[dict, dict, int]:
    tic = time.perf_counter()
    report = qfi_of_params(
        cfg.model,
        cfg.x,
        cfg.state,
        cfg.t_span,
        cfg.generator,
        cfg.solver,
        want_gradient=want_gradient,
        times_four=cfg.times_four,
    )
    elapsed = time.perf_counter() - tic
    stages = {
        "solve": {"stats": report.diagnostics.get("solver", {})},
        "eigen": {
            "clusters": [list(c) for c in report.clusters],
            "min_gap": report.min_gap,
        },
        "qfi": report.to_json(),
    }
    if want_gradient:
        stages["adjoint"] = report.diagnostics.get("adjoint", {})
    return stages, {"qfi": elapsed}, 0


def _run_grad_check(cfg: ExperimentConfig) -> tuple[dict, dict, int]:
    tic = time.perf_counter()
    verdict = gradient_check(
        cfg.model,
        cfg.x,
        cfg.state,
        cfg.t_span,
        cfg.generator,
        cfg.solver,
        h=cfg.grad_fd_step,
        tol=cfg.grad_tolerance,
    )
    elapsed = time.perf_counter() - tic
    code = 0 if verdict["pass"] else 4
    return {"grad_check": verdict}, {"grad_check": elapsed}, code


def _trace_path(out: str) -> str:
    p = Path(out)
    return str(p.with_name(p.stem + ".trace.jsonl"))


def _write_trace_lines(trace: OptTrace, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for it in trace.iterates:
            fh.write(json.dumps(it.to_json()) + "\n")
        summary = {
            "summary": {
                "status": trace.status,
                "evaluations": trace.evaluations,
                "iterations": len(trace.iterates),
                "best_F": trace.best.value,
                "best_x": [float(v) for v in trace.best.x],
            }
        }
        fh.write(json.dumps(summary) + "\n")


def _run_optimize(cfg: ExperimentConfig, out: str | None) -> tuple[dict, dict, int]:
    tic = time.perf_counter()
    x_best, trace = maximize_qfi(
        cfg.model,
        cfg.params,
        cfg.state,
        cfg.t_span,
        cfg.generator,
        cfg.solver,
        cfg.optimizer,
        times_four=cfg.times_four,
    )
    elapsed = time.perf_counter() - tic
    stage = {
        "status": trace.status,
        "evaluations": trace.evaluations,
        "iterations": len(trace.iterates),
        "best": trace.best.to_json(),
        "x_best": [float(v) for v in x_best],
        "trace": [it.to_json() for it in trace.iterates],
    }
    if out:
        trace_file = _trace_path(out)
        _write_trace_lines(trace, trace_file)
        stage["trace_file"] = trace_file
    return {"optimize": stage}, {"optimize": elapsed}, 0


def _trajectory_rows(cfg: ExperimentConfig) -> list[tuple[float, float, float, float]]:
    result = integrate(cfg.model, cfg.x, cfg.state, cfg.t_span, cfg.solver)
    t0 = cfg.t_span[0]
    start = cfg.state.matrix if not result.checkpoints else result.checkpoints[0][1]
    nodes = dense_segment(cfg.model, cfg.x, start, cfg.t_span, cfg.solver, result=result)
    rows = []
    for t, rho in nodes:
        dec = eigh(rho)
        rows.append(
            (
                float(t),
                float(np.trace(rho).real),
                float(np.trace(rho @ rho).real),
                float(dec.eigenvalues[0]),
            )
        )
    if rows and rows[0][0] != t0:
        raise IntegrationError("trajectory replay lost its left endpoint")
    return rows


def _read_trace_file(path: str) -> list[dict]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {lineno} of {path!r} is not valid JSON ({exc})")
        if "summary" in record:
            continue
        rows.append(record)
    return rows


# --------------------------------------------------------------------------
# argument parsing and dispatch
# --------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON file")
    common.add_argument("--out", help="report (or CSV) output path; stdout when omitted")
    common.add_argument("--seed", type=int, help="override optimizer seed")
    common.add_argument("--rtol", type=float, help="override solver relative tolerance")
    common.add_argument("--atol", type=float, help="override solver absolute tolerance")

    model_flags = argparse.ArgumentParser(add_help=False)
    model_flags.add_argument("--model", help="model preset like oat:2, or a model JSON file")
    model_flags.add_argument("--params", help="comma-separated protocol parameters")
    model_flags.add_argument("--generator", help="generator preset like Sz:2, or a JSON file")

    parser = argparse.ArgumentParser(
        prog="lindbladiff",
        description="Differentiable open-system dynamics and metrology pipelines.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    sub.add_parser("solve", parents=[common, model_flags], help="integrate the master equation")
    qfi_p = sub.add_parser(
        "qfi", parents=[common, model_flags], help="evaluate the figure of merit"
    )
    qfi_p.add_argument("--grad", action="store_true", help="also compute the gradient")
    gc_p = sub.add_parser(
        "grad-check", parents=[common, model_flags], help="cross-validate gradient routes"
    )
    gc_p.add_argument("--tol", type=float, default=None, help="verdict tolerance (default 1e-4)")
    sub.add_parser(
        "optimize", parents=[common, model_flags], help="maximize the figure of merit"
    )
    plots = sub.add_parser(
        "emit-plots", parents=[common, model_flags], help="write plot-ready CSV tables"
    )
    plots.add_argument(
        "--kind",
        choices=("trace", "trajectory"),
        required=True,
        help="optimization trace or state trajectory",
    )
    plots.add_argument("--trace-file", help="existing trace JSONL to convert (kind=trace)")
    return parser


def _spec_from_flag(value: str):
    """A --model/--generator flag is a preset tag if it looks like name:<int>."""
    head, sep, tail = value.partition(":")
    if sep and head and tail.lstrip("+-").isdigit():
        return value
    return {"file": value}


def _raw_config(args) -> dict:
    raw = _load_json(args.config, "--config") if args.config else {}
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object", path="")
    raw = dict(raw)
    if getattr(args, "model", None):
        raw["model"] = _spec_from_flag(args.model)
    if getattr(args, "generator", None):
        raw["generator"] = _spec_from_flag(args.generator)
    if getattr(args, "params", None) is not None:
        try:
            raw["params"] = [float(tok) for tok in args.params.split(",") if tok.strip()]
        except ValueError:
            raise ValidationError(f"--params {args.params!r} must be comma-separated numbers", path="/params")
    if args.seed is not None:
        raw["optimizer"] = {**dict(raw.get("optimizer") or {}), "seed": args.seed}
    if args.rtol is not None:
        raw["solver"] = {**dict(raw.get("solver") or {}), "rtol": args.rtol}
    if args.atol is not None:
        raw["solver"] = {**dict(raw.get("solver") or {}), "atol": args.atol}
    if getattr(args, "tol", None) is not None:
        raw["grad_check"] = {**dict(raw.get("grad_check") or {}), "tolerance": args.tol}
    return raw


def _write_report(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=2) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dispatch(args) -> int:
    raw = _raw_config(args)
    out = args.out or raw.get("output")

    if args.subcommand == "emit-plots":
        if not out:
            raise ValidationError("emit-plots needs --out (or config 'output') for the CSV path")
        if args.kind == "trace" and args.trace_file:
            emit_plot_data(_read_trace_file(args.trace_file), out, kind="trace")
            return 0
        cfg = resolve_config(raw, "optimize" if args.kind == "trace" else "solve")
        if args.kind == "trace":
            _, trace = maximize_qfi(
                cfg.model,
                cfg.params,
                cfg.state,
                cfg.t_span,
                cfg.generator,
                cfg.solver,
                cfg.optimizer,
                times_four=cfg.times_four,
            )
            emit_plot_data(trace, out, kind="trace")
        else:
            emit_plot_data(_trajectory_rows(cfg), out, kind="trajectory")
        return 0

    cfg = resolve_config(raw, args.subcommand)
    if args.subcommand == "solve":
        stages, timings, code = _run_solve(cfg)
    elif args.subcommand == "qfi":
        stages, timings, code = _run_qfi(cfg, want_gradient=bool(args.grad))
    elif args.subcommand == "grad-check":
        stages, timings, code = _run_grad_check(cfg)
    elif args.subcommand == "optimize":
        stages, timings, code = _run_optimize(cfg, out)
    else:  # pragma: no cover - argparse enforces the choices
        raise ValidationError(f"unknown subcommand {args.subcommand!r}")

    report = {
        "schema": SCHEMA,
        "subcommand": args.subcommand,
        "exit_code": code,
        "config": cfg.echo,
        "stages": stages,
        "timings": timings,
    }
    _write_report(report, out)
    return code


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except ShapeMismatchError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except IntegrationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except LindbladiffError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
