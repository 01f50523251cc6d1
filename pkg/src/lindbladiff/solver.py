"""Adaptive integration of the master equation with a checkpoint trail.

The stepper is an embedded Runge--Kutta 5(4) pair (Dormand--Prince
coefficients, FSAL) operating natively on the complex density matrix, with
a stabilized PI step-size controller.  Every accepted step time and step
size is recorded, so any segment between two checkpoints can later be
replayed on the recorded grid; replay performs the same floating-point
operations as the original pass and is therefore bit-identical.  Trace is
never renormalized -- trace drift is reported as a diagnostic instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import IntegrationError, ValidationError
from .instrumentation import counters
from .model import DensityOperator, LindbladModel, lindblad_rhs

# Dormand-Prince 5(4) tableau.  The 5th-order weights equal the last stage
# row (FSAL): k7 of an accepted step is k1 of the next.
_C2, _C3, _C4, _C5, _C6 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0

_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
# 5th-order minus embedded 4th-order weights (error estimator)
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)

# stage weights/coupling in array form for the reverse (adjoint) pass
STAGE_B = np.array([_B1, 0.0, _B3, _B4, _B5, _B6])
STAGE_A = np.zeros((6, 6))
STAGE_A[1, 0] = _A21
STAGE_A[2, :2] = (_A31, _A32)
STAGE_A[3, :3] = (_A41, _A42, _A43)
STAGE_A[4, :4] = (_A51, _A52, _A53, _A54)
STAGE_A[5, :5] = (_A61, _A62, _A63, _A64, _A65)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_K_EXP = 0.7 / 5.0  # proportional exponent (on the current error)
_KI_EXP = 0.4 / 5.0  # integral exponent (on the previous error)
_UNDERFLOW = 1e-14


@dataclass(frozen=True)
class SolveConfig:
    """Tolerances and budgets for one integration."""

    rtol: float = 1e-8
    atol: float = 1e-10
    initial_step: float | None = None
    max_steps: int = 100_000
    checkpoints: int | None = None  # default: ceil(sqrt(max_steps))

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValidationError("tolerances must be positive")
        if self.max_steps < 1:
            raise ValidationError("max_steps must be at least 1")
        if self.initial_step is not None and not self.initial_step > 0:
            raise ValidationError("initial_step must be positive when given")
        if self.checkpoints is not None and self.checkpoints < 2:
            raise ValidationError("checkpoint count must be at least 2")

    @property
    def checkpoint_budget(self) -> int:
        if self.checkpoints is not None:
            return self.checkpoints
        return int(math.ceil(math.sqrt(self.max_steps)))


@dataclass(frozen=True)
class SolveStats:
    accepted: int
    rejected: int
    rhs_evaluations: int
    trace_drift: float
    hermiticity_drift: float
    min_step: float
    max_step: float

    def to_json(self) -> dict:
        return {
            "accepted": self.accepted,
            "rejected": self.rejected,
            "rhs_evals": self.rhs_evaluations,
            "trace_drift": self.trace_drift,
        }


@dataclass(frozen=True)
class SolveResult:
    """Final state plus the recorded trail needed for exact replay."""

    final_state: DensityOperator
    checkpoints: tuple[tuple[float, np.ndarray], ...]
    checkpoint_indices: tuple[int, ...]
    step_times: np.ndarray  # accepted times, t0 ... T, length accepted+1
    step_sizes: np.ndarray  # accepted step sizes, length accepted
    stats: SolveStats
    t_span: tuple[float, float]
    config: SolveConfig

    @property
    def accepted_steps(self) -> int:
        return self.step_sizes.shape[0]


def _rms(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.abs(values) ** 2)))


def _error_norm(delta: np.ndarray, y: np.ndarray, y_new: np.ndarray, rtol: float, atol: float) -> float:
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    return _rms(np.abs(delta) / scale)


def dp5_step_detail(
    f: Callable[[float, np.ndarray], np.ndarray],
    t: float,
    y: np.ndarray,
    h: float,
    k1: np.ndarray | None = None,
) -> tuple[np.ndarray, list[np.ndarray], list[float], list[np.ndarray]]:
    """All six stages of one step: (y_new, slopes, stage_times, stage_states).

    This is the single source of the stage arithmetic; the adaptive loop,
    segment replay, and the reverse pass all go through it, so a replayed
    step performs bit-identical floating-point operations.
    """
    if k1 is None:
        k1 = f(t, y)
    t2, t3, t4, t5, t6 = t + _C2 * h, t + _C3 * h, t + _C4 * h, t + _C5 * h, t + h
    y2 = y + h * (_A21 * k1)
    k2 = f(t2, y2)
    y3 = y + h * (_A31 * k1 + _A32 * k2)
    k3 = f(t3, y3)
    y4 = y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3)
    k4 = f(t4, y4)
    y5 = y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4)
    k5 = f(t5, y5)
    y6 = y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5)
    k6 = f(t6, y6)
    y_new = y + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
    return y_new, [k1, k2, k3, k4, k5, k6], [t, t2, t3, t4, t5, t6], [y, y2, y3, y4, y5, y6]


def _dp5_step(
    f: Callable[[float, np.ndarray], np.ndarray],
    t: float,
    y: np.ndarray,
    h: float,
    k1: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One 5th-order step with error estimate: (y_new, k7, error_estimate).

    k7 = f(t+h, y_new) doubles as k1 of the following step (FSAL).
    """
    y_new, ks, _, _ = dp5_step_detail(f, t, y, h, k1)
    k7 = f(t + h, y_new)
    delta = h * (_E1 * ks[0] + _E3 * ks[2] + _E4 * ks[3] + _E5 * ks[4] + _E6 * ks[5] + _E7 * k7)
    return y_new, k7, delta


def _initial_step(
    f: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    y0: np.ndarray,
    f0: np.ndarray,
    span: float,
    rtol: float,
    atol: float,
) -> float:
    """Starting step size from the standard two-evaluation heuristic."""
    scale = atol + rtol * np.abs(y0)
    d0 = _rms(np.abs(y0) / scale)
    d1 = _rms(np.abs(f0) / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = _rms(np.abs(f1 - f0) / scale) / h0
    dmax = max(d1, d2)
    h1 = max(1e-6, h0 * 1e-3) if dmax <= 1e-15 else (0.01 / dmax) ** 0.2
    return min(100.0 * h0, h1, span)


@dataclass
class _CoreTrail:
    """Raw output of the adaptive loop, before model-level validation."""

    final: np.ndarray
    step_times: np.ndarray
    step_sizes: np.ndarray
    accepted: int
    rejected: int
    min_step: float
    max_step: float
    checkpoints: list[tuple[int, float, np.ndarray]]


def _adaptive_core(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t0: float,
    t_final: float,
    cfg: SolveConfig,
) -> _CoreTrail:
    """Adaptive 5(4) loop on an arbitrary complex array state.

    Records every accepted step time and size, and keeps a thinned
    checkpoint list: stride doubles whenever the stored count would exceed
    the budget, so checkpoints stay roughly equally spaced in accepted-step
    index; the first entry is t0 and the last is t_final.
    """
    y = y0
    span = t_final - t0
    f0 = f(t0, y)
    h = cfg.initial_step if cfg.initial_step is not None else _initial_step(f, t0, y, f0, span, cfg.rtol, cfg.atol)
    h = min(h, span)

    budget = cfg.checkpoint_budget
    stored: list[tuple[int, float, np.ndarray]] = [(0, t0, y.copy())]
    stride = 1

    step_times = [t0]
    step_sizes: list[float] = []
    t = t0
    k1 = f0
    err_prev = 1.0
    accepted = 0
    rejected = 0
    min_h = math.inf
    max_h = 0.0

    while t < t_final:
        if accepted + rejected >= cfg.max_steps:
            raise IntegrationError(
                f"step budget exhausted after {accepted} accepted / {rejected} rejected steps "
                f"at t = {t:.6g} of {t_final:.6g}"
            )
        if h < _UNDERFLOW * span:
            raise IntegrationError(f"step size underflow (h = {h:.3e}) at t = {t:.6g}")
        last = t + h >= t_final
        if last:
            h = t_final - t
        y_new, k7, delta = _dp5_step(f, t, y, h, k1)
        if not np.all(np.isfinite(y_new)) or not np.all(np.isfinite(delta)):
            raise IntegrationError(f"non-finite state produced at t = {t:.6g} with h = {h:.3e}")
        err = _error_norm(delta, y, y_new, cfg.rtol, cfg.atol)
        if err <= 1.0:
            t = t_final if last else t + h
            y = y_new
            k1 = k7
            accepted += 1
            min_h = min(min_h, h)
            max_h = max(max_h, h)
            step_times.append(t)
            step_sizes.append(h)
            if accepted % stride == 0 and t < t_final:
                stored.append((accepted, t, y.copy()))
                # reserve one slot for the final state appended below
                if len(stored) > budget - 1:
                    stored = stored[::2]
                    stride *= 2
            if err == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = _SAFETY * err ** (-_K_EXP) * err_prev**_KI_EXP
                factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            err_prev = err
            h = h * factor
        else:
            rejected += 1
            factor = _SAFETY * err ** (-_K_EXP)
            h = h * min(1.0, max(_MIN_FACTOR, factor))

    stored.append((accepted, t_final, y.copy()))
    return _CoreTrail(
        final=y,
        step_times=np.array(step_times),
        step_sizes=np.array(step_sizes),
        accepted=accepted,
        rejected=rejected,
        min_step=min_h,
        max_step=max_h,
        checkpoints=stored,
    )


def _check_inputs(
    model: LindbladModel, x: np.ndarray, rho0: DensityOperator | np.ndarray, t_span: tuple[float, float]
) -> tuple[np.ndarray, np.ndarray, float, float]:
    t0, t_final = float(t_span[0]), float(t_span[1])
    if not (np.isfinite(t0) and np.isfinite(t_final)) or not t_final > t0:
        raise ValidationError(f"need a finite span with T > t0, got ({t0}, {t_final})")
    if isinstance(rho0, DensityOperator):
        y = rho0.matrix.astype(np.complex128, copy=True)
    else:
        y = DensityOperator.from_matrix(rho0).matrix.astype(np.complex128, copy=True)
    if y.shape != (model.dimension, model.dimension):
        raise ValidationError(
            f"initial state dimension {y.shape[0]} does not match model dimension {model.dimension}"
        )
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_params,):
        raise ValidationError(f"parameter vector shape {x.shape} != ({model.n_params},)")
    return y, x, t0, t_final


def integrate(
    model: LindbladModel,
    x: np.ndarray,
    rho0: DensityOperator | np.ndarray,
    t_span: tuple[float, float],
    cfg: SolveConfig = SolveConfig(),
) -> SolveResult:
    """Integrate the master equation from t0 to T with adaptive steps.

    Returns the final state, a thinned checkpoint trail (first entry at t0,
    last at T, roughly equally spaced in accepted-step index, at most the
    configured checkpoint count), and the full accepted step grid.
    """
    y0, x, t0, t_final = _check_inputs(model, x, rho0, t_span)
    trace0 = float(np.trace(y0).real)

    rhs_calls = 0

    def f(t: float, state: np.ndarray) -> np.ndarray:
        nonlocal rhs_calls
        rhs_calls += 1
        return lindblad_rhs(t, state, model, x)

    trail = _adaptive_core(f, y0, t0, t_final, cfg)
    y = trail.final

    tol_scale = max(1e-9, 50.0 * cfg.rtol)
    final_state = DensityOperator.from_matrix(
        y, trace_tol=tol_scale, herm_tol=tol_scale, psd_tol=max(1e-7, tol_scale)
    )
    stats = SolveStats(
        accepted=trail.accepted,
        rejected=trail.rejected,
        rhs_evaluations=rhs_calls,
        trace_drift=abs(float(np.trace(y).real) - trace0),
        hermiticity_drift=float(np.linalg.norm(y - y.conj().T)),
        min_step=trail.min_step,
        max_step=trail.max_step,
    )
    counters.forward_integrations += 1
    counters.rhs_evaluations += rhs_calls

    return SolveResult(
        final_state=final_state,
        checkpoints=tuple((tm, state) for _, tm, state in trail.checkpoints),
        checkpoint_indices=tuple(idx for idx, _, _ in trail.checkpoints),
        step_times=trail.step_times,
        step_sizes=trail.step_sizes,
        stats=stats,
        t_span=(t0, t_final),
        config=cfg,
    )


def _locate_time(times: np.ndarray, t: float, what: str) -> int:
    idx = int(np.searchsorted(times, t))
    if idx >= times.shape[0] or times[idx] != t:
        raise ValidationError(f"{what} {t!r} is not a recorded accepted-step time")
    return idx


def dense_segment(
    model: LindbladModel,
    x: np.ndarray,
    state_at_checkpoint: np.ndarray,
    t_span: tuple[float, float],
    cfg: SolveConfig = SolveConfig(),
    *,
    result: SolveResult | None = None,
) -> list[tuple[float, np.ndarray]]:
    """Recompute every accepted step state on [t_a, t_b] for the reverse pass.

    When ``result`` is supplied, the segment is replayed on the recorded
    accepted-step grid: the same step sizes, hence the same floating-point
    operations, hence bit-identical states.  Without a recorded trail the
    segment is integrated adaptively (still deterministic call-to-call).
    Returns [(t_a, state_a), ..., (t_b, state_b)] including both endpoints.
    """
    t_a, t_b = float(t_span[0]), float(t_span[1])
    if not t_b > t_a:
        raise ValidationError(f"segment needs t_b > t_a, got ({t_a}, {t_b})")
    x = np.asarray(x, dtype=float)
    # no copy: the returned list shares the caller's checkpoint array as its
    # left endpoint, keeping reverse-pass retained states at K + segment steps
    y = np.asarray(state_at_checkpoint, dtype=np.complex128)

    if result is None:
        sub = integrate(model, x, DensityOperator.from_matrix(y, psd_tol=1e-6), (t_a, t_b), cfg)
        replay = dense_segment(model, x, y, (t_a, t_b), cfg, result=sub)
        return replay

    rhs_calls = 0

    def f(t: float, state: np.ndarray) -> np.ndarray:
        nonlocal rhs_calls
        rhs_calls += 1
        return lindblad_rhs(t, state, model, x)

    times = result.step_times
    ia = _locate_time(times, t_a, "segment start")
    ib = _locate_time(times, t_b, "segment end")
    out: list[tuple[float, np.ndarray]] = [(t_a, y)]
    for n in range(ia, ib):
        t_n = float(times[n])
        h_n = float(result.step_sizes[n])
        y, _, _, _ = dp5_step_detail(f, t_n, y, h_n)
        out.append((float(times[n + 1]), y))
    counters.rhs_evaluations += rhs_calls
    return out
