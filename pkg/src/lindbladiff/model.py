"""Parameterized open-system model and master-equation right-hand side.

The generator acts on density matrices as

    d(rho)/dt = -i [H(t, x), rho]
                + sum_j gamma_j (J_j rho J_j^dag - (1/2) {J_j^dag J_j, rho})

with a Hermitian, time- and parameter-dependent Hamiltonian H and fixed jump
channels (gamma_j, J_j).  The right-hand side is evaluated on raw complex
matrices: intermediate integrator stages legitimately violate trace and
positivity, so state invariants are only enforced on accepted states via
DensityOperator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import linalg
from .errors import ShapeMismatchError, ValidationError
from .linalg import Operator
from .spins import LOWERING, all_zero_state, as_sparse, collective_sx, collective_sz, embed_single

#: Step used by the central-difference fallback for dH/dx_k, scaled by max(1, |x_k|).
FD_FALLBACK_STEP = 1e-6


@dataclass(frozen=True)
class DensityOperator:
    """Validated quantum state: Hermitian, unit-trace, PSD complex matrix."""

    matrix: np.ndarray
    n_qubits: int

    @classmethod
    def from_matrix(
        cls,
        matrix,
        *,
        trace_tol: float = 1e-9,
        herm_tol: float = 1e-9,
        psd_tol: float = 1e-9,
    ) -> "DensityOperator":
        m = linalg.as_cmatrix(matrix, square=True, name="density matrix")
        d = m.shape[0]
        n = d.bit_length() - 1
        if 2**n != d:
            raise ValidationError(f"density matrix dimension {d} is not a power of two")
        scale = max(float(np.linalg.norm(m)), 1e-300)
        if linalg.hermiticity_defect(m) >= herm_tol * scale:
            raise ValidationError("density matrix is not Hermitian within tolerance")
        tr = linalg.trace(m)
        if abs(tr - 1.0) >= trace_tol:
            raise ValidationError(f"density matrix trace {tr} deviates from 1 beyond {trace_tol}")
        from .eigen import eigh  # deferred: eigen depends only on linalg

        lam = eigh(m).eigenvalues
        if lam[0] <= -psd_tol:
            raise ValidationError(f"density matrix has eigenvalue {lam[0]:.3e} below -{psd_tol}")
        return cls(matrix=m, n_qubits=n)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


def purity(rho: np.ndarray) -> float:
    """Tr(rho^2), real part."""
    return float(np.trace(rho @ rho).real)


@dataclass(frozen=True)
class JumpChannel:
    """Dissipation channel: nonnegative rate and jump operator.

    The adjoint and J^dag J products are cached at construction; they appear
    in every right-hand-side evaluation.
    """

    rate: float
    operator: Operator
    adjoint_operator: Operator = field(init=False, repr=False)
    squared: Operator = field(init=False, repr=False)

    def __post_init__(self):
        if self.rate < 0:
            raise ValidationError(f"dissipation rate {self.rate} must be nonnegative")
        op = self.operator
        if op.shape[0] != op.shape[1]:
            raise ValidationError(f"jump operator must be square, got shape {op.shape}")
        adj = linalg.hermitian_adjoint(op)
        object.__setattr__(self, "adjoint_operator", adj)
        object.__setattr__(self, "squared", adj @ op if linalg.is_sparse(op) else adj @ op)


@dataclass(frozen=True)
class HamiltonianSchedule:
    """Evaluation rule (t, x) -> H plus optional analytic dH/dx_k rule.

    Without an analytic rule, parameter derivatives fall back to central
    finite differences with step FD_FALLBACK_STEP * max(1, |x_k|); gradient
    reports flag this.
    """

    evaluate: Callable[[float, np.ndarray], Operator]
    n_params: int
    derivative: Callable[[float, np.ndarray, int], Operator] | None = None

    @property
    def uses_fd_fallback(self) -> bool:
        return self.derivative is None

    def param_derivative(self, t: float, x: np.ndarray, k: int) -> Operator:
        if not 0 <= k < self.n_params:
            raise ValidationError(f"parameter index {k} outside range [0, {self.n_params})")
        if self.derivative is not None:
            return self.derivative(t, x, k)
        h = FD_FALLBACK_STEP * max(1.0, abs(float(x[k])))
        xp = np.array(x, dtype=float)
        xm = np.array(x, dtype=float)
        xp[k] += h
        xm[k] -= h
        return (self.evaluate(t, xp) - self.evaluate(t, xm)) / (2.0 * h)


@dataclass(frozen=True)
class LindbladModel:
    """Hamiltonian schedule plus jump channels on a fixed Hilbert space."""

    hamiltonian: HamiltonianSchedule
    channels: tuple[JumpChannel, ...]
    dimension: int

    def __post_init__(self):
        for j, ch in enumerate(self.channels):
            if ch.operator.shape != (self.dimension, self.dimension):
                raise ShapeMismatchError(
                    f"jump operator {j}", ch.operator.shape, (self.dimension, self.dimension)
                )

    @property
    def n_params(self) -> int:
        return self.hamiltonian.n_params


def _right_matmul(a: np.ndarray, b: Operator) -> np.ndarray:
    # dense @ sparse via the transposed product, keeping the result dense
    if linalg.is_sparse(b):
        return np.asarray((b.T @ a.T)).T
    return a @ b


def liouvillian_apply(h: Operator, channels: Sequence[JumpChannel], rho: np.ndarray) -> np.ndarray:
    """Apply the generator defined by (H, channels) to rho."""
    hr = np.asarray(h @ rho)
    out = -1j * (hr - _right_matmul(rho, h))
    for ch in channels:
        if ch.rate == 0.0:
            continue
        jr = np.asarray(ch.operator @ rho)
        jrj = _right_matmul(jr, ch.adjoint_operator)
        kr = np.asarray(ch.squared @ rho)
        rk = _right_matmul(rho, ch.squared)
        out += ch.rate * (jrj - 0.5 * (kr + rk))
    return out


def lindblad_rhs(t: float, rho: np.ndarray, model: LindbladModel, x: np.ndarray) -> np.ndarray:
    """Master-equation right-hand side at time t, state rho, parameters x.

    rho need not satisfy state invariants here; integrator stages pass
    through arbitrary Hermitian-ish matrices.
    """
    if rho.shape != (model.dimension, model.dimension):
        raise ShapeMismatchError("lindblad_rhs state", rho.shape, (model.dimension, model.dimension))
    if not np.all(np.isfinite(rho)):
        raise ValidationError("lindblad_rhs received a non-finite state")
    h = model.hamiltonian.evaluate(t, x)
    return liouvillian_apply(h, model.channels, rho)


def rhs_parameter_derivative(
    t: float, rho: np.ndarray, model: LindbladModel, x: np.ndarray, k: int
) -> np.ndarray:
    """d/dx_k of the right-hand side at fixed rho: -i [dH/dx_k, rho].

    Jump channels are parameter-independent, so only the coherent term
    contributes.
    """
    if rho.shape != (model.dimension, model.dimension):
        raise ShapeMismatchError("rhs state", rho.shape, (model.dimension, model.dimension))
    dh = model.hamiltonian.param_derivative(t, x, k)
    return -1j * (np.asarray(dh @ rho) - _right_matmul(rho, dh))


def validate_hamiltonian(model: LindbladModel, x: np.ndarray, t: float = 0.0, tol: float = 1e-12) -> None:
    """Check that H(t, x) is Hermitian to tolerance; raises ValidationError."""
    h = linalg.to_dense(model.hamiltonian.evaluate(t, x))
    if h.shape != (model.dimension, model.dimension):
        raise ShapeMismatchError("hamiltonian", h.shape, (model.dimension, model.dimension))
    scale = max(1.0, float(np.linalg.norm(h)))
    if linalg.hermiticity_defect(h) > tol * scale:
        raise ValidationError(f"H(t={t}, x) is not Hermitian to {tol}")


def preset_oat(n: int, gamma: float = 0.0, *, sparse: bool = False) -> LindbladModel:
    """Collective-spin twisting benchmark on n qubits.

    H(t, x) = x0 * Sz^2 + x1 * Sx with collective spin components
    S_a = (1/2) sum_i sigma_a^(i).  When gamma > 0, each qubit carries an
    independent lowering channel (rate gamma, operator sigma_minus on that
    qubit).  Two parameters, analytic derivatives.
    """
    if not 1 <= n <= 10:
        raise ValidationError(f"qubit count {n} outside supported range [1, 10]")
    if gamma < 0:
        raise ValidationError(f"gamma {gamma} must be nonnegative")
    sz = collective_sz(n)
    sz2 = sz @ sz
    sx = collective_sx(n)
    if sparse:
        sz2 = as_sparse(sz2)
        sx = as_sparse(sx)

    def evaluate(t, x):
        return x[0] * sz2 + x[1] * sx

    def derivative(t, x, k):
        return sz2 if k == 0 else sx

    schedule = HamiltonianSchedule(evaluate=evaluate, n_params=2, derivative=derivative)
    channels = []
    if gamma > 0:
        for i in range(n):
            op = embed_single(LOWERING, i, n)
            channels.append(JumpChannel(rate=gamma, operator=as_sparse(op) if sparse else op))
    return LindbladModel(hamiltonian=schedule, channels=tuple(channels), dimension=2**n)


def all_zero_density(n: int) -> DensityOperator:
    """|0...0><0...0| as a validated state."""
    return DensityOperator.from_matrix(all_zero_state(n))


def _coefficient_value(spec, x: np.ndarray) -> float:
    if isinstance(spec, str):
        k = int(spec.split(":", 1)[1])
        return float(x[k])
    return float(spec)


def model_from_json(obj: dict) -> LindbladModel:
    """Build a model from its JSON description.

    Schema: {"dimension": d,
             "hamiltonian": {"kind": "preset_oat"} |
                            {"kind": "explicit", "terms": [{"coefficient": "param:k" | number,
                                                            "matrix": <operator literal>}, ...]},
             "channels": [{"gamma": g, "matrix": <operator literal>}, ...],
             "gamma": g?}           (preset dissipation rate, preset_oat only)

    Explicit Hamiltonians are linear in the parameters: H(t, x) = sum_m c_m(x) A_m
    with each c_m a constant or one parameter x_k, and each A_m Hermitian.
    """
    if not isinstance(obj, dict):
        raise ValidationError("model description must be an object", path="")
    if "dimension" not in obj:
        raise ValidationError("missing required key", path="/dimension")
    d = int(obj["dimension"])
    if d < 1:
        raise ValidationError(f"dimension {d} must be positive", path="/dimension")
    ham = obj.get("hamiltonian")
    if not isinstance(ham, dict) or "kind" not in ham:
        raise ValidationError("hamiltonian must be an object with a 'kind'", path="/hamiltonian")
    kind = ham["kind"]

    if kind == "preset_oat":
        n = d.bit_length() - 1
        if 2**n != d:
            raise ValidationError(f"preset_oat needs a power-of-two dimension, got {d}", path="/dimension")
        gamma = float(obj.get("gamma", 0.0))
        if gamma < 0:
            raise ValidationError(f"gamma {gamma} must be nonnegative", path="/gamma")
        model = preset_oat(n, gamma)
        if obj.get("channels"):
            raise ValidationError("preset_oat defines its own channels", path="/channels")
        return model

    if kind != "explicit":
        raise ValidationError(f"unknown hamiltonian kind {kind!r}", path="/hamiltonian/kind")

    terms = []
    n_params = 0
    for m, term in enumerate(ham.get("terms", [])):
        path = f"/hamiltonian/terms/{m}"
        if "coefficient" not in term or "matrix" not in term:
            raise ValidationError("term needs 'coefficient' and 'matrix'", path=path)
        coef = term["coefficient"]
        if isinstance(coef, str):
            if not coef.startswith("param:"):
                raise ValidationError(f"coefficient {coef!r} must be 'param:<k>' or a number", path=path)
            try:
                k = int(coef.split(":", 1)[1])
            except ValueError:
                raise ValidationError(f"bad parameter index in {coef!r}", path=path)
            if k < 0:
                raise ValidationError(f"parameter index {k} must be nonnegative", path=path)
            n_params = max(n_params, k + 1)
        elif not isinstance(coef, (int, float)):
            raise ValidationError(f"coefficient {coef!r} must be 'param:<k>' or a number", path=path)
        op = linalg.operator_from_json(term["matrix"], name=path + "/matrix")
        if op.shape != (d, d):
            raise ValidationError(f"term matrix shape {op.shape} does not match dimension {d}", path=path)
        dense = linalg.to_dense(op)
        if linalg.hermiticity_defect(dense) > 1e-12 * max(1.0, float(np.linalg.norm(dense))):
            raise ValidationError("term matrix is not Hermitian", path=path + "/matrix")
        terms.append((coef, op))

    zero = np.zeros((d, d), dtype=np.complex128)

    def evaluate(t, x):
        out = None
        for coef, op in terms:
            c = _coefficient_value(coef, x)
            out = c * op if out is None else out + c * op
        return zero if out is None else out

    def derivative(t, x, k):
        out = None
        key = f"param:{k}"
        for coef, op in terms:
            if coef == key:
                out = op.copy() if out is None else out + op
        return zero if out is None else out

    schedule = HamiltonianSchedule(evaluate=evaluate, n_params=n_params, derivative=derivative)

    channels = []
    for j, ch in enumerate(obj.get("channels", [])):
        path = f"/channels/{j}"
        if "gamma" not in ch or "matrix" not in ch:
            raise ValidationError("channel needs 'gamma' and 'matrix'", path=path)
        gamma = float(ch["gamma"])
        if gamma < 0:
            raise ValidationError(f"gamma {gamma} must be nonnegative", path=path + "/gamma")
        op = linalg.operator_from_json(ch["matrix"], name=path + "/matrix")
        if op.shape != (d, d):
            raise ValidationError(f"channel matrix shape {op.shape} does not match dimension {d}", path=path)
        channels.append(JumpChannel(rate=gamma, operator=op))

    return LindbladModel(hamiltonian=schedule, channels=tuple(channels), dimension=d)
