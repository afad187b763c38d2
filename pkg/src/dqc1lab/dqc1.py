"""DQC1 model evaluation, derivatives and the universal-circuit (QNN) baseline.

A DQC1 model prepares the signal qubit in ``(I + alpha Z)/2``, applies a
Hadamard and a controlled ``U(x, theta)`` onto the working register, and reads
``<sigma_x>`` / ``<sigma_y>`` off the signal qubit. For a maximally mixed
register those are ``alpha * (Re, Im) tr(U) / 2**n``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import tensorcore as tc
from .circuit import (CircuitSpec, EmbeddingLayer, FixedGate, Program, TrainableBlock, compile_layers,
                      compile_unitary)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaximallyMixed:
    pass


@dataclass(frozen=True, eq=False)
class Thermal:
    """``rho_w = exp(-beta H_w) / tr(exp(-beta H_w))``."""

    hamiltonian: np.ndarray
    beta: float

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("inverse temperature must be >= 0")
        if not tc.is_hermitian(self.hamiltonian, 1e-10):
            raise ValueError("working-register Hamiltonian must be Hermitian")


@dataclass(frozen=True, eq=False)
class Explicit:
    rho: np.ndarray


WorkingState = Union[MaximallyMixed, Thermal, Explicit]


@dataclass(frozen=True)
class SignalOnly:
    """Measure only the signal qubit; ``basis`` picks the real model output (x: Re, y: Im)."""

    basis: str = "x"


@dataclass(frozen=True, eq=False)
class SignalTimes:
    """Measure ``sigma^(s) (x) M^(w)`` with Hermitian ``M``."""

    M: np.ndarray


@dataclass(frozen=True, eq=False)
class DataEncoded:
    """Measure ``sigma^(s) (x) M(x)`` with ``M(x) = U_e(x)^dagger M U_e(x)``.

    ``encoder`` is a parameter-free circuit on the working register.
    """

    M: np.ndarray
    encoder: CircuitSpec


Measurement = Union[SignalOnly, SignalTimes, DataEncoded]


@dataclass(frozen=True, eq=False)
class ModelConfig:
    n: int
    circuit: CircuitSpec
    alpha: float = 1.0
    working_state: WorkingState = field(default_factory=MaximallyMixed)
    measurement: Measurement = field(default_factory=SignalOnly)

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("polarization alpha must lie in (0, 1]")
        if self.circuit.n != self.n:
            raise ValueError("circuit width does not match n")
        m = self.measurement
        if isinstance(m, (SignalTimes, DataEncoded)):
            if not tc.is_hermitian(m.M, 1e-10):
                raise ValueError("measurement operator must be Hermitian")
            if m.M.shape != (2**self.n, 2**self.n):
                raise ValueError("measurement operator has the wrong dimension")
        if isinstance(m, DataEncoded) and m.encoder.p != 0:
            raise ValueError("data-encoding measurement circuit must be parameter free")
        if isinstance(m, SignalOnly) and m.basis not in ("x", "y"):
            raise ValueError("signal basis must be 'x' or 'y'")
        working_density(self)  # validates the register state


def working_density(model: ModelConfig) -> np.ndarray:
    dim = 2**model.n
    ws = model.working_state
    if isinstance(ws, MaximallyMixed):
        return np.eye(dim, dtype=complex) / dim
    if isinstance(ws, Thermal):
        h = np.asarray(ws.hamiltonian, dtype=complex)
        if h.shape != (dim, dim):
            raise ValueError("working-register Hamiltonian has the wrong dimension")
        # shift by the ground energy so large beta does not overflow
        w, v = np.linalg.eigh((h + h.conj().T) / 2)
        boltz = np.exp(-ws.beta * (w - w.min()))
        rho = (v * (boltz / boltz.sum())) @ v.conj().T
        return (rho + rho.conj().T) / 2
    if isinstance(ws, Explicit):
        rho = np.asarray(ws.rho, dtype=complex)
        if rho.shape != (dim, dim) or not tc.is_density(rho, 1e-10):
            raise ValueError("explicit working state is not a valid density matrix")
        return rho
    raise ValueError(f"invalid working state {ws!r}")


def _observable(model: ModelConfig, x=None) -> np.ndarray:
    """Operator ``O`` such that the model function is ``tr(O U)``."""
    dim = 2**model.n
    m = model.measurement
    if isinstance(m, SignalOnly):
        return working_density(model)
    if not isinstance(model.working_state, MaximallyMixed):
        raise ValueError("working-register measurements assume a maximally mixed register")
    if isinstance(m, SignalTimes):
        return np.asarray(m.M, dtype=complex) / dim
    ue = compile_unitary(m.encoder, x, np.zeros(0))
    return ue.conj().T @ np.asarray(m.M, dtype=complex) @ ue / dim


def model_value(model: ModelConfig, x, theta) -> complex:
    """The model function for any measurement: ``tr(O U(x, theta))``.

    Maximally mixed signal-only: ``tr(U)/2^n``; thermal: ``tr(rho_w U)``;
    working-register measurements: ``tr(M U)/2^n`` (``M`` possibly data encoded).
    """
    u = compile_unitary(model.circuit, x, theta)
    return complex(np.trace(_observable(model, x) @ u))


# ---------------------------------------------------------------------------
# protocol oracle and exact evaluation
# ---------------------------------------------------------------------------


def joint_state_oracle(model: ModelConfig, x, theta, observable: np.ndarray | None = None):
    """Simulate the protocol on the full ``n + 1`` qubit register.

    Starts from ``(I + alpha Z)/2 (x) rho_w``, applies ``H (x) I`` and the
    controlled ``U``, and returns ``(<sigma_x (x) M>, <sigma_y (x) M>, rho)`` by
    direct trace. ``observable`` overrides the working-register operator,
    which otherwise follows the model's measurement.
    """
    dim = 2**model.n
    u = compile_unitary(model.circuit, x, theta)
    rho_w = working_density(model)
    signal = (tc.I2 + model.alpha * tc.Z) / 2
    rho = np.kron(signal, rho_w)
    had = np.kron(tc.H, np.eye(dim))
    cu = np.block([[np.eye(dim), np.zeros((dim, dim))], [np.zeros((dim, dim)), u]])
    rho = cu @ had @ rho @ had.conj().T @ cu.conj().T
    if not tc.is_density(rho, 1e-10):
        raise RuntimeError("protocol produced an invalid density matrix")
    if observable is not None:
        M = np.asarray(observable)
    elif isinstance(model.measurement, SignalOnly):
        M = np.eye(dim)
    else:
        M = _observable(model, x) * dim
    sx = np.trace(np.kron(tc.X, M) @ rho).real
    sy = np.trace(np.kron(tc.Y, M) @ rho).real
    return float(sx), float(sy), rho


def evaluate_exact(model: ModelConfig, x, theta) -> complex:
    """``tr(U(x, theta)) / 2^n`` for the standard protocol."""
    if not isinstance(model.measurement, SignalOnly):
        raise ValueError("evaluate_exact handles signal-only measurement; use evaluate_multimeasure")
    if not isinstance(model.working_state, MaximallyMixed):
        raise ValueError("evaluate_exact needs a maximally mixed register; use evaluate_thermal")
    u = compile_unitary(model.circuit, x, theta)
    return complex(np.trace(u) / 2**model.n)


def evaluate_thermal(model: ModelConfig, x, theta) -> complex:
    """``tr(rho_w U(x, theta))``; the signal expectations are ``alpha`` times its parts."""
    if not isinstance(model.measurement, SignalOnly):
        raise ValueError("evaluate_thermal handles signal-only measurement")
    u = compile_unitary(model.circuit, x, theta)
    return complex(np.trace(working_density(model) @ u))


def evaluate_multimeasure(model: ModelConfig, x, theta) -> complex:
    """``tr(M U) / 2^n``, with ``M(x) = U_e(x)^dagger M U_e(x)`` for data-encoded measurement."""
    return model_value(model, x, theta)


def signal_expectations(model: ModelConfig, x, theta) -> tuple[float, float]:
    """Exact ``(<sigma_x (x) M>, <sigma_y (x) M>)`` without building the joint state."""
    f = model_value(model, x, theta)
    return model.alpha * f.real, model.alpha * f.imag


# ---------------------------------------------------------------------------
# shot sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShotPlan:
    shots: int
    epsilon: float = 0.1
    delta: float = 0.05

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    @classmethod
    def for_precision(cls, epsilon: float, delta: float, alpha: float) -> "ShotPlan":
        probe = cls(1, epsilon, delta)
        return cls(repetitions_needed(probe, alpha), epsilon, delta)


def repetitions_bound(epsilon: float, delta: float, alpha: float) -> float:
    """Real-valued Hoeffding count ``2 ln(2/delta) / (alpha epsilon)^2``."""
    return 2 * math.log(2 / delta) / (alpha * epsilon) ** 2


def repetitions_needed(plan: ShotPlan, alpha: float) -> int:
    """Shots so both signal expectations land within ``epsilon`` w.p. ``1 - delta``."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    value = repetitions_bound(plan.epsilon, plan.delta, alpha)
    # absorb float noise so exact integers are not bumped up by ceil
    return max(1, math.ceil(value - 1e-9 * max(1.0, value)))


def _sample_pm1_mean(expectation: float, shots: int, rng: np.random.Generator) -> float:
    if abs(expectation) > 1 + 1e-9:
        raise ValueError(f"expectation {expectation} outside [-1, 1]")
    p_plus = min(1.0, max(0.0, (1 + expectation) / 2))
    k = rng.binomial(shots, p_plus)
    return (2 * k - shots) / shots


def estimate_from_expectations(sx: float, sy: float, alpha: float, shots: int,
                               rng: np.random.Generator) -> tuple[complex, float]:
    """Sample ``shots`` +-1 outcomes per basis and return ``(estimate, stderr)``.

    The estimate is ``(mean_x + i mean_y) / alpha``; ``stderr`` is the
    standard error of its complex value, ``sqrt(se_x^2 + se_y^2)``.
    """
    mx = _sample_pm1_mean(sx, shots, rng)
    my = _sample_pm1_mean(sy, shots, rng)
    var_x = max(1 - mx * mx, 0.0)
    var_y = max(1 - my * my, 0.0)
    if shots > 1:
        var_x *= shots / (shots - 1)
        var_y *= shots / (shots - 1)
    stderr = math.sqrt((var_x + var_y) / shots) / alpha
    return complex(mx, my) / alpha, stderr


def evaluate_shots(model: ModelConfig, x, theta, plan: ShotPlan, rng: np.random.Generator):
    """Shot-sampled model value ``(estimate, stderr)``.

    Each shot of the signal qubit yields +-1 with ``P(+1) = (1 + <sigma>)/2``.
    Working-register observables are only sampled when ``M^2 = I`` so that
    outcomes stay +-1.
    """
    m = model.measurement
    if isinstance(m, (SignalTimes, DataEncoded)):
        M = np.asarray(m.M)
        if np.max(np.abs(M @ M - np.eye(M.shape[0]))) > 1e-10:
            raise ValueError("shot sampling needs an observable with +-1 outcomes (M^2 = I)")
    sx, sy = signal_expectations(model, x, theta)
    return estimate_from_expectations(sx, sy, model.alpha, plan.shots, rng)


def trace_shots(u: np.ndarray, alpha: float, shots: int, rng: np.random.Generator):
    """Estimate ``tr(u)/2^n`` of an arbitrary unitary with the standard protocol."""
    f = np.trace(u) / u.shape[0]
    return estimate_from_expectations(alpha * f.real, alpha * f.imag, alpha, shots, rng)


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


def grad_insertion(model: ModelConfig, x, theta, slot: int) -> complex:
    """``d f / d theta_slot`` by inserting ``-i H`` next to the generator's rotation."""
    try:
        _, _, op = model.circuit.rotation(slot)
    except KeyError as exc:
        raise ValueError(str(exc)) from None
    u = compile_unitary(model.circuit, x, theta, insert=(slot, -1j * op.generator()))
    return complex(np.trace(_observable(model, x) @ u))


def grad_commuting(model: ModelConfig, x, theta, slot: int) -> complex:
    """Derivative for a block ``exp(-i sum_k theta_k sigma_k)`` with commuting generators.

    The generator is moved to the front of its block and the trace is taken
    over the layer sequence rotated to start at that block.
    """
    spec = model.circuit
    li, _, op = spec.rotation(slot)
    block = spec.layers[li]
    if any(isinstance(o, FixedGate) for o in block.ops):
        raise ValueError("block contains fixed gates; it is not of the form exp(-i sum theta_k sigma_k)")
    gens = [o.generator() for o in block.ops]
    for a in range(len(gens)):
        for b in range(a + 1, len(gens)):
            comm = gens[a] @ gens[b] - gens[b] @ gens[a]
            if np.max(np.abs(comm)) > 1e-10:
                raise ValueError("generators in the block do not commute")
    x, theta = np.asarray(x, dtype=float), np.asarray(theta, dtype=float)
    head = compile_layers(spec.n, spec.layers[:li], x, theta)
    tail = compile_layers(spec.n, spec.layers[li:], x, theta)
    # d/dt tr(O A (-i s) B) = -i tr(s B O A)
    return complex(-1j * np.trace(op.generator() @ tail @ _observable(model, x) @ head))


def grad_fd(model: ModelConfig, x, theta, slot: int, h: float = 1e-5, fn=None) -> complex:
    """Central difference ``(f(theta + h e) - f(theta - h e)) / 2h``."""
    if h <= 0:
        raise ValueError("step must be positive")
    fn = fn or (lambda t: model_value(model, x, t))
    theta = np.asarray(theta, dtype=float)
    e = np.zeros_like(theta)
    e[slot] = h
    return (fn(theta + e) - fn(theta - e)) / (2 * h)


def grad_shots(model: ModelConfig, x, theta, slot: int, plan: ShotPlan,
               rng: np.random.Generator) -> tuple[complex, float]:
    """Derivative estimated with the DQC1 protocol itself.

    The generator is split into Pauli terms ``sum c_t P_t``; each term gives a
    unitary derivative circuit whose normalised trace is shot-estimated.
    """
    if not isinstance(model.working_state, MaximallyMixed) or not isinstance(model.measurement, SignalOnly):
        raise ValueError("shot gradients are implemented for the standard protocol")
    _, _, op = model.circuit.rotation(slot)
    total, var = 0j, 0.0
    for c, letters in op.terms:
        P = tc.PauliString(letters).matrix()
        u = compile_unitary(model.circuit, x, theta, insert=(slot, P))
        est, se = trace_shots(u, model.alpha, plan.shots, rng)
        total += -1j * c * est
        var += (c * se) ** 2
    return total, math.sqrt(var)


# ---------------------------------------------------------------------------
# QNN baseline
# ---------------------------------------------------------------------------


def qnn_evaluate(circuit: CircuitSpec, M: np.ndarray, x, theta) -> float:
    """``<0|U^dagger M U|0>`` by applying ``U`` to the all-zero state."""
    if not tc.is_hermitian(M, 1e-10):
        raise ValueError("measurement operator must be Hermitian")
    u = compile_unitary(circuit, x, theta)
    psi = u[:, 0]
    return float(np.real(psi.conj() @ M @ psi))


def qnn_grad_fd(circuit: CircuitSpec, M: np.ndarray, x, theta, slot: int, h: float = 1e-5) -> float:
    theta = np.asarray(theta, dtype=float)
    e = np.zeros_like(theta)
    e[slot] = h
    return (qnn_evaluate(circuit, M, x, theta + e) - qnn_evaluate(circuit, M, x, theta - e)) / (2 * h)


def pauli_z_string(n: int) -> np.ndarray:
    return tc.PauliString("Z" * n).matrix().copy()


# ---------------------------------------------------------------------------
# batched evaluators for training
# ---------------------------------------------------------------------------


class DQC1Evaluator:
    """Batched model values and gradients for training.

    ``predict`` returns the real model output (``Re f`` for an ``x``-basis
    readout, ``Im f`` for ``y``).
    """

    def __init__(self, model: ModelConfig):
        m = model.measurement
        if isinstance(m, DataEncoded):
            self._program = Program(data_encoded_circuit(model))
        else:
            self._program = Program(model.circuit, observable=_observable(model))
        self.model = model
        self.imag = isinstance(m, SignalOnly) and m.basis == "y"

    @property
    def n_params(self) -> int:
        return self.model.circuit.p

    def values(self, X, theta) -> np.ndarray:
        return self._program.trace(X, theta)

    def values_and_grads(self, X, theta):
        return self._program.trace(X, theta, grad=True)

    def predict(self, X, theta) -> np.ndarray:
        v = self.values(X, theta)
        return v.imag if self.imag else v.real

    def predict_and_grad(self, X, theta):
        v, g = self.values_and_grads(X, theta)
        return (v.imag, g.imag) if self.imag else (v.real, g.real)


def data_encoded_circuit(model: ModelConfig) -> CircuitSpec:
    """Layer sequence ``U, U_e^dagger, M/2^n, U_e`` whose trace is the data-encoded model."""
    m = model.measurement
    enc = m.encoder
    inv = tuple(layer.inverse() if isinstance(layer, EmbeddingLayer) else _adjoint_block(layer)
                for layer in reversed(enc.layers))
    obs = TrainableBlock(model.n, (FixedGate("matrix", unitary=np.asarray(m.M) / 2**model.n),), "observable")
    return CircuitSpec(model.n, model.circuit.layers + inv + (obs,) + enc.layers,
                       d=max(model.circuit.d, enc.d))


def _adjoint_block(block: TrainableBlock) -> TrainableBlock:
    ops = []
    for op in reversed(block.ops):
        if not isinstance(op, FixedGate):
            raise ValueError("encoder blocks must be parameter free")
        ops.append(FixedGate("unitary", unitary=op.matrix(block.n).conj().T))
    return TrainableBlock(block.n, tuple(ops), block.tag + "-adjoint")


class QNNEvaluator:
    """Batched ``<0|U^dagger M U|0>`` with adjoint-mode gradients."""

    def __init__(self, circuit: CircuitSpec, M: np.ndarray):
        if not tc.is_hermitian(M, 1e-10):
            raise ValueError("measurement operator must be Hermitian")
        self.circuit = circuit
        self.M = np.asarray(M, dtype=complex)
        self._program = Program(circuit)

    @property
    def n_params(self) -> int:
        return self.circuit.p

    def predict(self, X, theta) -> np.ndarray:
        return self._program.expectation(X, theta, self.M)

    def predict_and_grad(self, X, theta):
        return self._program.expectation(X, theta, self.M, grad=True)
