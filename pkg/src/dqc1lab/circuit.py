"""Circuit representation for data re-uploading models ``W1 V1 W2 V2 ... [W_{L+1}]``.

Two routes turn a :class:`CircuitSpec` into numbers:

* :func:`compile_unitary` multiplies dense per-layer matrices left to right
  (``W1`` is the leftmost factor). Simple and used as the reference.
* :class:`Program` lowers the circuit to fixed/rotation segments separated by
  diagonal data phases, which lets values and all-parameter gradients be
  evaluated for a whole batch of inputs with a few GEMMs.

Trainable block ops are stored in *matrix order*: ``ops[0]`` is the leftmost
factor of the block, i.e. the gate applied last in time.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import tensorcore as tc
from .tensorcore import PauliString

AXES = ("X", "Y", "Z")


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rotation:
    """``exp(-i theta[slot] H)`` with ``H = sum(coef * PauliString)``.

    The Pauli terms of one generator must commute with each other, so the
    exponential factorises into single-term rotations.
    """

    slot: int
    terms: tuple[tuple[float, str], ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("rotation needs at least one generator term")
        strings = [PauliString(p) for _, p in self.terms]
        if len({s.n_qubits for s in strings}) != 1:
            raise ValueError("generator terms act on different register sizes")
        for a, b in itertools.combinations(strings, 2):
            if not a.commutes_with(b):
                raise ValueError(f"generator terms {a} and {b} do not commute")

    @property
    def n_qubits(self) -> int:
        return len(self.terms[0][1])

    def generator(self) -> np.ndarray:
        return sum(c * PauliString(p).matrix() for c, p in self.terms)

    def matrix(self, angle: float) -> np.ndarray:
        out = None
        for c, p in self.terms:
            g = tc.pauli_rotation(p, c * angle)
            out = g if out is None else out @ g
        return out


@dataclass(frozen=True, eq=False)
class FixedGate:
    """An unparameterised gate: ``cnot``, ``h``, ``s``, ``x``, ``pauli``, ``phase`` or ``unitary``.

    ``matrix`` holds an arbitrary (not necessarily unitary) operator, used to
    splice observables into a layer sequence.
    """

    name: str
    wires: tuple[int, ...] = ()
    value: float = 0.0
    letters: str = ""
    unitary: np.ndarray | None = None

    def matrix(self, n: int) -> np.ndarray:
        name = self.name
        if name == "cnot":
            return tc.cnot(n, *self.wires)
        if name in ("h", "s", "x", "y", "z", "sdg"):
            op = {"h": tc.H, "s": tc.S, "x": tc.X, "y": tc.Y, "z": tc.Z, "sdg": tc.S.conj()}[name]
            return tc.single_qubit_op(n, self.wires[0], op)
        if name == "pauli":
            return PauliString(self.letters).matrix().copy()
        if name == "phase":
            return np.exp(1j * self.value) * np.eye(2**n, dtype=complex)
        if name in ("unitary", "matrix"):
            u = np.asarray(self.unitary, dtype=complex)
            if u.shape != (2**n, 2**n):
                raise ValueError("fixed matrix has the wrong dimension")
            return u.copy()
        raise ValueError(f"unknown fixed gate {name!r}")


Op = Union[Rotation, FixedGate]


@dataclass(frozen=True)
class TrainableBlock:
    """A trainable unitary ``prod_k exp(-i theta_k H_k) T_k`` (ops in matrix order)."""

    n: int
    ops: tuple[Op, ...]
    tag: str = "custom"

    @property
    def slots(self) -> list[int]:
        return [op.slot for op in self.ops if isinstance(op, Rotation)]


@dataclass(frozen=True)
class EmbeddingLayer:
    """Data-encoding layer.

    ``kind="rotation"``: ``prod_q exp(-i x[slots[q]] sigma_axis^(q) / 2)``.
    ``kind="zz"``: ``[exp(i sum_i phi_i Z_i + i sum_pairs phi_ij Z_i Z_j) H^n]^reps``
    with ``phi_i = x_i`` and ``phi_ij = (pi - x_i)(pi - x_j)``.
    ``adjoint=True`` denotes the inverse layer (used by data-encoded
    measurements).
    """

    n: int
    kind: str = "rotation"
    axis: str = "X"
    slots: tuple[int, ...] = ()
    reps: int = 1
    pairs: str = "nearest"
    adjoint: bool = False

    def __post_init__(self):
        if self.kind not in ("rotation", "zz"):
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        if len(self.slots) != self.n:
            raise ValueError("an embedding layer needs exactly one data slot per qubit")
        if self.pairs not in ("nearest", "all"):
            raise ValueError("pairs must be 'nearest' or 'all'")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")

    def pair_list(self) -> list[tuple[int, int]]:
        if self.pairs == "all":
            return list(itertools.combinations(range(self.n), 2))
        return [(i, i + 1) for i in range(self.n - 1)]

    def inverse(self) -> "EmbeddingLayer":
        return EmbeddingLayer(self.n, self.kind, self.axis, self.slots, self.reps,
                              self.pairs, not self.adjoint)


Layer = Union[TrainableBlock, EmbeddingLayer]


@dataclass(frozen=True)
class CircuitSpec:
    """Ordered layers, leftmost factor first; every parameter slot used exactly once."""

    n: int
    layers: tuple[Layer, ...]
    d: int = field(default=-1)
    p: int = field(default=-1)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        param_slots = []
        data_slots = set()
        for layer in self.layers:
            if layer.n != self.n:
                raise ValueError("layer qubit count does not match the circuit")
            if isinstance(layer, TrainableBlock):
                for op in layer.ops:
                    if isinstance(op, Rotation):
                        if op.n_qubits != self.n:
                            raise ValueError("generator acts on the wrong register size")
                        param_slots.append(op.slot)
            else:
                data_slots.update(layer.slots)
        if len(param_slots) != len(set(param_slots)):
            raise ValueError("parameter slots must be unique within a circuit")
        p = len(param_slots)
        if sorted(param_slots) != list(range(p)):
            raise ValueError("parameter slots must cover 0..p-1")
        d = max(data_slots) + 1 if data_slots else 0
        if self.d >= 0 and self.d < d:
            raise ValueError("declared feature dimension too small for the data slots")
        object.__setattr__(self, "d", max(self.d, d))
        if self.p >= 0 and self.p != p:
            raise ValueError(f"declared parameter count {self.p} != {p}")
        object.__setattr__(self, "p", p)

    @property
    def embeddings(self) -> list[EmbeddingLayer]:
        return [layer for layer in self.layers if isinstance(layer, EmbeddingLayer)]

    @property
    def L(self) -> int:
        return len(self.embeddings)

    def rotation(self, slot: int) -> tuple[int, int, Rotation]:
        """Locate ``slot``: (layer index, op index, op)."""
        for li, layer in enumerate(self.layers):
            if isinstance(layer, TrainableBlock):
                for oi, op in enumerate(layer.ops):
                    if isinstance(op, Rotation) and op.slot == slot:
                        return li, oi, op
        raise KeyError(f"parameter slot {slot} not bound to a generator")

    def rotated(self, k: int) -> "CircuitSpec":
        """Cyclically rotate the layer sequence by ``k`` positions."""
        k %= max(len(self.layers), 1)
        return CircuitSpec(self.n, self.layers[k:] + self.layers[:k], d=self.d)

    def then(self, *layers: Layer) -> "CircuitSpec":
        return CircuitSpec(self.n, self.layers + tuple(layers), d=self.d)


# ---------------------------------------------------------------------------
# dense matrices
# ---------------------------------------------------------------------------


def _check_inputs(spec: CircuitSpec, x, theta):
    x = np.atleast_1d(np.asarray(x if x is not None else [], dtype=float))
    theta = np.atleast_1d(np.asarray(theta if theta is not None else [], dtype=float))
    if x.ndim != 1 or x.shape[0] < spec.d:
        raise ValueError(f"expected {spec.d} features, got shape {x.shape}")
    if theta.shape != (spec.p,):
        raise ValueError(f"expected {spec.p} parameters, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameters must be finite")
    return x, theta


def block_matrix(block: TrainableBlock, theta, insert: tuple[int, np.ndarray] | None = None) -> np.ndarray:
    """Dense matrix of a trainable block.

    ``insert=(slot, A)`` places ``A`` immediately left of the rotation bound to
    ``slot``, which is how derivative circuits are built.
    """
    out = np.eye(2**block.n, dtype=complex)
    for op in block.ops:
        if isinstance(op, Rotation):
            if insert is not None and insert[0] == op.slot:
                out = out @ insert[1]
            out = out @ op.matrix(theta[op.slot])
        else:
            out = out @ op.matrix(block.n)
    return out


def _axis_change(axis: str) -> np.ndarray:
    """Single-qubit ``B`` with ``B Z B^dagger = sigma_axis``."""
    return {"X": tc.H, "Y": tc.S @ tc.H, "Z": tc.I2}[axis]


def zz_phases(layer: EmbeddingLayer, x) -> np.ndarray:
    """Real phases of one ZZ repetition, ``sum phi_i z_i + sum phi_ij z_i z_j`` per basis state."""
    x = np.asarray(x, dtype=float)
    n = layer.n
    z = 1 - 2 * ((np.arange(2**n)[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1)
    xs = x[..., list(layer.slots)]
    out = xs @ z.T
    for i, j in layer.pair_list():
        phi = (np.pi - xs[..., i]) * (np.pi - xs[..., j])
        out = out + phi[..., None] * (z[:, i] * z[:, j])
    return out


def layer_matrix(layer: EmbeddingLayer, x) -> np.ndarray:
    """Dense matrix of an embedding layer, built gate by gate."""
    x = np.asarray(x, dtype=float)
    n = layer.n
    if layer.kind == "rotation":
        sigma = tc.PAULI[layer.axis]
        mats = [np.cos(x[s] / 2) * tc.I2 - 1j * np.sin(x[s] / 2) * sigma for s in layer.slots]
        m = tc.kron_all(mats)
    else:
        hn = tc.kron_all([tc.H] * n)
        rep = np.diag(np.exp(1j * zz_phases(layer, x))) @ hn
        m = np.linalg.matrix_power(rep, layer.reps)
    return m.conj().T if layer.adjoint else m


def compile_layers(n: int, layers, x, theta, insert: tuple[int, np.ndarray] | None = None) -> np.ndarray:
    """Dense product of an arbitrary layer run (no slot bookkeeping checks)."""
    out = np.eye(2**n, dtype=complex)
    for layer in layers:
        if isinstance(layer, TrainableBlock):
            out = out @ block_matrix(layer, theta, insert)
        else:
            out = out @ layer_matrix(layer, x)
    return out


def compile_unitary(spec: CircuitSpec, x, theta, insert: tuple[int, np.ndarray] | None = None) -> np.ndarray:
    """Dense ``U(x, theta)`` with the first layer as the leftmost factor."""
    x, theta = _check_inputs(spec, x, theta)
    return compile_layers(spec.n, spec.layers, x, theta, insert)


def embedding_diagonal(layer: EmbeddingLayer, x) -> np.ndarray:
    """Phases ``D_b = -1/2 sum_q s_q(b) x[slot_q]`` with ``s_q = +1`` for bit 0.

    ``exp(i D)`` is the diagonal of the layer after the per-qubit basis
    change that maps ``sigma_axis`` to ``Z``.
    """
    if layer.kind != "rotation":
        raise ValueError("only product-rotation layers have a data-independent diagonalising basis")
    x = np.asarray(x, dtype=float)
    signs = _sign_table(layer.n)
    out = -0.5 * (x[..., list(layer.slots)] @ signs.T)
    return -out if layer.adjoint else out


def _sign_table(n: int) -> np.ndarray:
    bits = (np.arange(2**n)[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    return (1 - 2 * bits).astype(float)


def diagonalizing_basis(layer: EmbeddingLayer) -> np.ndarray:
    """``B`` such that ``layer_matrix = B diag(exp(i D)) B^dagger``."""
    return tc.kron_all([_axis_change(layer.axis)] * layer.n)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def _rot(n: int, slot: int, wire: int, axis: str, coef: float = 0.5, phase: bool = False) -> Rotation:
    letters = PauliString(axis).on(n, [wire]).letters
    terms = ((coef, letters),)
    if phase:
        # exp(i t/2) Rz(t) = exp(-i t (Z - I)/2)
        terms = terms + ((-coef, "I" * n),)
    return Rotation(slot, terms)


def _block_from_time_order(n: int, gates: list[Op], tag: str) -> TrainableBlock:
    return TrainableBlock(n, tuple(reversed(gates)), tag)


def euler_rotation(n: int, wire: int, slots: Sequence[int]) -> list[Op]:
    """``R(phi, theta, omega) = Rz(omega) Ry(theta) Rz(phi)`` in time order."""
    phi, theta, omega = slots
    return [_rot(n, phi, wire, "Z"), _rot(n, theta, wire, "Y"), _rot(n, omega, wire, "Z")]


def u3_gate(n: int, wire: int, slots: Sequence[int]) -> list[Op]:
    """``U3(phi, theta, omega) = exp(i(theta+omega)/2) Rz(theta+omega) R(omega, phi, -omega)`` in time order.

    The product collapses to ``exp(i(theta+omega)/2) Rz(theta) Ry(phi) Rz(omega)``,
    so each angle appears once; the global phase rides on the Z generators.
    """
    phi, theta, omega = slots
    return [
        _rot(n, omega, wire, "Z", phase=True),
        _rot(n, phi, wire, "Y"),
        _rot(n, theta, wire, "Z", phase=True),
    ]


def build_ansatz1(n: int, offset: int = 0, sublayers: int = 3) -> TrainableBlock:
    """Strongly entangling block: ``sublayers`` x (R on every qubit, CNOT ring).

    Sub-layer ``l`` (1-based) uses ring stride ``((l - 1) mod (n - 1)) + 1``;
    9n parameters for the default three sub-layers.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gates: list[Op] = []
    slot = offset
    for ell in range(1, sublayers + 1):
        for q in range(n):
            gates += euler_rotation(n, q, (slot, slot + 1, slot + 2))
            slot += 3
        if n > 1:
            stride = ((ell - 1) % (n - 1)) + 1
            gates += [FixedGate("cnot", (q, (q + stride) % n)) for q in range(n)]
    return _block_from_time_order(n, gates, "ansatz1")


def su4_block(n: int, a: int, b: int, offset: int) -> list[Op]:
    """Fifteen-parameter two-qubit block on wires ``(a, b)``, time order."""
    s = offset
    gates: list[Op] = []
    gates += u3_gate(n, a, (s, s + 1, s + 2)) + u3_gate(n, b, (s + 3, s + 4, s + 5))
    gates.append(FixedGate("cnot", (b, a)))
    gates += [_rot(n, s + 6, a, "Z"), _rot(n, s + 7, b, "Y")]
    gates.append(FixedGate("cnot", (a, b)))
    gates.append(_rot(n, s + 8, b, "Y"))
    gates.append(FixedGate("cnot", (b, a)))
    gates += u3_gate(n, a, (s + 9, s + 10, s + 11)) + u3_gate(n, b, (s + 12, s + 13, s + 14))
    return gates


def ansatz2_pairs(n: int) -> list[tuple[int, int]]:
    first = [(q, q + 1) for q in range(0, n - 1, 2)]
    second = [(q, q + 1) for q in range(1, n - 1, 2)]
    if n % 2 == 0 and n > 2:
        second.append((n - 1, 0))
    elif n == 2:
        second.append((1, 0))
    return first + second


def build_ansatz2(n: int, offset: int = 0) -> TrainableBlock:
    """Two layers of nearest-neighbour SU(4) blocks: 15n (even n) or 15(n-1) parameters."""
    if n < 2:
        raise ValueError("ansatz 2 needs at least two qubits")
    gates: list[Op] = []
    slot = offset
    for a, b in ansatz2_pairs(n):
        gates += su4_block(n, a, b, slot)
        slot += 15
    return _block_from_time_order(n, gates, "ansatz2")


def build_ansatz(kind: str, n: int, offset: int = 0) -> TrainableBlock:
    if kind in ("ansatz1", "1", 1):
        return build_ansatz1(n, offset)
    if kind in ("ansatz2", "2", 2):
        return build_ansatz2(n, offset)
    raise ValueError(f"unknown ansatz {kind!r}")


def build_product_embedding(n: int, axis: str = "X", slots: Sequence[int] | None = None) -> EmbeddingLayer:
    return EmbeddingLayer(n, "rotation", axis, tuple(slots) if slots is not None else (0,) * n)


def build_zz_feature_map(n: int, L: int = 1, slots: Sequence[int] | None = None,
                         pairs: str = "nearest") -> EmbeddingLayer:
    if n < 1:
        raise ValueError("n must be >= 1")
    return EmbeddingLayer(n, "zz", "Z", tuple(slots) if slots is not None else tuple(range(n)),
                          reps=L, pairs=pairs)


def build_reuploading_circuit(n: int, L: int, ansatz: str = "ansatz1", axis: str = "X",
                              slots: Sequence[Sequence[int]] | None = None,
                              trailing: bool = True) -> CircuitSpec:
    """``W1 V1 ... WL VL [W_{L+1}]`` with one shared feature unless ``slots`` says otherwise.

    ``slots[l]`` lists the feature index loaded on each qubit in layer ``l``.
    """
    layers: list[Layer] = []
    offset = 0
    for ell in range(L):
        block = build_ansatz(ansatz, n, offset)
        offset += len(block.slots)
        layers.append(block)
        layer_slots = slots[ell] if slots is not None else (0,) * n
        layers.append(build_product_embedding(n, axis, layer_slots))
    if trailing:
        layers.append(build_ansatz(ansatz, n, offset))
    return CircuitSpec(n, tuple(layers))


def build_zz_classifier(n: int, embeddings: int, reps: int = 2, pairs: str = "nearest",
                        ansatz: str = "ansatz1") -> CircuitSpec:
    """``W ZZ(x) W ZZ(x) ... W`` with ``embeddings`` copies of the ZZ feature map on features ``0..n-1``."""
    layers: list[Layer] = []
    offset = 0
    for _ in range(embeddings):
        block = build_ansatz(ansatz, n, offset)
        offset += len(block.slots)
        layers += [block, build_zz_feature_map(n, reps, pairs=pairs)]
    layers.append(build_ansatz(ansatz, n, offset))
    return CircuitSpec(n, tuple(layers))


def random_circuit(n: int, L: int, rng: np.random.Generator, ansatz: str | None = None,
                   d: int | None = None, trailing: bool | None = None) -> CircuitSpec:
    """Random re-uploading circuit used by property tests and the gradient check.

    Without an ``ansatz`` each block is a random mix of Pauli rotations
    (including multi-term commuting generators) and fixed random unitaries.
    """
    axis_choices = list(AXES)
    layers: list[Layer] = []
    offset = 0
    d = d if d is not None else int(rng.integers(1, n + 2))
    trailing = bool(rng.integers(0, 2)) if trailing is None else trailing
    for ell in range(L + (1 if trailing else 0)):
        if ansatz is not None:
            block = build_ansatz(ansatz, n, offset)
        else:
            block = _random_block(n, rng, offset)
        offset += len(block.slots)
        layers.append(block)
        if ell < L:
            axis = axis_choices[int(rng.integers(0, 3))]
            layer_slots = tuple(int(s) for s in rng.integers(0, d, size=n))
            layers.append(build_product_embedding(n, axis, layer_slots))
    return CircuitSpec(n, tuple(layers), d=d)


def _random_block(n: int, rng: np.random.Generator, offset: int) -> TrainableBlock:
    ops: list[Op] = []
    slot = offset
    for _ in range(int(rng.integers(2, 5))):
        kind = rng.integers(0, 4)
        if kind == 0:
            ops.append(FixedGate("unitary", unitary=tc.haar_unitary(n, rng)))
            continue
        letters = "".join(rng.choice(list("IXYZ"), size=n))
        if set(letters) == {"I"}:
            letters = "Z" + letters[1:]
        terms = [(float(rng.uniform(0.3, 1.2)), letters)]
        if kind == 3:
            # second commuting term
            other = PauliString(letters)
            for _ in range(10):
                cand = PauliString("".join(rng.choice(list("IXYZ"), size=n)))
                if cand.commutes_with(other) and cand != other:
                    terms.append((float(rng.uniform(-1, 1)), cand.letters))
                    break
        ops.append(Rotation(slot, tuple(terms)))
        slot += 1
    return TrainableBlock(n, tuple(ops), "random")


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def op_to_dict(op: Op) -> dict:
    if isinstance(op, Rotation):
        return {"type": "rotation", "slot": op.slot, "terms": [[c, p] for c, p in op.terms]}
    out = {"type": "fixed", "name": op.name, "wires": list(op.wires)}
    if op.name == "phase":
        out["value"] = op.value
    if op.name == "pauli":
        out["letters"] = op.letters
    if op.name in ("unitary", "matrix"):
        u = np.asarray(op.unitary)
        out["re"] = u.real.tolist()
        out["im"] = u.imag.tolist()
    return out


def op_from_dict(d: dict) -> Op:
    if d["type"] == "rotation":
        return Rotation(int(d["slot"]), tuple((float(c), str(p)) for c, p in d["terms"]))
    unitary = None
    if d["name"] in ("unitary", "matrix"):
        unitary = np.asarray(d["re"]) + 1j * np.asarray(d["im"])
    return FixedGate(d["name"], tuple(d.get("wires", ())), float(d.get("value", 0.0)),
                     d.get("letters", ""), unitary)


def circuit_to_dict(spec: CircuitSpec) -> dict:
    layers = []
    for layer in spec.layers:
        if isinstance(layer, TrainableBlock):
            layers.append({"type": "block", "tag": layer.tag, "ops": [op_to_dict(o) for o in layer.ops]})
        else:
            layers.append({"type": layer.kind, "axis": layer.axis, "slots": list(layer.slots),
                           "reps": layer.reps, "pairs": layer.pairs, "adjoint": layer.adjoint})
    return {"n": spec.n, "d": spec.d, "layers": layers}


def circuit_from_dict(d: dict) -> CircuitSpec:
    n = int(d["n"])
    layers: list[Layer] = []
    offset = 0
    for item in d["layers"]:
        t = item["type"]
        if t == "block":
            layers.append(TrainableBlock(n, tuple(op_from_dict(o) for o in item["ops"]), item.get("tag", "custom")))
        elif t in ("ansatz1", "ansatz2"):
            # shorthand: {"type": "ansatz1"} builds the template at the next free slot
            block = build_ansatz(t, n, offset)
            layers.append(block)
        elif t in ("rotation", "zz"):
            layers.append(EmbeddingLayer(n, t, item.get("axis", "X" if t == "rotation" else "Z"),
                                         tuple(item.get("slots", (0,) * n if t == "rotation" else range(n))),
                                         int(item.get("reps", 1)), item.get("pairs", "nearest"),
                                         bool(item.get("adjoint", False))))
        else:
            raise ValueError(f"unknown layer type {t!r}")
        if isinstance(layers[-1], TrainableBlock):
            offset += len(layers[-1].slots)
    return CircuitSpec(n, tuple(layers), d=int(d.get("d", -1)))


# ---------------------------------------------------------------------------
# batched evaluation
# ---------------------------------------------------------------------------


class _RotOp:
    __slots__ = ("slot", "coefs", "paulis", "generator")

    def __init__(self, op: Rotation):
        self.slot = op.slot
        self.coefs = np.array([c for c, _ in op.terms])
        self.paulis = [PauliString(p).matrix() for _, p in op.terms]
        self.generator = op.generator()

    def matrix(self, angle: float) -> np.ndarray:
        out = None
        for c, P in zip(self.coefs, self.paulis):
            g = np.cos(c * angle) * np.eye(P.shape[0]) - 1j * np.sin(c * angle) * P
            out = g if out is None else out @ g
        return out


class _Diag:
    """Diagonal data phase ``exp(i phases(x))``."""

    __slots__ = ("kind", "slots", "signs", "layer", "sign")

    def __init__(self, layer: EmbeddingLayer):
        self.layer = layer
        self.kind = layer.kind
        self.slots = list(layer.slots)
        self.signs = _sign_table(layer.n)
        self.sign = -1.0 if layer.adjoint else 1.0

    def phases(self, X: np.ndarray) -> np.ndarray:
        if self.kind == "rotation":
            return self.sign * (-0.5) * (X[:, self.slots] @ self.signs.T)
        return self.sign * zz_phases(self.layer, X)

    def halves(self) -> np.ndarray | None:
        """Integer table ``(dim, d)`` with phase = sum_j halves[b, j] * x_j / 2, or None."""
        if self.kind != "rotation":
            return None
        d = max(self.slots) + 1
        out = np.zeros((self.signs.shape[0], d), dtype=np.int64)
        for q, s in enumerate(self.slots):
            out[:, s] -= self.signs[:, q].astype(np.int64)
        return out * int(self.sign)


class Program:
    """A circuit lowered to ``S_0 D_1 S_1 ... D_K S_K [O]`` for batched evaluation.

    ``S_j`` are products of fixed gates and rotations, ``D_j`` diagonal data
    phases. Basis changes of X/Y rotation embeddings and the Hadamards of the
    ZZ map are folded into the neighbouring segments. An optional fixed
    ``observable`` is appended to the last segment so ``trace`` returns
    ``tr(U O)``.
    """

    def __init__(self, spec: CircuitSpec, observable: np.ndarray | None = None):
        self.spec = spec
        self.n = spec.n
        self.dim = 2**spec.n
        segments: list[list] = [[]]
        diags: list[_Diag] = []
        for layer in spec.layers:
            if isinstance(layer, TrainableBlock):
                for op in layer.ops:
                    if isinstance(op, Rotation):
                        segments[-1].append(_RotOp(op))
                    else:
                        segments[-1].append(op.matrix(self.n))
            elif layer.kind == "rotation":
                B = diagonalizing_basis(layer)
                segments[-1].append(B)
                diags.append(_Diag(layer))
                segments.append([B.conj().T])
            else:
                hn = tc.kron_all([tc.H] * self.n)
                pieces = []
                for _ in range(layer.reps):
                    pieces += ["diag", hn]
                if layer.adjoint:
                    pieces = [hn.conj().T if isinstance(p, np.ndarray) else p for p in reversed(pieces)]
                for piece in pieces:
                    if isinstance(piece, str):
                        diags.append(_Diag(layer))
                        segments.append([])
                    else:
                        segments[-1].append(piece)
        if observable is not None:
            segments[-1].append(np.asarray(observable, dtype=complex))
        self.segments = [self._fuse(seg) for seg in segments]
        self.diags = diags

    def _fuse(self, seg: list) -> list:
        out: list = []
        for item in seg:
            if isinstance(item, np.ndarray) and out and isinstance(out[-1], np.ndarray):
                out[-1] = out[-1] @ item
            else:
                out.append(item)
        return out

    @property
    def n_params(self) -> int:
        return self.spec.p

    def _segment_products(self, theta: np.ndarray, with_partials: bool):
        eye = np.eye(self.dim, dtype=complex)
        results = []
        for seg in self.segments:
            mats = [item.matrix(theta[item.slot]) if isinstance(item, _RotOp) else item for item in seg]
            if not with_partials:
                prod = eye
                for m in mats:
                    prod = prod @ m
                results.append((prod, None))
                continue
            left = [eye]
            for m in mats:
                left.append(left[-1] @ m)
            right = [eye]
            for m in reversed(mats):
                right.append(m @ right[-1])
            right.reverse()  # right[k] = mats[k] @ ... @ mats[-1]
            partials = []
            for k, item in enumerate(seg):
                if isinstance(item, _RotOp):
                    partials.append((item.slot, left[k] @ item.generator @ right[k]))
            results.append((left[-1], partials))
        return results

    def _phases(self, X: np.ndarray) -> list[np.ndarray]:
        return [np.exp(1j * dg.phases(X)) for dg in self.diags]

    @staticmethod
    def _dmul(phase: np.ndarray, m: np.ndarray) -> np.ndarray:
        """``diag(phase) @ m`` for a batch of phases; ``m`` is ``(d,d)`` or ``(B,d,d)``."""
        return phase[:, :, None] * m

    def _as_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :] if self.spec.d > 0 else X.reshape(-1, 0)
        if X.shape[1] < self.spec.d:
            raise ValueError(f"expected {self.spec.d} features, got {X.shape[1]}")
        return X

    def trace(self, X, theta, grad: bool = False):
        """``tr(U(x) O)`` for each row of ``X``; with ``grad`` also ``(B, p)`` derivatives."""
        X = self._as_batch(X)
        theta = np.asarray(theta, dtype=float)
        B = X.shape[0]
        prods = self._segment_products(theta, grad)
        S = [p for p, _ in prods]
        K = len(self.diags)
        if K == 0:
            val = np.trace(S[0]) * np.ones(B, dtype=complex)
            if not grad:
                return val
            g = np.zeros((B, self.spec.p), dtype=complex)
            for slot, N in prods[0][1]:
                g[:, slot] = -1j * np.trace(N @ np.eye(self.dim))
            return val, g
        ph = self._phases(X)
        # blocks T_j = D_j S_j for j = 1..K, and T_0 = S_0 (cyclic order)
        T = [S[0]] + [self._dmul(ph[j - 1], S[j]) for j in range(1, K + 1)]
        if not grad:
            acc = T[0] @ T[1] if K >= 1 else T[0]
            for j in range(2, K + 1):
                acc = acc @ T[j]
            return np.trace(acc, axis1=-2, axis2=-1)
        # environment E_j: product of all T after segment j, cyclically, so tr(U) = tr(S_j E_j)
        # segment j's own diagonal D_j sits at the end of E_j.
        g = np.zeros((B, self.spec.p), dtype=complex)
        val = None
        for j in range(K + 1):
            env = None
            for i in list(range(j + 1, K + 1)) + list(range(0, j)):
                env = T[i] if env is None else env @ T[i]
            if j >= 1:
                dj = ph[j - 1]
                env = env * dj[:, None, :] if env.ndim == 3 else env[None] * dj[:, None, :]
            if env.ndim == 2:
                env = np.broadcast_to(env, (B, self.dim, self.dim))
            if val is None:
                val = np.einsum("ab,nba->n", S[j], env)
            partials = prods[j][1]
            if partials:
                slots = [s for s, _ in partials]
                Ns = np.stack([N for _, N in partials]).reshape(len(slots), -1)
                envT = np.swapaxes(env, 1, 2).reshape(B, -1)
                g[:, slots] = -1j * (envT @ Ns.T)
        return val, g

    def statevector(self, X, theta) -> np.ndarray:
        """``U(x)|0...0>`` for each row of ``X``; shape ``(B, dim)``."""
        X = self._as_batch(X)
        theta = np.asarray(theta, dtype=float)
        prods = self._segment_products(theta, False)
        S = [p for p, _ in prods]
        ph = self._phases(X)
        psi = np.broadcast_to(S[-1][:, 0], (X.shape[0], self.dim)).astype(complex)
        for j in range(len(self.diags), 0, -1):
            psi = ph[j - 1] * psi
            psi = psi @ S[j - 1].T
        return psi

    def expectation(self, X, theta, M: np.ndarray, grad: bool = False):
        """``<0|U^dagger M U|0>`` per row (real); with ``grad`` adjoint-mode derivatives."""
        X = self._as_batch(X)
        theta = np.asarray(theta, dtype=float)
        B = X.shape[0]
        prods = self._segment_products(theta, grad)
        S = [p for p, _ in prods]
        ph = self._phases(X)
        K = len(self.diags)
        # kets c_j = D_{j+1} S_{j+1} ... S_K |0>, computed right to left
        kets = [None] * (K + 1)
        c = np.broadcast_to(np.eye(self.dim, dtype=complex)[0], (B, self.dim)).copy()
        kets[K] = c
        for j in range(K, 0, -1):
            c = ph[j - 1] * (c @ S[j].T)
            kets[j - 1] = c
        psi = kets[0] @ S[0].T
        Mpsi = psi @ np.asarray(M).T
        val = np.einsum("ba,ba->b", psi.conj(), Mpsi).real
        if not grad:
            return val
        g = np.zeros((B, self.spec.p))
        # bras a_j = <M psi| S_0 D_1 S_1 ... D_j, computed left to right
        bra = Mpsi.conj()
        for j in range(K + 1):
            if j >= 1:
                bra = (bra @ S[j - 1]) * ph[j - 1]
            partials = prods[j][1]
            if partials:
                slots = [s for s, _ in partials]
                Ns = np.stack([N for _, N in partials])
                amp = np.einsum("ba,pac,bc->bp", bra, Ns, kets[j])
                g[:, slots] = 2 * (-1j * amp).real
        return val, g
