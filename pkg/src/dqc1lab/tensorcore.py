"""Dense complex linear algebra and random-matrix primitives.

Every operator in the package is a plain ``numpy`` complex array of shape
``(2**k, 2**k)``. Qubit 0 is the most significant tensor factor, so the basis
index ``b`` carries qubit ``q`` in bit ``n - 1 - q``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

UNITARY_ATOL = 1e-12
HERMITIAN_ATOL = 1e-12
TRACE_ATOL = 1e-12
EIGEN_FLOOR = -1e-10
SYMMETRY_ATOL = 1e-10

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
S = np.array([[1, 0], [0, 1j]], dtype=complex)

PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    """Derive an independent random stream from a root seed.

    The stream for ``(seed, k1, k2, ...)`` is
    ``SeedSequence(seed, spawn_key=(k1, k2, ...))``; the same tuple always
    yields the same stream, and distinct tuples are statistically
    independent. Loops that fan out over seeds, data points or trials use the
    loop counter as the key.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(keys)))


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or a.shape[0] != a.shape[1] or b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ValueError("kron expects two square matrices")
    return np.kron(a, b)


def kron_all(mats) -> np.ndarray:
    return reduce(np.kron, mats)


@dataclass(frozen=True)
class PauliString:
    """A tensor product of single-qubit Paulis, e.g. ``PauliString("XZI")``."""

    letters: str

    def __post_init__(self):
        if len(self.letters) < 1:
            raise ValueError("PauliString needs at least one letter")
        bad = set(self.letters) - set("IXYZ")
        if bad:
            raise ValueError(f"invalid Pauli letters {sorted(bad)!r}")

    @property
    def n_qubits(self) -> int:
        return len(self.letters)

    @property
    def is_identity(self) -> bool:
        return set(self.letters) == {"I"}

    def matrix(self) -> np.ndarray:
        return _pauli_matrix(self.letters)

    def commutes_with(self, other: "PauliString") -> bool:
        # Paulis commute iff they anticommute on an even number of sites.
        clashes = sum(
            1 for a, b in zip(self.letters, other.letters)
            if a != "I" and b != "I" and a != b
        )
        return clashes % 2 == 0

    def on(self, n: int, wires) -> "PauliString":
        """Embed this string on ``wires`` of an ``n``-qubit register."""
        letters = ["I"] * n
        for w, c in zip(wires, self.letters):
            letters[w] = c
        return PauliString("".join(letters))

    def __str__(self) -> str:
        return self.letters


_PAULI_CACHE: dict[str, np.ndarray] = {}


def _pauli_matrix(letters: str) -> np.ndarray:
    m = _PAULI_CACHE.get(letters)
    if m is None:
        m = kron_all([PAULI[c] for c in letters])
        m.setflags(write=False)
        _PAULI_CACHE[letters] = m
    return m


def pauli_rotation(p: PauliString | str, theta: float) -> np.ndarray:
    """Return ``exp(-i theta P) = cos(theta) I - i sin(theta) P``."""
    if isinstance(p, str):
        p = PauliString(p)
    P = p.matrix()
    return np.cos(theta) * np.eye(P.shape[0], dtype=complex) - 1j * np.sin(theta) * P


def single_qubit_op(n: int, wire: int, op: np.ndarray) -> np.ndarray:
    return kron_all([op if q == wire else I2 for q in range(n)])


def cnot(n: int, control: int, target: int) -> np.ndarray:
    """Permutation matrix of a CNOT on an ``n``-qubit register."""
    if control == target:
        raise ValueError("control and target must differ")
    dim = 2**n
    idx = np.arange(dim)
    cbit = (idx >> (n - 1 - control)) & 1
    flipped = np.where(cbit == 1, idx ^ (1 << (n - 1 - target)), idx)
    m = np.zeros((dim, dim), dtype=complex)
    m[flipped, idx] = 1.0
    return m


def haar_unitary(n_qubits: int, rng: np.random.Generator) -> np.ndarray:
    """Sample a Haar-random unitary on ``n_qubits`` qubits.

    Ginibre matrix, QR factorisation, then the columns of ``Q`` are
    rephased so that the diagonal of ``R`` is positive real; without that
    step the QR output is not Haar distributed.
    """
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    dim = 2**n_qubits
    g = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def sym_eig(m: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi sweeps.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns.
    """
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("sym_eig expects a square matrix")
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_ATOL:
        raise ValueError("sym_eig expects a symmetric matrix")
    a = (a + a.T) / 2
    dim = a.shape[0]
    v = np.eye(dim)
    scale = max(np.linalg.norm(a), 1.0)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(dim - 1):
            for q in range(p + 1, dim):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1 + tau * tau)) if tau != 0 else 1.0
                c = 1 / np.sqrt(1 + t * t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                vp = c * v[:, p] - s * v[:, q]
                vq = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = vp, vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    w = np.diagonal(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def is_unitary(u: np.ndarray, atol: float = UNITARY_ATOL) -> bool:
    u = np.asarray(u)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.max(
        np.abs(u.conj().T @ u - np.eye(u.shape[0]))
    ) <= atol


def is_hermitian(m: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    m = np.asarray(m)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and np.max(np.abs(m - m.conj().T)) <= atol


def is_density(rho: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    if not is_hermitian(rho, atol):
        return False
    if abs(np.trace(rho) - 1) > TRACE_ATOL:
        return False
    return np.min(np.linalg.eigvalsh((rho + rho.conj().T) / 2)) >= EIGEN_FLOOR


def n_qubits_of(m: np.ndarray) -> int:
    dim = m.shape[0]
    n = dim.bit_length() - 1
    if 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n
