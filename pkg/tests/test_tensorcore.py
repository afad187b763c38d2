import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from dqc1lab import tensorcore as tc


def test_kron_dimensions_and_mixed_product():
    rng = np.random.default_rng(0)
    a, b, c, d = (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)) for _ in range(4))
    assert tc.kron(a, b).shape == (4, 4)
    assert np.allclose(tc.kron(a, b) @ tc.kron(c, d), tc.kron(a @ c, b @ d), atol=1e-12)


def test_kron_rejects_non_square():
    with pytest.raises(ValueError):
        tc.kron(np.ones((2, 3)), np.eye(2))


def test_qubit_zero_is_most_significant():
    m = tc.single_qubit_op(2, 0, tc.X)
    assert np.allclose(m, np.kron(tc.X, tc.I2))


def test_pauli_string_matrix_and_validation():
    assert np.allclose(tc.PauliString("XZ").matrix(), np.kron(tc.X, tc.Z))
    with pytest.raises(ValueError):
        tc.PauliString("XQ")
    with pytest.raises(ValueError):
        tc.PauliString("")


@pytest.mark.parametrize("a,b,expected", [("XX", "ZZ", True), ("XI", "ZI", False), ("XY", "YX", True),
                                          ("IZ", "XI", True)])
def test_pauli_commutation(a, b, expected):
    pa, pb = tc.PauliString(a), tc.PauliString(b)
    ma, mb = pa.matrix(), pb.matrix()
    assert pa.commutes_with(pb) == expected
    assert np.allclose(ma @ mb, mb @ ma) == expected


@settings(max_examples=40, deadline=None)
@given(st.text(alphabet="IXYZ", min_size=1, max_size=3), st.floats(-10, 10))
def test_pauli_rotation_matches_expm(letters, theta):
    P = tc.PauliString(letters).matrix()
    assert np.allclose(tc.pauli_rotation(letters, theta), expm(-1j * theta * P), atol=1e-12)


def test_cnot_truth_table():
    m = tc.cnot(2, 0, 1)
    for b in range(4):
        out = b ^ 1 if b & 2 else b
        assert m[out, b] == 1
    with pytest.raises(ValueError):
        tc.cnot(2, 1, 1)


def test_haar_unitary_is_unitary_and_seeded():
    u = tc.haar_unitary(3, tc.child_rng(5, 1))
    assert tc.is_unitary(u)
    assert np.array_equal(u, tc.haar_unitary(3, tc.child_rng(5, 1)))
    assert not np.allclose(u, tc.haar_unitary(3, tc.child_rng(5, 2)))


def test_haar_first_moment_of_trace():
    # E|tr U|^2 = 1 for Haar unitaries of any dimension
    rng = tc.child_rng(1)
    vals = np.array([abs(np.trace(tc.haar_unitary(2, rng))) ** 2 for _ in range(4000)])
    assert abs(vals.mean() - 1) < 4 * vals.std() / np.sqrt(len(vals))


def test_sym_eig_matches_reconstruction_and_order():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(7, 7))
    a = a + a.T
    w, v = tc.sym_eig(a)
    assert np.all(np.diff(w) <= 0)
    assert np.allclose(v.T @ v, np.eye(7), atol=1e-12)
    assert np.allclose(v * w @ v.T, a, atol=1e-10)
    assert np.allclose(w, np.sort(np.linalg.eigvalsh(a))[::-1], atol=1e-10)


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(ValueError):
        tc.sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_density_checks():
    assert tc.is_density(np.eye(4) / 4)
    assert not tc.is_density(np.eye(4) / 3)
    assert not tc.is_density(np.diag([1.5, -0.5]))
    assert tc.is_hermitian(tc.Y)
    assert not tc.is_unitary(2 * tc.X)


def test_n_qubits_of():
    assert tc.n_qubits_of(np.eye(8)) == 3
    with pytest.raises(ValueError):
        tc.n_qubits_of(np.eye(6))


def test_kron_small_cases_and_index_formula():
    assert np.array_equal(tc.kron(tc.I2, tc.I2), np.eye(4))
    assert np.array_equal(tc.kron(tc.Z, tc.I2), np.diag([1, 1, -1, -1]))
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    k = tc.kron(a, b)
    for i, j, p, q in np.ndindex(2, 2, 2, 2):
        assert k[i * 2 + p, j * 2 + q] == a[i, j] * b[p, q]


def test_rotation_examples_and_group_property():
    assert np.allclose(tc.pauli_rotation("Z", 0.0), np.eye(2), atol=1e-15)
    assert np.allclose(tc.pauli_rotation("Z", np.pi / 2), np.diag([-1j, 1j]), atol=1e-15)
    r = tc.pauli_rotation("XY", 0.3) @ tc.pauli_rotation("XY", 1.1)
    assert np.allclose(r, tc.pauli_rotation("XY", 1.4), atol=1e-12)


def test_trace_cyclicity():
    rng = np.random.default_rng(5)
    a, b = (rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8)) for _ in range(2))
    assert abs(np.trace(a @ b) - np.trace(b @ a)) < 1e-12


def test_haar_trace_moments_10000_draws():
    rng = tc.child_rng(7)
    tr = np.array([np.trace(tc.haar_unitary(2, rng)) for _ in range(10_000)])
    assert abs(np.mean(np.abs(tr) ** 2) - 1) < 0.05
    assert abs(tr.mean()) <= 4 / np.sqrt(len(tr))


def test_sym_eig_small_examples():
    w, v = tc.sym_eig(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(w, [3, 2, 1])
    assert np.allclose(np.abs(v), np.eye(3)[:, [0, 2, 1]])
    w, v = tc.sym_eig(np.eye(4))
    assert np.allclose(w, 1) and np.allclose(v * w @ v.T, np.eye(4))
