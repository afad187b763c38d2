import itertools
import math

import numpy as np
import pytest

from dqc1lab import tensorcore as tc
from dqc1lab.analysis import (FrequencyVector, cardinality_bounds, chebyshev_bound, coefficients_direct,
                              concentration_study, dft_coefficients, enumerate_frequencies,
                              extract_coefficients_dft, hoeffding_bound, project)
from dqc1lab.circuit import (CircuitSpec, TrainableBlock, build_product_embedding, build_reuploading_circuit,
                             build_zz_feature_map, compile_unitary, random_circuit)
from dqc1lab.dqc1 import DataEncoded, DQC1Evaluator, Explicit, ModelConfig, SignalTimes, model_value


def halves_of(freqs):
    return sorted(w.halves[0] for w in freqs)


def random_density(n, rng):
    a = rng.normal(size=(2**n, 2**n)) + 1j * rng.normal(size=(2**n, 2**n))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def test_frequency_vector_is_exact():
    w = FrequencyVector((1, -4))
    assert str(w) == "(1/2, -2)"
    assert w([2.0, 0.5]) == pytest.approx(0.0)
    assert FrequencyVector((2,)) == FrequencyVector((2,))


def test_enumerate_small_examples():
    assert halves_of(enumerate_frequencies(build_reuploading_circuit(1, 1, "ansatz1"))) == [-1, 1]
    assert halves_of(enumerate_frequencies(build_reuploading_circuit(4, 1, "ansatz1"))) == [-4, -2, 0, 2, 4]


@pytest.mark.parametrize("n,L", list(itertools.product(range(1, 5), range(1, 4))))
def test_shared_feature_gives_nl_plus_one(n, L):
    assert len(enumerate_frequencies(build_reuploading_circuit(n, L, "ansatz1"))) == n * L + 1


def test_generic_features_attain_bound():
    spec = build_reuploading_circuit(2, 2, "ansatz1", slots=[(0, 1), (2, 3)])
    freqs = enumerate_frequencies(spec)
    # independent oracle: every sign pattern of the four features, halves = -s
    oracle = {tuple(-s for s in signs) for signs in itertools.product((-1, 1), repeat=4)}
    assert {w.halves for w in freqs} == oracle
    assert len(freqs) == 16 == cardinality_bounds(2, 2)


def test_zz_layers_rejected():
    spec = CircuitSpec(2, (build_zz_feature_map(2, 1, slots=(0, 1)),), d=2)
    with pytest.raises(ValueError):
        enumerate_frequencies(spec)


def test_cardinality_bounds():
    assert cardinality_bounds(2, 3, "dqc1") == 64
    assert cardinality_bounds(4, 2, "qnn") == 256
    assert cardinality_bounds(2, 1, "dqc1-data-encoded-measurement") == 64
    with pytest.raises(ValueError):
        cardinality_bounds(0, 1)


def test_dft_recovers_known_trig_polynomial():
    coeffs = {-3: 0.2 - 0.1j, 1: 0.5, 4: 0.3j}
    fn = lambda x: sum(c * np.exp(1j * h * x / 2) for h, c in coeffs.items())
    out = dft_coefficients(fn, set(coeffs))
    for h, c in coeffs.items():
        assert abs(out[h] - c) < 1e-12
    assert all(abs(c) < 1e-12 for h, c in out.items() if h not in coeffs)


def test_embedding_free_circuit_is_constant():
    rng = np.random.default_rng(0)
    spec = CircuitSpec(2, (random_circuit(2, 1, rng).layers[0],), d=1)
    th = rng.uniform(0, 6, spec.p)
    m = ModelConfig(2, spec)
    c0 = np.trace(compile_unitary(spec, [0.0], th)) / 4
    dft = extract_coefficients_dft(m, th)
    assert dft.support() == {FrequencyVector((0,))}
    assert abs(dft.coefficients[FrequencyVector((0,))] - c0) < 1e-12
    direct = coefficients_direct(m, th)
    assert abs(direct.coefficients[FrequencyVector((0,))] - c0) < 1e-12


def test_n4_support_generically_full():
    rng = np.random.default_rng(1)
    spec = build_reuploading_circuit(4, 1, "ansatz1")
    m = ModelConfig(4, spec)
    sp = extract_coefficients_dft(m, rng.uniform(0, 2 * np.pi, spec.p))
    assert halves_of(sp.support()) == [-4, -2, 0, 2, 4]


def test_resynthesis_off_grid():
    rng = np.random.default_rng(2)
    spec = build_reuploading_circuit(2, 3, "ansatz2")
    m = ModelConfig(2, spec)
    th = rng.uniform(0, 2 * np.pi, spec.p)
    sp = extract_coefficients_dft(m, th)
    xs = rng.uniform(-10, 10, 50)
    for x in xs:
        assert abs(sp(x) - model_value(m, [x], th)) < 1e-9


def test_identity_blocks_give_aligned_path_counts():
    n, L = 2, 2
    emb = build_product_embedding(n, "Y", (0, 0))
    layers = [TrainableBlock(n, ())]
    for _ in range(L):
        layers += [emb, TrainableBlock(n, ())]
    spec = CircuitSpec(n, tuple(layers), d=1)
    sp = coefficients_direct(ModelConfig(n, spec), [])
    # each D has halves {-2, 0, 0, 2}; aligned paths double them
    expected = {-4: 0.25, 0: 0.5, 4: 0.25}
    assert {w.halves[0]: c for w, c in sp.coefficients.items() if abs(c) > 1e-12} == pytest.approx(expected)
    assert sp.n_paths == 2 ** (n * L)


@pytest.mark.parametrize("seed", range(3))
def test_direct_matches_dft_multivariate(seed):
    rng = np.random.default_rng(seed)
    spec = random_circuit(2, 2, rng, d=3)
    m = ModelConfig(2, spec)
    th = rng.uniform(0, 2 * np.pi, spec.p)
    direct = coefficients_direct(m, th)
    assert direct.n_paths == 16
    x0 = rng.uniform(-2, 2, 3)
    for j in range(3):
        dft = extract_coefficients_dft(m, th, feature_index=j, x0=x0)
        proj = project(direct, j, x0)
        by_half = {w.halves[0]: c for w, c in dft.coefficients.items()}
        for h in set(proj) | set(by_half):
            assert abs(proj.get(h, 0) - by_half.get(h, 0)) < 1e-9
    x = rng.uniform(-3, 3, 3)
    assert abs(direct(x) - model_value(m, x, th)) < 1e-12


def test_direct_guard():
    spec = build_reuploading_circuit(4, 4, "ansatz1")
    with pytest.raises(ValueError):
        coefficients_direct(ModelConfig(4, spec), np.zeros(spec.p))


def test_dft_support_within_enumeration():
    rng = np.random.default_rng(4)
    for n, L in itertools.product(range(1, 4), range(1, 4)):
        spec = build_reuploading_circuit(n, L, "ansatz1")
        allowed = {w.halves for w in enumerate_frequencies(spec)}
        for _ in range(20 if n * L <= 4 else 3):
            sp = extract_coefficients_dft(ModelConfig(n, spec), rng.uniform(0, 2 * np.pi, spec.p))
            assert {w.halves for w in sp.support()} <= allowed


def test_thermal_support_matches_maximally_mixed():
    rng = np.random.default_rng(5)
    spec = build_reuploading_circuit(2, 2, "ansatz1")
    th = rng.uniform(0, 2 * np.pi, spec.p)
    base = extract_coefficients_dft(ModelConfig(2, spec), th).support()
    allowed = enumerate_frequencies(spec)
    for _ in range(5):
        rho = random_density(2, rng)
        sp = extract_coefficients_dft(ModelConfig(2, spec, working_state=Explicit(rho)), th).support()
        assert sp <= allowed
        assert sp == base


def test_data_encoded_measurement_enlarges_support():
    rng = np.random.default_rng(6)
    spec = build_reuploading_circuit(1, 1, "ansatz1")
    enc = CircuitSpec(1, (build_product_embedding(1, "Y", (0,)),), d=1)
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    M = a + a.conj().T
    th = rng.uniform(0, 2 * np.pi, spec.p)
    base = extract_coefficients_dft(ModelConfig(1, spec, measurement=SignalTimes(M)), th).support()
    m = ModelConfig(1, spec, measurement=DataEncoded(M, enc))
    enlarged = extract_coefficients_dft(m, th).support()
    assert base < enlarged
    assert len(enlarged) <= cardinality_bounds(1, 1, "data-encoded")
    assert {w.halves for w in enlarged} <= {w.halves for w in enumerate_frequencies(m)}
    xs = rng.uniform(-5, 5, 10)
    direct = coefficients_direct(m, th)
    ev = DQC1Evaluator(m)
    assert np.allclose([direct([x]) for x in xs], ev.values(xs[:, None], th), atol=1e-12)


def test_hoeffding_and_chebyshev():
    assert hoeffding_bound(1, 2.0, clamp=False) == pytest.approx(4 * math.exp(-1))
    assert hoeffding_bound(1, 2.0) == 1.0
    assert hoeffding_bound(2, 100.0) < 1e-300
    assert chebyshev_bound(0.0, 0.3) == 0.0
    assert chebyshev_bound(0.01, 0.2) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        hoeffding_bound(1, 0.0)
    with pytest.raises(ValueError):
        chebyshev_bound(0.1, -1.0)


def test_concentration_statistics():
    reports = concentration_study([3, 4], 2000, 11)
    r3, r4 = reports
    assert 0.4 <= r4.scaled_var_re <= 0.6
    for r in reports:
        assert abs(r.mean_re) <= 4 * math.sqrt(r.var_re / r.samples)
        row = r.row()
        assert row["hoeffding_violations"] == 0 and row["chebyshev_violations"] == 0
    assert 3 <= r3.var_re / r4.var_re <= 5.5
    with pytest.raises(ValueError):
        concentration_study([2], 50, 0)


def test_concentration_is_seeded():
    a = concentration_study([2], 200, 3)[0]
    b = concentration_study([2], 200, 3)[0]
    assert a.row() == b.row()
    g = concentration_study([2], 200, tc.child_rng(3))[0]
    assert g.var_re >= 0
