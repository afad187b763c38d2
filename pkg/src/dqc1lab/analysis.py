"""Fourier spectra of DQC1 models and exponential-concentration statistics.

Frequencies are kept exact: a :class:`FrequencyVector` stores twice each
per-feature coefficient as an integer, so ``omega(x) = sum_j halves[j] * x_j / 2``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from . import tensorcore as tc
from .circuit import (CircuitSpec, EmbeddingLayer, TrainableBlock, compile_layers, diagonalizing_basis,
                      embedding_diagonal)
from .dqc1 import (DataEncoded, DQC1Evaluator, MaximallyMixed, ModelConfig, _observable, data_encoded_circuit)

AMPLITUDE_FLOOR = 1e-9
MAX_PATH_EXPONENT = 12


@dataclass(frozen=True, order=True)
class FrequencyVector:
    halves: tuple[int, ...]

    @property
    def coeffs(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(h, 2) for h in self.halves)

    def __call__(self, x) -> float:
        return float(np.dot(self.halves, np.asarray(x, dtype=float)[: len(self.halves)]) / 2)

    def __str__(self) -> str:
        return "(" + ", ".join(str(c) for c in self.coeffs) + ")"


@dataclass
class Spectrum:
    frequencies: tuple[FrequencyVector, ...]
    coefficients: dict[FrequencyVector, complex] | None = None
    n_paths: int | None = None

    def __len__(self) -> int:
        return len(self.frequencies)

    def support(self, floor: float = AMPLITUDE_FLOOR) -> set[FrequencyVector]:
        if self.coefficients is None:
            return set(self.frequencies)
        return {w for w, c in self.coefficients.items() if abs(c) > floor}

    def __call__(self, x) -> complex:
        """Resynthesise ``sum c_w exp(i w(x))``."""
        if self.coefficients is None:
            raise ValueError("spectrum has no coefficients")
        return complex(sum(c * np.exp(1j * w(np.atleast_1d(x))) for w, c in self.coefficients.items()))

    def to_json(self) -> dict:
        out = {"frequencies": [[str(c) for c in w.coeffs] for w in self.frequencies]}
        if self.coefficients is not None:
            out["coefficients"] = [
                {"frequency": [str(c) for c in w.coeffs], "re": c.real, "im": c.imag}
                for w, c in sorted(self.coefficients.items())
            ]
        return out


def _layer_halves(layer: EmbeddingLayer, d: int) -> np.ndarray:
    """Integer table ``(2^n, d)``: twice the coefficient of each feature in each diagonal phase."""
    if layer.kind != "rotation":
        raise ValueError("ZZ feature-map layers do not produce phases linear in the features")
    eye = np.eye(d)
    cols = [embedding_diagonal(layer, eye[j]) for j in range(d)]
    return np.rint(2 * np.stack(cols, axis=1)).astype(np.int64)


def _spectrum_circuit(model_or_spec) -> CircuitSpec:
    if isinstance(model_or_spec, CircuitSpec):
        return model_or_spec
    if isinstance(model_or_spec.measurement, DataEncoded):
        return data_encoded_circuit(model_or_spec)
    return model_or_spec.circuit


def enumerate_frequencies(spec) -> set[FrequencyVector]:
    """All distinct sums of one diagonal phase per embedding layer.

    Accepts a :class:`CircuitSpec` or a :class:`ModelConfig` (data-encoded
    measurements add the encoder's layers).
    """
    spec = _spectrum_circuit(spec)
    d = max(spec.d, 1)
    current = {tuple([0] * d)}
    for layer in spec.embeddings:
        table = {tuple(row) for row in _layer_halves(layer, d)}
        current = {tuple(a + b for a, b in zip(u, v)) for u in current for v in table}
    return {FrequencyVector(v) for v in current}


def cardinality_bounds(n: int, L: int, model_kind: str = "dqc1") -> int:
    if n < 1 or L < 1:
        raise ValueError("n and L must be >= 1")
    if model_kind == "dqc1":
        return 2 ** (n * L)
    if model_kind == "qnn":
        return 2 ** (2 * n * (L - 1))
    if model_kind in ("dqc1-data-encoded-measurement", "data-encoded"):
        return 2 ** (n * (L + 2))
    raise ValueError(f"unknown model kind {model_kind!r}")


def _next_pow2(k: int) -> int:
    return 1 << max(0, (k - 1).bit_length())


def dft_coefficients(fn, halves: set[int], floor: float = AMPLITUDE_FLOOR) -> dict[int, complex]:
    """Fourier coefficients of a univariate ``fn`` whose frequencies lie in ``{h/2 : h in halves}``.

    ``fn`` maps an array of inputs to complex values. Keys of the result are
    frequencies in half units. Coefficients below ``floor`` are kept but
    flagged by :meth:`Spectrum.support`.
    """
    scale = 2 if any(h % 2 for h in halves) else 1
    ints = {h * scale // 2 for h in halves}
    kmax = max((abs(k) for k in ints), default=0)
    n_pts = _next_pow2(max(4 * len(ints), 2 * kmax + 2, 2 * len(ints) + 1))
    t = 2 * np.pi * np.arange(n_pts) / n_pts
    vals = np.asarray(fn(scale * t), dtype=complex)
    spec = np.fft.fft(vals) / n_pts
    out = {}
    for k in range(-(n_pts // 2) + 1, n_pts // 2):
        c = spec[k % n_pts]
        if k in ints or abs(c) > floor:
            out[2 * k // scale] = complex(c)
    return out


def extract_coefficients_dft(model: ModelConfig, theta, feature_index: int = 0, x0=None) -> Spectrum:
    """Coefficients along one feature (others fixed at ``x0``) by sampling and FFT."""
    spec = _spectrum_circuit(model)
    try:
        freqs = enumerate_frequencies(spec)
    except ValueError as exc:
        raise ValueError(f"non-commensurate frequencies: {exc}") from None
    halves = {w.halves[feature_index] for w in freqs} if spec.d else {0}
    d = max(spec.d, 1)
    base = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    ev = DQC1Evaluator(model)

    def fn(ts):
        X = np.repeat(base[None, :], len(ts), axis=0)
        if spec.d:
            X[:, feature_index] = ts
        return ev.values(X, theta)

    coeffs = dft_coefficients(fn, halves)
    table = {FrequencyVector((h,)): c for h, c in coeffs.items()}
    return Spectrum(tuple(sorted(table)), table)


def coefficients_direct(model: ModelConfig, theta) -> Spectrum:
    """Coefficients by enumerating every diagonal-index path through the embeddings.

    Basis changes of the embeddings are folded into the trainable products
    ``W~_l``, and each path ``(k_1, ..., k_K)`` contributes
    ``W~_1[k_K, k_1] W~_2[k_1, k_2] ... W~_K[k_{K-1}, k_K]`` to the frequency
    ``sum_l D_l[k_l]``.
    """
    spec = _spectrum_circuit(model)
    n, dim = spec.n, 2**spec.n
    theta = np.asarray(theta, dtype=float)
    obs = np.eye(dim) if isinstance(model.measurement, DataEncoded) else _observable(model)
    runs: list[list] = [[]]
    embeds: list[EmbeddingLayer] = []
    for layer in spec.layers:
        if isinstance(layer, TrainableBlock):
            runs[-1].append(layer)
        else:
            embeds.append(layer)
            runs.append([])
    K = len(embeds)
    if n * K > MAX_PATH_EXPONENT:
        raise ValueError(f"path enumeration over 2^{n * K} paths exceeds the guard 2^{MAX_PATH_EXPONENT}")
    G = [compile_layers(n, run, np.zeros(max(spec.d, 1)), theta) for run in runs]
    d = max(spec.d, 1)
    if K == 0:
        c0 = complex(np.trace(obs @ G[0]))
        w = FrequencyVector(tuple([0] * d))
        return Spectrum((w,), {w: c0}, n_paths=1)
    Bs = [diagonalizing_basis(e) for e in embeds]
    Wt = [Bs[-1].conj().T @ G[K] @ obs @ G[0] @ Bs[0]]
    for ell in range(1, K):
        Wt.append(Bs[ell - 1].conj().T @ G[ell] @ Bs[ell])
    tables = [_layer_halves(e, d) for e in embeds]
    paths = np.array(list(itertools.product(range(dim), repeat=K)), dtype=np.int64)
    amp = Wt[0][paths[:, -1], paths[:, 0]]
    for ell in range(1, K):
        amp = amp * Wt[ell][paths[:, ell - 1], paths[:, ell]]
    freq = sum(tables[ell][paths[:, ell]] for ell in range(K))
    coeffs: dict[FrequencyVector, complex] = {}
    for row, a in zip(map(tuple, freq), amp):
        w = FrequencyVector(row)
        coeffs[w] = coeffs.get(w, 0j) + complex(a)
    return Spectrum(tuple(sorted(coeffs)), coeffs, n_paths=len(paths))


def project(spectrum: Spectrum, feature_index: int, x0) -> dict[int, complex]:
    """Collapse a multivariate spectrum onto one feature with the others fixed at ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    out: dict[int, complex] = {}
    for w, c in spectrum.coefficients.items():
        rest = sum(h * x0[j] / 2 for j, h in enumerate(w.halves) if j != feature_index)
        key = w.halves[feature_index]
        out[key] = out.get(key, 0j) + c * np.exp(1j * rest)
    return out


# ---------------------------------------------------------------------------
# concentration
# ---------------------------------------------------------------------------


def hoeffding_bound(n: int, t: float, clamp: bool = True) -> float:
    """``4 exp(-t^2 / 2^(n+1))`` for deviations of ``tr(U)``."""
    if t <= 0:
        raise ValueError("t must be positive")
    value = 4 * math.exp(-t * t / 2 ** (n + 1))
    return min(1.0, value) if clamp else value


def chebyshev_bound(var: float, eps: float, clamp: bool = True) -> float:
    if eps <= 0:
        raise ValueError("eps must be positive")
    value = var / eps**2
    return min(1.0, value) if clamp else value


@dataclass
class ConcentrationReport:
    n: int
    samples: int
    mean_re: float
    mean_im: float
    var_re: float
    var_im: float
    scaled_var_re: float
    scaled_var_im: float
    bounds: list[dict] = field(default_factory=list)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("bounds")
        d["hoeffding_violations"] = sum(b["empirical"] > b["bound"] for b in self.bounds if b["kind"] == "hoeffding")
        d["chebyshev_violations"] = sum(b["empirical"] > b["bound"] for b in self.bounds if b["kind"] == "chebyshev")
        return d


HOEFFDING_T = (0.5, 1.0, 1.5, 2.0, 3.0)
CHEBYSHEV_C = (0.5, 1.0, 1.5, 2.0, 3.0)


def concentration_study(n_range, samples: int, rng) -> list[ConcentrationReport]:
    """Haar statistics of ``f = tr(U) / 2^n`` for each ``n``.

    ``rng`` is a root seed (each ``n`` gets ``child_rng(seed, n)``) or a
    generator consumed in order.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    reports = []
    for n in n_range:
        gen = tc.child_rng(rng, n) if isinstance(rng, (int, np.integer)) else rng
        tr = np.array([np.trace(tc.haar_unitary(n, gen)) for _ in range(samples)])
        f = tr / 2**n
        var_re, var_im = float(np.var(f.real, ddof=1)), float(np.var(f.imag, ddof=1))
        rep = ConcentrationReport(
            n=n, samples=samples,
            mean_re=float(f.real.mean()), mean_im=float(f.imag.mean()),
            var_re=var_re, var_im=var_im,
            scaled_var_re=4**n * var_re, scaled_var_im=4**n * var_im,
        )
        dev = np.abs(tr - tr.mean())
        for t in HOEFFDING_T:
            rep.bounds.append({"kind": "hoeffding", "t": t, "empirical": float(np.mean(dev >= t)),
                               "bound": hoeffding_bound(n, t, clamp=False)})
        var_f = var_re + var_im
        for c in CHEBYSHEV_C:
            eps = c / 2**n
            rep.bounds.append({"kind": "chebyshev", "t": eps, "empirical": float(np.mean(np.abs(f) >= eps)),
                               "bound": chebyshev_bound(var_f, eps, clamp=False)})
        reports.append(rep)
    return reports
