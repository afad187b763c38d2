"""Regression targets and classification datasets (CSV ingestion, PCA, scaling, splits)."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import tensorcore as tc

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# regression targets
# ---------------------------------------------------------------------------

TARGET_ORDERS = {"g1": 2, "g2": 3, "g3": 4}
GRID_POINTS = 70
GRID_LO, GRID_HI = -6.0, 6.0


@dataclass(frozen=True)
class TargetFunction:
    """``g(x) = sum_{k=-K}^{K} c_k e^{ikx}`` with ``c_0 = 0.1`` and ``c_k = 0.05 + 0.05i`` otherwise."""

    id: str
    c0: complex = 0.1
    ck: complex = 0.05 + 0.05j

    def __post_init__(self):
        if self.id not in TARGET_ORDERS:
            raise ValueError(f"unknown target {self.id!r}; expected one of {sorted(TARGET_ORDERS)}")

    @property
    def K(self) -> int:
        return TARGET_ORDERS[self.id]

    def coefficients(self) -> dict[int, complex]:
        return {k: (self.c0 if k == 0 else self.ck) for k in range(-self.K, self.K + 1)}

    def complex_value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ks = np.arange(-self.K, self.K + 1)
        c = np.array([self.coefficients()[k] for k in ks])
        return np.exp(1j * np.multiply.outer(x, ks)) @ c

    def __call__(self, x) -> np.ndarray:
        return self.complex_value(x).real


def target_grid(fn: TargetFunction | str):
    """70 equispaced points on [-6, 6] and the real part of the target there."""
    fn = TargetFunction(fn) if isinstance(fn, str) else fn
    x = GRID_LO + (GRID_HI - GRID_LO) * np.arange(GRID_POINTS) / (GRID_POINTS - 1)
    return x, fn(x)


def projection_residual(x, y, max_freq: float) -> float:
    """Least-squares MSE (with the 1/(2N) convention) of ``y`` against ``span{e^{ikx} : |k| <= max_freq}``.

    Real basis ``1, cos kx, sin kx``; ``max_freq`` may be a half-integer.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    steps = np.arange(0.5 if max_freq % 1 else 1, max_freq + 1e-9, 0.5 if max_freq % 1 else 1)
    cols = [np.ones_like(x)]
    for k in steps:
        cols += [np.cos(k * x), np.sin(k * x)]
    A = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    return float(r @ r / (2 * len(y)))


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

MNIST_SCHEMA = "header row 'label,pixel0,...,pixel783'; one image per row; integer label 0-9; pixels 0-255"


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    train: np.ndarray | None = None
    test: np.ndarray | None = None
    provenance: list[dict] = field(default_factory=list)
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("X must be N x d with one label per row")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features must be finite")

    @property
    def n_samples(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def _require_split(self):
        if self.train is None:
            raise ValueError("dataset has no train/test split; call split() first")

    @property
    def X_train(self):
        self._require_split()
        return self.X[self.train]

    @property
    def y_train(self):
        self._require_split()
        return self.y[self.train]

    @property
    def X_test(self):
        self._require_split()
        return self.X[self.test]

    @property
    def y_test(self):
        self._require_split()
        return self.y[self.test]

    def _with(self, step: dict, **changes) -> "Dataset":
        return replace(self, provenance=self.provenance + [step], **changes)


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ValueError(f"non-numeric cell {cell!r} in row {row}, column {col!r}") from None


def read_table(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise ValueError("empty dataset")
    header, body = rows[0], rows[1:]
    if not body:
        raise ValueError("empty dataset")
    data = np.empty((len(body), len(header)))
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ValueError(f"ragged row {i}: {len(r)} cells, header has {len(header)}")
        data[i - 2] = [_parse_float(c, i, h) for c, h in zip(r, header)]
    return header, data


def load_csv(path, label_column: str = "label", classes=None) -> Dataset:
    """Read a numeric CSV; with ``classes=(a, b)`` keep those labels and map ``a -> -1``, ``b -> +1``."""
    header, data = read_table(path)
    if label_column not in header:
        raise ValueError(f"label column {label_column!r} not in header")
    j = header.index(label_column)
    y = data[:, j]
    X = np.delete(data, j, axis=1)
    names = tuple(h for h in header if h != label_column)
    step = {"op": "load_csv", "path": str(path), "sha256": _sha256(path), "label_column": label_column}
    if classes is not None:
        a, b = (float(c) for c in classes)
        missing = [c for c in (a, b) if not np.any(y == c)]
        if missing:
            raise ValueError(f"missing classes {missing} in {path}")
        keep = (y == a) | (y == b)
        X, y = X[keep], np.where(y[keep] == a, -1.0, 1.0)
        step["classes"] = [a, b]
    return Dataset(X, y, provenance=[step], feature_names=names)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def fixture_path(name: str) -> Path:
    """Path of a bundled CSV (``iris``, ``wine`` or ``mnist_smoke``)."""
    p = resources.files("dqc1lab") / "datasets" / f"{name}.csv"
    return Path(str(p))


def load_fixture(name: str, classes=(1, 2)) -> Dataset:
    return load_csv(fixture_path(name), "label", classes)


def split(ds: Dataset, ratio: float = 0.8, seed: int = 0) -> Dataset:
    """Seeded shuffle; the first ``N - round(0.2 N)`` indices (for ratio 0.8) form the train split."""
    n = ds.n_samples
    if n < 5:
        raise ValueError("need at least 5 samples to split")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    n_test = int(round((1 - ratio) * n))
    order = np.random.default_rng(seed).permutation(n)
    train, test = np.sort(order[: n - n_test]), np.sort(order[n - n_test:])
    return ds._with({"op": "split", "ratio": ratio, "seed": seed}, train=train, test=test)


def pca(ds: Dataset, k: int) -> Dataset:
    """Project onto the top-``k`` principal axes of the (centered) training split."""
    if k > ds.n_features:
        raise ValueError(f"cannot keep {k} components of {ds.n_features} features")
    if k < 1:
        raise ValueError("k must be >= 1")
    ref = ds.X_train if ds.train is not None else ds.X
    mean = ref.mean(axis=0)
    c = ref - mean
    scale = max(len(ref) - 1, 1)
    if c.shape[1] <= c.shape[0]:
        w, v = tc.sym_eig(c.T @ c / scale)
        v = v[:, :k]
    else:
        # wide data: diagonalise the smaller Gram matrix, whose nonzero spectrum is the same
        w, u = tc.sym_eig(c @ c.T / scale)
        if k > len(w) or w[k - 1] <= 1e-12 * max(w[0], 1e-300):
            raise ValueError(f"training split has rank below {k}")
        v = c.T @ u[:, :k] / np.sqrt(w[:k] * scale)
    # sign convention: largest-magnitude entry of each axis is positive
    pivots = np.argmax(np.abs(v), axis=0)
    v = v * np.sign(v[pivots, np.arange(k)])
    step = {"op": "pca", "k": k, "mean": mean.tolist(), "components": v.tolist(), "eigenvalues": w.tolist()}
    return ds._with(step, X=(ds.X - mean) @ v, feature_names=tuple(f"pc{i}" for i in range(k)))


TEST_CLAMP = (-0.5, 1.5)


def minmax_scale(ds: Dataset, upper: float = 1.0) -> Dataset:
    """Map each training-split feature onto ``[0, 1]`` and optionally stretch to ``[0, upper]``.

    Test rows use the training statistics and are clamped to ``[-0.5, 1.5]``
    before the stretch. A constant feature maps to 0.5.
    """
    ref = ds.X_train if ds.train is not None else ds.X
    lo, hi = ref.min(axis=0), ref.max(axis=0)
    span = hi - lo
    const = span == 0
    if np.any(const):
        log.warning("constant feature(s) %s mapped to 0.5", np.flatnonzero(const).tolist())
    X = np.where(const, 0.5, (ds.X - lo) / np.where(const, 1.0, span))
    if ds.test is not None:
        X[ds.test] = np.clip(X[ds.test], *TEST_CLAMP)
    X = X * upper
    step = {"op": "minmax_scale", "min": lo.tolist(), "max": hi.tolist(), "upper": upper}
    return ds._with(step, X=X)


def minmax_inverse(X_scaled, step: dict) -> np.ndarray:
    """Undo :func:`minmax_scale` (unclamped rows) from its provenance entry."""
    lo, hi = np.array(step["min"]), np.array(step["max"])
    span = np.where(hi - lo == 0, 1.0, hi - lo)
    return np.asarray(X_scaled) / step["upper"] * span + lo


def replay(provenance: list[dict], base: Dataset | None = None) -> Dataset:
    """Rebuild a dataset from its provenance log.

    PCA and scaling are recomputed from the replayed training split, so the
    result is bit-identical to the original pipeline.
    """
    ds = base
    for step in provenance:
        op = step["op"]
        if op == "load_csv":
            if _sha256(step["path"]) != step["sha256"]:
                raise ValueError(f"{step['path']} changed since the dataset was built")
            ds = load_csv(step["path"], step["label_column"], step.get("classes"))
        elif op == "subsample":
            ds = subsample(ds, step["n"], step["seed"])
        elif op == "split":
            ds = split(ds, step["ratio"], step["seed"])
        elif op == "pca":
            ds = pca(ds, step["k"])
        elif op == "minmax_scale":
            ds = minmax_scale(ds, step["upper"])
        else:
            raise ValueError(f"unknown provenance step {op!r}")
    return ds


def save_csv(ds: Dataset, path) -> Path:
    """Write ``label`` plus features, and the provenance log to ``<path>.json``."""
    path = Path(path)
    names = ds.feature_names or tuple(f"x{i}" for i in range(ds.n_features))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("label",) + tuple(names))
        for label, row in zip(ds.y, ds.X):
            w.writerow([repr(float(label))] + [repr(float(v)) for v in row])
    side = {"provenance": ds.provenance,
            "train": None if ds.train is None else ds.train.tolist(),
            "test": None if ds.test is None else ds.test.tolist()}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=2))
    return path


def subsample(ds: Dataset, n: int, seed: int = 0) -> Dataset:
    """Keep ``n`` rows chosen by a seeded draw, balanced across the two labels."""
    if n >= ds.n_samples:
        return ds
    rng = np.random.default_rng(seed)
    keep = []
    labels = np.unique(ds.y)
    for i, lab in enumerate(labels):
        idx = np.flatnonzero(ds.y == lab)
        quota = n // len(labels) + (1 if i < n % len(labels) else 0)
        keep.append(rng.choice(idx, size=min(quota, len(idx)), replace=False))
    keep = np.sort(np.concatenate(keep))
    return ds._with({"op": "subsample", "n": n, "seed": seed}, X=ds.X[keep], y=ds.y[keep])


def prepare_classification(name: str, *, path=None, classes=(1, 2), components: int = 4,
                           seed: int = 0, upper: float = 1.0, max_samples: int | None = None) -> Dataset:
    """Load, optionally subsample, split 80/20, reduce to ``components`` features when wider, and min-max scale."""
    if name == "mnist-csv":
        if path is None or not Path(path).exists():
            raise FileNotFoundError(f"MNIST CSV not found at {path!r}; expected schema: {MNIST_SCHEMA}")
        ds = load_csv(path, "label", classes)
    else:
        ds = load_csv(path, "label", classes) if path else load_fixture(name, classes)
    if max_samples is not None:
        ds = subsample(ds, max_samples, seed)
    ds = split(ds, 0.8, seed)
    if ds.n_features > components:
        ds = pca(ds, components)
    return minmax_scale(ds, upper)
