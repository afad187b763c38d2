"""Experiment commands: config schemas, seeded fan-out, CSV/JSON artifacts and run records.

Every command takes a validated config dict, a root seed and an output
directory, writes its artifacts there and returns a :class:`RunRecord` whose
``passed`` flag aggregates the command's assertions.
"""

from __future__ import annotations

import copy
import csv
import functools
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import tensorcore as tc
from .analysis import (MAX_PATH_EXPONENT, cardinality_bounds, coefficients_direct, concentration_study,
                       enumerate_frequencies, extract_coefficients_dft, project)
from .circuit import (CircuitSpec, Rotation, TrainableBlock, build_product_embedding,
                      build_reuploading_circuit, build_zz_classifier, random_circuit)
from .data import (TargetFunction, prepare_classification, projection_residual, target_grid)
from .dqc1 import (DQC1Evaluator, ModelConfig, QNNEvaluator, grad_commuting, grad_fd, grad_insertion,
                   pauli_z_string)
from .learn import OptimizerConfig, TrainConfig, train_classifier, train_regression

log = logging.getLogger(__name__)

COMMANDS = ("gradcheck", "fit", "compare-qnn", "classify", "spectrum", "concentration", "optsweep")

# ---------------------------------------------------------------------------
# schemas
# ---------------------------------------------------------------------------

_ANSATZ = {"enum": ["ansatz1", "ansatz2"]}
_TARGET = {"enum": ["g1", "g2", "g3"]}
_POS_INT = {"type": "integer", "minimum": 1}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_OPTIMIZER = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["gd", "nesterov", "adam", "spsa"]},
        "lr": _POS_NUM,
        "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "eps": _POS_NUM,
        "spsa_a": _POS_NUM,
        "spsa_c": _POS_NUM,
        "spsa_A": {"type": ["number", "null"], "minimum": 0},
        "spsa_alpha": _POS_NUM,
        "spsa_gamma": _POS_NUM,
    },
    "required": ["kind"],
    "additionalProperties": False,
}


def _schema(props: dict, defaults: dict) -> dict:
    for k, v in defaults.items():
        props[k] = dict(props[k], default=v)
    return {"$schema": "https://json-schema.org/draft/2020-12/schema", "type": "object",
            "properties": props, "additionalProperties": False}


SCHEMAS = {
    "gradcheck": _schema(
        {"n": {"type": "integer", "minimum": 1, "maximum": 4}, "L": _POS_INT, "circuits": _POS_INT,
         "ansatz": {"enum": ["random", "ansatz1", "ansatz2"]}, "alpha": {"type": "number", "exclusiveMinimum": 0,
                                                                         "maximum": 1},
         "h": _POS_NUM, "tolerance": _POS_NUM, "commuting_circuits": {"type": "integer", "minimum": 0},
         "commuting_tolerance": _POS_NUM},
        {"n": 3, "L": 2, "circuits": 20, "ansatz": "random", "alpha": 1.0, "h": 1e-5, "tolerance": 1e-6,
         "commuting_circuits": 5, "commuting_tolerance": 1e-12}),
    "fit": _schema(
        {"target": _TARGET, "n": _POS_INT, "L": _POS_INT, "ansatz": _ANSATZ, "seeds": _POS_INT,
         "iterations": _POS_INT, "batch_size": _POS_INT, "lr": _POS_NUM, "mse_threshold": _POS_NUM,
         "residual_fraction": _POS_NUM},
        {"target": "g3", "n": 4, "L": 2, "ansatz": "ansatz1", "seeds": 5, "iterations": 200, "batch_size": 25,
         "lr": 0.15, "mse_threshold": 5e-3, "residual_fraction": 0.9}),
    "compare-qnn": _schema(
        {"targets": {"type": "array", "items": _TARGET, "minItems": 1},
         "ansatze": {"type": "array", "items": _ANSATZ, "minItems": 1},
         "seeds": _POS_INT, "n": _POS_INT, "dqc1_L": _POS_INT, "qnn_L": _POS_INT, "iterations": _POS_INT,
         "batch_size": _POS_INT, "lr": _POS_NUM, "mse_threshold": _POS_NUM,
         "assert_targets": {"type": "array", "items": _TARGET}},
        {"targets": ["g1", "g2", "g3"], "ansatze": ["ansatz1", "ansatz2"], "seeds": 5, "n": 4, "dqc1_L": 2,
         "qnn_L": 1, "iterations": 200, "batch_size": 25, "lr": 0.15, "mse_threshold": 1e-2,
         "assert_targets": ["g1", "g2"]}),
    "classify": _schema(
        {"dataset": {"enum": ["iris", "wine", "mnist-csv"]}, "path": {"type": ["string", "null"]},
         "classes": {"type": ["array", "null"], "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
         "max_samples": {"type": ["integer", "null"], "minimum": 5},
         "components": _POS_INT, "scale_upper": _POS_NUM, "zz_reps": _POS_INT,
         "pairs": {"enum": ["nearest", "all"]}, "ansatz": _ANSATZ, "dqc1_embeddings": _POS_INT,
         "qnn_embeddings": _POS_INT, "lr": {"type": ["number", "null"], "exclusiveMinimum": 0},
         "epochs": {"type": ["integer", "null"], "minimum": 1}, "batch_size": _POS_INT, "seeds": _POS_INT,
         "thresholds": {"type": ["object", "null"], "additionalProperties": {"type": "number"},
                        "propertyNames": {"enum": ["dqc1_test", "dqc1_train", "qnn_test", "qnn_train"]}}},
        {"dataset": "iris", "path": None, "classes": None, "max_samples": None, "components": 4,
         "scale_upper": 1.0, "zz_reps": 2, "pairs": "nearest", "ansatz": "ansatz1", "dqc1_embeddings": 2,
         "qnn_embeddings": 1, "lr": None, "epochs": None, "batch_size": 25, "seeds": 5, "thresholds": None}),
    "spectrum": _schema(
        {"n": _POS_INT, "L": _POS_INT, "ansatz": _ANSATZ, "axis": {"enum": ["X", "Y", "Z"]},
         "features": {"enum": ["shared", "generic"]}, "draws": _POS_INT,
         "trailing": {"type": "boolean"}},
        {"n": 2, "L": 3, "ansatz": "ansatz1", "axis": "X", "features": "shared", "draws": 10, "trailing": True}),
    "concentration": _schema(
        {"n_range": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 8}, "minItems": 1},
         "samples": {"type": "integer", "minimum": 500},
         "scaled_variance_band": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
         "band_from_n": {"type": "integer", "minimum": 1},
         "ratio_band": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}},
        {"n_range": [2, 3, 4, 5, 6, 7], "samples": 2000, "scaled_variance_band": [0.4, 0.6], "band_from_n": 3,
         "ratio_band": [3.0, 5.5]}),
    "optsweep": _schema(
        {"target": _TARGET, "n": _POS_INT, "L": _POS_INT,
         "ansatze": {"type": "array", "items": _ANSATZ, "minItems": 1}, "seeds": _POS_INT,
         "iterations": _POS_INT, "batch_size": _POS_INT,
         "optimizers": {"type": "array", "items": _OPTIMIZER, "minItems": 1},
         "lr_grid": {"type": "array", "items": _POS_NUM},
         "expected_best_lrs": {"type": "array", "items": _POS_NUM}},
        {"target": "g3", "n": 4, "L": 2, "ansatze": ["ansatz1", "ansatz2"], "seeds": 5, "iterations": 200,
         "batch_size": 25,
         "optimizers": [{"kind": "gd", "lr": 0.01}, {"kind": "spsa"}, {"kind": "nesterov", "lr": 0.01},
                        {"kind": "adam", "lr": 0.01}],
         "lr_grid": [0.001, 0.005, 0.01, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5],
         "expected_best_lrs": [0.01, 0.15]}),
}

# per-dataset recipe used when the config leaves a field null
CLASSIFY_RECIPES = {
    "iris": {"classes": [1, 2], "lr": 0.09, "epochs": 40, "max_samples": None,
             "thresholds": {"dqc1_test": 0.95, "qnn_test": 0.95}},
    "wine": {"classes": [1, 2], "lr": 0.004, "epochs": 110, "max_samples": None,
             "thresholds": {"dqc1_test": 0.90, "qnn_train": 0.90}},
    "mnist-csv": {"classes": [0, 1], "lr": 0.005, "epochs": 70, "max_samples": 400,
                  "thresholds": {"dqc1_test": 0.95, "qnn_test": 0.95}},
}


def default_config(command: str) -> dict:
    return {k: copy.deepcopy(v["default"]) for k, v in SCHEMAS[command]["properties"].items()}


def resolve_config(command: str, overrides: dict | None = None) -> dict:
    """Defaults overlaid with ``overrides``, validated against the command's schema."""
    if command not in SCHEMAS:
        raise ValueError(f"unknown command {command!r}; expected one of {COMMANDS}")
    overrides = dict(overrides or {})
    overrides.pop("command", None)
    jsonschema.validate(overrides, SCHEMAS[command])
    cfg = default_config(command)
    cfg.update(overrides)
    if command == "classify":
        recipe = CLASSIFY_RECIPES[cfg["dataset"]]
        for k, v in recipe.items():
            if cfg.get(k) is None:
                cfg[k] = copy.deepcopy(v)
    if command == "concentration" and any(n < 1 or n > 8 for n in cfg["n_range"]):
        raise ValueError("n_range must lie within [1, 8]")
    return cfg


def config_hash(command: str, cfg: dict, seed: int) -> str:
    blob = json.dumps({"command": command, "config": cfg, "seed": seed}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# records and artifacts
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    command: str
    config: dict
    seed: int
    config_hash: str
    metrics: dict = field(default_factory=dict)
    assertions: list[dict] = field(default_factory=list)
    artifacts: dict[str, str] = field(default_factory=dict)
    wall_clock_s: float = 0.0
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)

    def check(self, name: str, ok: bool, detail: str = "") -> bool:
        self.assertions.append({"name": name, "passed": bool(ok), "detail": detail})
        return bool(ok)

    def to_json(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    @classmethod
    def from_json(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d.pop("passed", None)
        return cls(**d)


def _sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def write_csv(rec: RunRecord, out: Path, name: str, header, rows) -> Path:
    buf = io.StringIO()
    buf.write(f"# config-hash: {rec.config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    data = buf.getvalue().encode()
    path = out / name
    path.write_bytes(data)
    rec.artifacts[name] = _sha256_bytes(data)
    return path


def write_json(rec: RunRecord, out: Path, name: str, obj) -> Path:
    data = (json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n").encode()
    path = out / name
    path.write_bytes(data)
    rec.artifacts[name] = _sha256_bytes(data)
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# ---------------------------------------------------------------------------
# seeded fan-out
# ---------------------------------------------------------------------------


def derive_seed(seed: int, *keys: int) -> int:
    """Integer seed of the child stream ``(seed, *keys)``."""
    return int(np.random.SeedSequence(seed, spawn_key=tuple(keys)).generate_state(1)[0])


def worker_count(n_tasks: int) -> int:
    cap = os.environ.get("DQC1LAB_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_tasks))


def fan_out(fn, tasks: list) -> list:
    """``[fn(t) for t in tasks]``, in a process pool when more than one worker is allowed.

    Results come back in task order, so the reduction is deterministic.
    """
    workers = worker_count(len(tasks))
    if workers == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _mean_std(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std())


# ---------------------------------------------------------------------------
# model factories (cached per process; tasks carry only plain data)
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=32)
def regression_evaluator(kind: str, n: int, L: int, ansatz: str):
    if kind == "dqc1":
        return DQC1Evaluator(ModelConfig(n, build_reuploading_circuit(n, L, ansatz)))
    return QNNEvaluator(build_reuploading_circuit(n, L, ansatz), pauli_z_string(n))


@functools.lru_cache(maxsize=8)
def classifier_evaluator(kind: str, n: int, embeddings: int, reps: int, pairs: str, ansatz: str):
    spec = build_zz_classifier(n, embeddings, reps, pairs, ansatz)
    if kind == "dqc1":
        return DQC1Evaluator(ModelConfig(n, spec))
    return QNNEvaluator(spec, pauli_z_string(n))


def _regression_task(task: dict) -> dict:
    ev = regression_evaluator(task["kind"], task["n"], task["L"], task["ansatz"])
    x, y = target_grid(task["target"])
    res = train_regression(ev, x, y, OptimizerConfig(**task["optimizer"]),
                           TrainConfig(task["iterations"], task["batch_size"], seed=task["seed"]))
    return {"final_mse": res.final_mse, "history": res.history.tolist(), "predictions": res.predictions.tolist()}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def commuting_circuit(n: int, L: int, rng: np.random.Generator) -> CircuitSpec:
    """Re-uploading circuit whose trainable blocks contain only mutually commuting Z-type rotations."""
    layers, slot = [], 0
    for ell in range(L + 1):
        ops = []
        for _ in range(int(rng.integers(2, 4))):
            letters = "".join(rng.choice(["I", "Z"], size=n))
            if set(letters) == {"I"}:
                letters = "Z" + letters[1:]
            ops.append(Rotation(slot, ((float(rng.uniform(0.3, 1.2)), letters),)))
            slot += 1
        layers.append(TrainableBlock(n, tuple(ops), "commuting"))
        if ell < L:
            layers.append(build_product_embedding(n, "X", tuple(range(n))))
    return CircuitSpec(n, tuple(layers))


def cmd_gradcheck(cfg: dict, seed: int, rec: RunRecord, out: Path):
    rows, worst = [], 0.0
    for i in range(cfg["circuits"]):
        rng = tc.child_rng(seed, i)
        ansatz = None if cfg["ansatz"] == "random" else cfg["ansatz"]
        spec = random_circuit(cfg["n"], cfg["L"], rng, ansatz=ansatz)
        model = ModelConfig(cfg["n"], spec, cfg["alpha"])
        x = rng.uniform(-np.pi, np.pi, max(spec.d, 1))
        theta = rng.uniform(0, 2 * np.pi, spec.p)
        for k in range(spec.p):
            a = grad_insertion(model, x, theta, k)
            f = grad_fd(model, x, theta, k, h=cfg["h"])
            err = abs(a - f)
            worst = max(worst, err)
            rows.append(("insertion", i, k, a.real, a.imag, f.real, f.imag, err))
    comm_worst = 0.0
    for i in range(cfg["commuting_circuits"]):
        rng = tc.child_rng(seed, 10_000 + i)
        spec = commuting_circuit(cfg["n"], cfg["L"], rng)
        model = ModelConfig(cfg["n"], spec, cfg["alpha"])
        x = rng.uniform(-np.pi, np.pi, spec.d)
        theta = rng.uniform(0, 2 * np.pi, spec.p)
        for k in range(spec.p):
            a = grad_insertion(model, x, theta, k)
            c = grad_commuting(model, x, theta, k)
            err = abs(a - c)
            comm_worst = max(comm_worst, err)
            rows.append(("commuting", i, k, c.real, c.imag, a.real, a.imag, err))
    write_csv(rec, out, "gradcheck.csv",
              ("path", "circuit", "slot", "analytic_re", "analytic_im", "reference_re", "reference_im", "abs_error"),
              rows)
    rec.metrics.update({"max_abs_error": worst, "max_commuting_error": comm_worst, "n_checked": len(rows)})
    rec.check("analytic vs finite difference", worst <= cfg["tolerance"], f"max error {worst:.3e}")
    if cfg["commuting_circuits"]:
        rec.check("commuting-block path vs insertion", comm_worst <= cfg["commuting_tolerance"],
                  f"max error {comm_worst:.3e}")


def cmd_fit(cfg: dict, seed: int, rec: RunRecord, out: Path):
    n, L = cfg["n"], cfg["L"]
    opt = {"kind": "adam", "lr": cfg["lr"]}
    tasks = [{"kind": "dqc1", "n": n, "L": L, "ansatz": cfg["ansatz"], "target": cfg["target"],
              "optimizer": opt, "iterations": cfg["iterations"], "batch_size": cfg["batch_size"],
              "seed": derive_seed(seed, r)} for r in range(cfg["seeds"])]
    results = fan_out(_regression_task, tasks)
    finals = [r["final_mse"] for r in results]
    best = int(np.argmin(finals))
    x, y = target_grid(cfg["target"])
    write_csv(rec, out, "fit.csv", ("x", "target", "prediction"), zip(x, y, results[best]["predictions"]))
    write_csv(rec, out, "mse_trace.csv", ("seed_index", "iteration", "mse"),
              ((r, it, v) for r, res in enumerate(results) for it, v in enumerate(res["history"])))
    n_freq = n * L + 1
    K = TargetFunction(cfg["target"]).K
    residual = projection_residual(x, y, n * L / 2)
    rec.metrics.update({"n_frequencies": n_freq, "final_mse": finals, "best_mse": finals[best],
                        "best_seed_index": best, "projection_residual": residual})
    if n * L / 2 >= K:
        rec.check("expressive model fits the target", finals[best] <= cfg["mse_threshold"],
                  f"best MSE {finals[best]:.3e} vs {cfg['mse_threshold']}")
    else:
        bound = cfg["residual_fraction"] * residual
        rec.check("under-expressive model bounded by the projection residual", finals[best] >= bound,
                  f"best MSE {finals[best]:.3e} vs {bound:.3e}")


def cmd_compare_qnn(cfg: dict, seed: int, rec: RunRecord, out: Path):
    cells = [(model, tgt, ans) for ans in cfg["ansatze"] for tgt in cfg["targets"] for model in ("dqc1", "qnn")]
    tasks = []
    for ci, (model, tgt, ans) in enumerate(cells):
        L = cfg["dqc1_L"] if model == "dqc1" else cfg["qnn_L"]
        for r in range(cfg["seeds"]):
            tasks.append({"kind": model, "n": cfg["n"], "L": L, "ansatz": ans, "target": tgt,
                          "optimizer": {"kind": "adam", "lr": cfg["lr"]}, "iterations": cfg["iterations"],
                          "batch_size": cfg["batch_size"], "seed": derive_seed(seed, r)})
    results = fan_out(_regression_task, tasks)
    rows, table = [], []
    for ci, (model, tgt, ans) in enumerate(cells):
        finals = [res["final_mse"] for res in results[ci * cfg["seeds"]:(ci + 1) * cfg["seeds"]]]
        mean, std = _mean_std(finals)
        rows.append((model, tgt, ans, mean, std, " ".join(repr(v) for v in finals)))
        table.append({"model": model, "target": tgt, "ansatz": ans, "mean": mean, "std": std, "values": finals})
        if tgt in cfg["assert_targets"]:
            rec.check(f"{model} {ans} {tgt} mean MSE", mean <= cfg["mse_threshold"],
                      f"{mean:.3e} +- {std:.1e}")
    write_csv(rec, out, "compare_qnn.csv", ("model", "target", "ansatz", "mean_mse", "std_mse", "values"), rows)
    rec.metrics["cells"] = table


def _classify_task(task: dict) -> dict:
    ds = prepare_classification(task["dataset"], path=task["path"], classes=task["classes"],
                                components=task["components"], seed=task["seed"], upper=task["scale_upper"],
                                max_samples=task["max_samples"])
    ev = classifier_evaluator(task["kind"], ds.n_features, task["embeddings"], task["zz_reps"], task["pairs"],
                              task["ansatz"])
    res = train_classifier(ev, ds.X_train, ds.y_train, ds.X_test, ds.y_test,
                           OptimizerConfig("adam", lr=task["lr"]),
                           TrainConfig(task["epochs"], task["batch_size"], seed=task["seed"]))
    return {"loss": res.loss, "train": res.train_accuracy, "test": res.test_accuracy,
            "n_train": len(ds.y_train), "n_test": len(ds.y_test)}


def cmd_classify(cfg: dict, seed: int, rec: RunRecord, out: Path):
    models = ("dqc1", "qnn")
    tasks = []
    for model in models:
        for r in range(cfg["seeds"]):
            tasks.append({"kind": model, "dataset": cfg["dataset"], "path": cfg["path"], "classes": cfg["classes"],
                          "components": cfg["components"], "scale_upper": cfg["scale_upper"],
                          "max_samples": cfg["max_samples"], "zz_reps": cfg["zz_reps"], "pairs": cfg["pairs"],
                          "ansatz": cfg["ansatz"], "lr": cfg["lr"], "epochs": cfg["epochs"],
                          "batch_size": cfg["batch_size"],
                          "embeddings": cfg[f"{model}_embeddings"], "seed": derive_seed(seed, r)})
    results = fan_out(_classify_task, tasks)
    rows, summary = [], {}
    for i, task in enumerate(tasks):
        res = results[i]
        r = i % cfg["seeds"]
        for ep, (lv, a_tr, a_te) in enumerate(zip(res["loss"], res["train"], res["test"])):
            rows.append((task["kind"], r, ep, lv, a_tr, a_te))
    for model in models:
        block = [results[i] for i, t in enumerate(tasks) if t["kind"] == model]
        tr = _mean_std([b["train"][-1] for b in block])
        te = _mean_std([b["test"][-1] for b in block])
        summary[model] = {"train_mean": tr[0], "train_std": tr[1], "test_mean": te[0], "test_std": te[1],
                          "n_train": block[0]["n_train"], "n_test": block[0]["n_test"]}
    write_csv(rec, out, "accuracy.csv", ("model", "seed_index", "epoch", "loss", "train_accuracy", "test_accuracy"),
              rows)
    rec.metrics["summary"] = summary
    for key, thr in sorted(cfg["thresholds"].items()):
        model, split_name = key.split("_")
        value = summary[model][f"{split_name}_mean"]
        rec.check(f"{model} mean final {split_name} accuracy", value >= thr, f"{value:.3f} vs {thr}")


def _spectrum_circuit(cfg: dict) -> CircuitSpec:
    n, L = cfg["n"], cfg["L"]
    slots = None if cfg["features"] == "shared" else [tuple(range(ell * n, (ell + 1) * n)) for ell in range(L)]
    return build_reuploading_circuit(n, L, cfg["ansatz"], cfg["axis"], slots, cfg["trailing"])


def cmd_spectrum(cfg: dict, seed: int, rec: RunRecord, out: Path):
    n, L = cfg["n"], cfg["L"]
    spec = _spectrum_circuit(cfg)
    model = ModelConfig(n, spec)
    freqs = sorted(enumerate_frequencies(spec))
    bound = cardinality_bounds(n, L, "dqc1")
    expected = n * L + 1 if cfg["features"] == "shared" else 2 ** (n * L)
    report = {"n": n, "L": L, "features": cfg["features"], "n_frequencies": len(freqs), "bound": bound,
              "frequencies": [[str(c) for c in w.coeffs] for w in freqs], "draws": []}
    rec.check("|Omega| within the 2^(nL) bound", len(freqs) <= bound, f"{len(freqs)} <= {bound}")
    rec.check(f"|Omega| equals {'nL+1' if cfg['features'] == 'shared' else '2^(nL)'}", len(freqs) == expected,
              f"{len(freqs)} vs {expected}")
    subset_ok, direct_err = True, 0.0
    for i in range(cfg["draws"]):
        rng = tc.child_rng(seed, i)
        theta = rng.uniform(0, 2 * np.pi, spec.p)
        x0 = rng.uniform(-np.pi, np.pi, spec.d)
        feature = int(rng.integers(0, spec.d))
        dft = extract_coefficients_dft(model, theta, feature, x0)
        allowed = {w.halves[feature] for w in freqs}
        support = sorted(w.halves[0] for w in dft.support())
        ok = set(support) <= allowed
        subset_ok &= ok
        draw = {"feature": feature, "support": [h / 2 for h in support],
                "coefficients": dft.to_json()["coefficients"], "subset": ok}
        if n * L <= MAX_PATH_EXPONENT:
            proj = project(coefficients_direct(model, theta), feature, x0)
            by_half = {w.halves[0]: c for w, c in dft.coefficients.items()}
            err = max(abs(proj.get(h, 0) - by_half.get(h, 0)) for h in set(proj) | set(by_half))
            draw["direct_max_error"] = err
            direct_err = max(direct_err, err)
        report["draws"].append(draw)
    rec.check("DFT support within the enumerated spectrum", subset_ok)
    if n * L <= MAX_PATH_EXPONENT:
        rec.check("path-sum coefficients match the DFT", direct_err <= 1e-9, f"max error {direct_err:.3e}")
    write_json(rec, out, "spectrum.json", report)
    rec.metrics.update({"n_frequencies": len(freqs), "bound": bound, "direct_max_error": direct_err})


def cmd_concentration(cfg: dict, seed: int, rec: RunRecord, out: Path):
    reports = concentration_study(cfg["n_range"], cfg["samples"], seed)
    rows = [r.row() for r in reports]
    header = list(rows[0])
    write_csv(rec, out, "concentration.csv", header, ([r[h] for h in header] for r in rows))
    write_json(rec, out, "concentration.json", [{**r.row(), "bounds": r.bounds} for r in reports])
    lo, hi = cfg["scaled_variance_band"]
    for r in reports:
        if r.n >= cfg["band_from_n"]:
            rec.check(f"4^n Var[Re f] at n={r.n}", lo <= r.scaled_var_re <= hi, f"{r.scaled_var_re:.3f}")
    rlo, rhi = cfg["ratio_band"]
    for a, b in zip(reports, reports[1:]):
        if b.n == a.n + 1 and a.n >= cfg["band_from_n"]:
            ratio = a.var_re / b.var_re
            rec.check(f"variance ratio n={a.n}->{b.n}", rlo <= ratio <= rhi, f"{ratio:.2f}")
    violations = sum(row["hoeffding_violations"] + row["chebyshev_violations"] for row in rows)
    rec.check("empirical deviation rates within the bounds", violations == 0, f"{violations} violations")
    rec.metrics["rows"] = rows


def cmd_optsweep(cfg: dict, seed: int, rec: RunRecord, out: Path):
    cells = []
    for ans in cfg["ansatze"]:
        for opt in cfg["optimizers"]:
            cells.append(("optimizer", ans, opt))
        for lr in cfg["lr_grid"]:
            cells.append(("adam_lr", ans, {"kind": "adam", "lr": lr}))
    tasks = [{"kind": "dqc1", "n": cfg["n"], "L": cfg["L"], "ansatz": ans, "target": cfg["target"],
              "optimizer": opt, "iterations": cfg["iterations"], "batch_size": cfg["batch_size"],
              "seed": derive_seed(seed, r)}
             for _, ans, opt in cells for r in range(cfg["seeds"])]
    results = fan_out(_regression_task, tasks)
    rows, table = [], []
    S = cfg["seeds"]
    for ci, (section, ans, opt) in enumerate(cells):
        finals = [res["final_mse"] for res in results[ci * S:(ci + 1) * S]]
        mean, std = _mean_std(finals)
        lr = OptimizerConfig(**opt).lr if opt["kind"] != "spsa" else None
        rows.append((section, ans, opt["kind"], "" if lr is None else lr, mean, std))
        table.append({"section": section, "ansatz": ans, "optimizer": opt, "mean": mean, "std": std,
                      "values": finals})
    write_csv(rec, out, "optsweep.csv", ("section", "ansatz", "optimizer", "lr", "mean_mse", "std_mse"), rows)
    rec.metrics["cells"] = table
    for ans in cfg["ansatze"]:
        opts = [t for t in table if t["section"] == "optimizer" and t["ansatz"] == ans]
        adam = [t for t in opts if t["optimizer"]["kind"] == "adam"]
        if adam:
            best = min(opts, key=lambda t: t["mean"])
            rec.check(f"{ans}: Adam has the lowest mean MSE", adam[0]["mean"] <= best["mean"],
                      f"best {best['optimizer']['kind']} {best['mean']:.3e}")
        sweep = [t for t in table if t["section"] == "adam_lr" and t["ansatz"] == ans]
        if sweep and cfg["expected_best_lrs"]:
            best = min(sweep, key=lambda t: t["mean"])
            rec.metrics.setdefault("best_lr", {})[ans] = best["optimizer"]["lr"]
            rec.check(f"{ans}: best Adam learning rate in {cfg['expected_best_lrs']}",
                      any(np.isclose(best["optimizer"]["lr"], v) for v in cfg["expected_best_lrs"]),
                      f"argmin lr {best['optimizer']['lr']} (mean {best['mean']:.3e})")


RUNNERS = {"gradcheck": cmd_gradcheck, "fit": cmd_fit, "compare-qnn": cmd_compare_qnn, "classify": cmd_classify,
           "spectrum": cmd_spectrum, "concentration": cmd_concentration, "optsweep": cmd_optsweep}


def run(command: str, config: dict | None = None, seed: int = 0, out_dir=None) -> RunRecord:
    """Validate, execute and record one command; writes ``record.json`` into ``out_dir``."""
    cfg = resolve_config(command, config)
    h = config_hash(command, cfg, seed)
    out = Path(out_dir) if out_dir is not None else Path("runs") / f"{command}-{h}"
    out.mkdir(parents=True, exist_ok=True)
    rec = RunRecord(command, cfg, seed, h)
    t0 = time.perf_counter()
    RUNNERS[command](cfg, seed, rec, out)
    rec.wall_clock_s = time.perf_counter() - t0
    (out / "record.json").write_text(json.dumps(rec.to_json(), indent=2, sort_keys=True, default=_json_default))
    return rec


def replay(record_path, out_dir) -> tuple[RunRecord, list[str]]:
    """Re-run a recorded command and list the artifacts whose hashes differ."""
    old = RunRecord.from_json(json.loads(Path(record_path).read_text()))
    new = run(old.command, old.config, old.seed, out_dir)
    diffs = sorted(k for k in set(old.artifacts) | set(new.artifacts)
                   if old.artifacts.get(k) != new.artifacts.get(k))
    return new, diffs
