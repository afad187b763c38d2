"""Losses, first-order optimizers and training loops."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

OPTIMIZERS = ("gd", "nesterov", "adam", "spsa")
LOSSES = ("mse-half", "hinge-sign")


def mse_loss(predictions, labels) -> float:
    """``sum (y - yhat)^2 / (2N)``."""
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"length mismatch: {p.shape} predictions vs {y.shape} labels")
    if len(y) == 0:
        raise ValueError("need at least one sample")
    return float(np.sum((y - p) ** 2) / (2 * len(y)))


def mse_grad(predictions, labels, pred_grads) -> np.ndarray:
    """Gradient of :func:`mse_loss` given ``d prediction / d theta`` with shape ``(N, p)``."""
    r = np.asarray(predictions) - np.asarray(labels)
    return r @ pred_grads / len(r)


def hinge_loss(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ValueError("length mismatch")
    return float(np.mean(np.maximum(0.0, 1 - y * p)))


def hinge_grad(predictions, labels, pred_grads) -> np.ndarray:
    p, y = np.asarray(predictions), np.asarray(labels)
    active = (1 - y * p) > 0
    return -(y * active) @ pred_grads / len(y)


LOSS_FNS = {"mse-half": (mse_loss, mse_grad), "hinge-sign": (hinge_loss, hinge_grad)}


def accuracy(predictions, labels) -> float:
    """Fraction of samples with ``sign(prediction) == label`` (0 counts as +1)."""
    pred = np.where(np.asarray(predictions) >= 0, 1.0, -1.0)
    return float(np.mean(pred == np.asarray(labels)))


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters for one optimizer kind; unused fields are ignored.

    ``spsa_A=None`` means one tenth of the iteration budget.
    """

    kind: str = "adam"
    lr: float = 0.01
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    spsa_a: float = 0.2
    spsa_c: float = 0.2
    spsa_A: float | None = None
    spsa_alpha: float = 0.602
    spsa_gamma: float = 0.101

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.kind!r}; expected one of {OPTIMIZERS}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.spsa_c > 0:
            raise ValueError("SPSA perturbation size must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    batch_size: int = 25
    seed: int = 0
    loss: str = "mse-half"
    eval_cadence: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.eval_cadence < 1:
            raise ValueError("eval_cadence must be >= 1")


class Optimizer:
    """Stateful update rule. ``step`` takes the current parameters and either a
    gradient callback or, for SPSA, a loss callback."""

    def __init__(self, cfg: OptimizerConfig, n_params: int, iterations: int, rng: np.random.Generator):
        self.cfg = cfg
        self.t = 0
        self.rng = rng
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.A = iterations / 10 if cfg.spsa_A is None else cfg.spsa_A

    def step(self, theta: np.ndarray, grad_fn=None, loss_fn=None) -> np.ndarray:
        c = self.cfg
        self.t += 1
        if c.kind == "gd":
            return theta - c.lr * grad_fn(theta)
        if c.kind == "nesterov":
            # gradient at the look-ahead point
            self.m = c.momentum * self.m + c.lr * grad_fn(theta - c.momentum * self.m)
            return theta - self.m
        if c.kind == "adam":
            g = grad_fn(theta)
            self.m = c.beta1 * self.m + (1 - c.beta1) * g
            self.v = c.beta2 * self.v + (1 - c.beta2) * g * g
            m_hat = self.m / (1 - c.beta1**self.t)
            v_hat = self.v / (1 - c.beta2**self.t)
            return theta - c.lr * m_hat / (np.sqrt(v_hat) + c.eps)
        k = self.t - 1
        a_k = c.spsa_a / (self.A + k + 1) ** c.spsa_alpha
        c_k = c.spsa_c / (k + 1) ** c.spsa_gamma
        delta = self.rng.choice([-1.0, 1.0], size=theta.shape)
        diff = loss_fn(theta + c_k * delta) - loss_fn(theta - c_k * delta)
        return theta - a_k * diff / (2 * c_k) * delta


class BatchScheduler:
    """Mini-batches of sample indices; the order is reshuffled once per epoch."""

    def __init__(self, n_samples: int, batch_size: int, rng: np.random.Generator):
        if batch_size > n_samples:
            raise ValueError(f"batch_size {batch_size} exceeds dataset size {n_samples}")
        self.n, self.size, self.rng = n_samples, batch_size, rng
        self.epoch = 0

    def epoch_batches(self) -> list[np.ndarray]:
        order = self.rng.permutation(self.n)
        self.epoch += 1
        return [order[i:i + self.size] for i in range(0, self.n, self.size)]

    def __iter__(self):
        while True:
            yield from self.epoch_batches()


def _check_finite(value: float, where: str) -> float:
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value!r} at {where}")
    return value


def optimize(loss_fn, grad_fn, theta0, opt: OptimizerConfig, train: TrainConfig, rng=None,
             n_samples: int | None = None):
    """Run ``train.iterations`` optimizer steps.

    ``loss_fn(theta, batch)`` and ``grad_fn(theta, batch)`` receive an index
    array (``None`` for the full objective). With ``n_samples`` set, steps use
    mini-batches; otherwise each step sees the full objective. The returned
    trace holds the full loss before the first step and after every
    ``eval_cadence``-th step.
    """
    rng = np.random.default_rng(train.seed) if rng is None else rng
    theta = np.array(theta0, dtype=float)
    if opt.kind != "spsa" and grad_fn is None:
        raise ValueError(f"optimizer {opt.kind!r} needs a gradient")
    stepper = Optimizer(opt, theta.size, train.iterations, rng)
    batches = iter(BatchScheduler(n_samples, train.batch_size, rng)) if n_samples else None
    trace = [_check_finite(loss_fn(theta, None), "iteration 0")]
    for it in range(1, train.iterations + 1):
        batch = next(batches) if batches is not None else None
        theta = stepper.step(
            theta,
            grad_fn=None if grad_fn is None else (lambda t: grad_fn(t, batch)),
            loss_fn=lambda t: loss_fn(t, batch),
        )
        if it % train.eval_cadence == 0 or it == train.iterations:
            trace.append(_check_finite(loss_fn(theta, None), f"iteration {it} ({opt.kind})"))
    return theta, np.array(trace)


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


def init_params(n_params: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0, 2 * np.pi, n_params)


@dataclass
class RegressionResult:
    theta: np.ndarray
    history: np.ndarray
    predictions: np.ndarray

    @property
    def final_mse(self) -> float:
        return float(self.history[-1])


def _objective(evaluator, X, y, loss: str):
    lf, gf = LOSS_FNS[loss]

    def loss_fn(theta, batch):
        sel = slice(None) if batch is None else batch
        return lf(evaluator.predict(X[sel], theta), y[sel])

    def grad_fn(theta, batch):
        sel = slice(None) if batch is None else batch
        p, g = evaluator.predict_and_grad(X[sel], theta)
        return gf(p, y[sel], g)

    return loss_fn, grad_fn


def train_regression(evaluator, X, y, opt: OptimizerConfig, train: TrainConfig, theta0=None) -> RegressionResult:
    """Fit ``evaluator.predict`` to ``y``; the history is the full-set loss per iteration.

    ``evaluator`` exposes ``n_params``, ``predict(X, theta)`` and
    ``predict_and_grad(X, theta)``.
    """
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(train.seed)
    theta0 = init_params(evaluator.n_params, rng) if theta0 is None else np.asarray(theta0, dtype=float)
    loss_fn, grad_fn = _objective(evaluator, X, y, train.loss)
    theta, hist = optimize(loss_fn, None if opt.kind == "spsa" else grad_fn, theta0, opt, train, rng,
                           n_samples=len(y))
    return RegressionResult(theta, hist, evaluator.predict(X, theta))


@dataclass
class ClassifierResult:
    theta: np.ndarray
    loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)


def train_classifier(evaluator, X_train, y_train, X_test, y_test, opt: OptimizerConfig, train: TrainConfig,
                     theta0=None) -> ClassifierResult:
    """Train on +-1 labels; ``train.iterations`` counts epochs.

    Accuracy is recorded before training (epoch 0) and after every epoch.
    """
    y_train = np.asarray(y_train, dtype=float)
    y_test = np.asarray(y_test, dtype=float)
    if not set(np.unique(np.concatenate([y_train, y_test]))) <= {-1.0, 1.0}:
        raise ValueError("classification labels must be -1 or +1")
    X_train = np.asarray(X_train, dtype=float)
    X_test = np.asarray(X_test, dtype=float)
    rng = np.random.default_rng(train.seed)
    theta = init_params(evaluator.n_params, rng) if theta0 is None else np.array(theta0, dtype=float)
    loss_fn, grad_fn = _objective(evaluator, X_train, y_train, train.loss)
    n_batches = math.ceil(len(y_train) / train.batch_size)
    stepper = Optimizer(opt, theta.size, train.iterations * n_batches, rng)
    sched = BatchScheduler(len(y_train), train.batch_size, rng)
    res = ClassifierResult(theta)

    def record(epoch):
        p_train = evaluator.predict(X_train, theta)
        res.loss.append(_check_finite(LOSS_FNS[train.loss][0](p_train, y_train), f"epoch {epoch}"))
        res.train_accuracy.append(accuracy(p_train, y_train))
        res.test_accuracy.append(accuracy(evaluator.predict(X_test, theta), y_test) if len(y_test) else float("nan"))

    record(0)
    for epoch in range(1, train.iterations + 1):
        for batch in sched.epoch_batches():
            theta = stepper.step(theta, grad_fn=lambda t: grad_fn(t, batch), loss_fn=lambda t: loss_fn(t, batch))
        if epoch % train.eval_cadence == 0 or epoch == train.iterations:
            record(epoch)
    res.theta = theta
    return res


def with_lr(opt: OptimizerConfig, lr: float) -> OptimizerConfig:
    return replace(opt, lr=lr)
