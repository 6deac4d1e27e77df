"""Desk-scale data-parallel SGD under fragment drops.

Each step, every worker computes a minibatch gradient; the gradient is
fragmented as it would be on the wire, each fragment is dropped
independently with probability p, the survivors are recovered per the
configured mode, and the worker average is applied. Tracking the squared
error of the applied average against the lossless average quantifies what
each recovery mode buys.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..simkernel import RngStream, _derive_seed
from . import coding


class DropMode(Enum):
    ZERO_FILL = "ZERO_FILL"
    HADAMARD = "HADAMARD"
    XOR = "XOR"


@dataclass
class TrainConfig:
    workers: int = 4
    drop_fraction: float = 0.0
    mode: DropMode = DropMode.ZERO_FILL
    epochs: int = 10
    model: str = "logreg"  # logreg | mlp
    dataset: str = "blobs"  # blobs | digits (digits needs scikit-learn)
    seed: int = 0
    batch_per_worker: int = 64
    lr: float = 0.1
    hidden: int = 32
    fragment_elems: int = 16
    xor_group: int = 4
    train_samples: int = 3000
    test_samples: int = 1000
    features: int = 20
    classes: int = 3
    cluster_std: float = 4.0

    def validate(self) -> None:
        if not (0.0 <= self.drop_fraction <= 0.5):
            raise ValueError("drop_fraction must lie in [0, 0.5]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.model not in ("logreg", "mlp"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.dataset not in ("blobs", "digits"):
            raise ValueError(f"unknown dataset {self.dataset!r}")


@dataclass
class TrainResult:
    mode: DropMode
    drop_fraction: float
    epoch_accuracy: list[float]
    final_accuracy: float
    grad_mse: list[float] = field(default_factory=list)
    steps: int = 0

    @property
    def grad_mse_mean(self) -> float:
        return float(np.mean(self.grad_mse)) if self.grad_mse else 0.0


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def make_blobs(seed: int, n_train: int, n_test: int, features: int, classes: int,
               cluster_std: float):
    rng = RngStream(seed, "dataset").gen
    centers = rng.uniform(-5.0, 5.0, size=(classes, features))
    n = n_train + n_test
    y = rng.integers(0, classes, size=n)
    x = centers[y] + rng.normal(0.0, cluster_std, size=(n, features))
    return (x[:n_train], y[:n_train]), (x[n_train:], y[n_train:])


def load_dataset(cfg: TrainConfig):
    if cfg.dataset == "blobs":
        return make_blobs(cfg.seed, cfg.train_samples, cfg.test_samples,
                          cfg.features, cfg.classes, cfg.cluster_std)
    try:
        from sklearn.datasets import load_digits
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise RuntimeError(
            "dataset 'digits' requires scikit-learn; use dataset 'blobs'"
        ) from exc
    digits = load_digits()
    x = digits.data / 16.0
    y = digits.target
    split = len(x) * 4 // 5
    return (x[:split], y[:split]), (x[split:], y[split:])


# ---------------------------------------------------------------------------
# models (flat-parameter numpy implementations)
# ---------------------------------------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class SoftmaxRegression:
    def __init__(self, features: int, classes: int, rng: np.random.Generator):
        self.f = features
        self.c = classes
        self.dim = features * classes + classes
        self.init = np.zeros(self.dim)

    def grad(self, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        w = params[: self.f * self.c].reshape(self.f, self.c)
        b = params[self.f * self.c:]
        p = _softmax(x @ w + b)
        p[np.arange(len(y)), y] -= 1.0
        p /= len(y)
        return np.concatenate([(x.T @ p).ravel(), p.sum(axis=0)])

    def predict(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        w = params[: self.f * self.c].reshape(self.f, self.c)
        b = params[self.f * self.c:]
        return np.argmax(x @ w + b, axis=1)


class TwoLayerMlp:
    def __init__(self, features: int, classes: int, hidden: int, rng: np.random.Generator):
        self.f = features
        self.c = classes
        self.h = hidden
        self._s1 = features * hidden
        self._s2 = self._s1 + hidden
        self._s3 = self._s2 + hidden * classes
        self.dim = self._s3 + classes
        init = np.zeros(self.dim)
        init[: self._s1] = rng.normal(0.0, 1.0 / np.sqrt(features), self._s1)
        init[self._s2: self._s3] = rng.normal(0.0, 1.0 / np.sqrt(hidden), hidden * classes)
        self.init = init

    def _unpack(self, params: np.ndarray):
        w1 = params[: self._s1].reshape(self.f, self.h)
        b1 = params[self._s1: self._s2]
        w2 = params[self._s2: self._s3].reshape(self.h, self.c)
        b2 = params[self._s3:]
        return w1, b1, w2, b2

    def grad(self, params: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        w1, b1, w2, b2 = self._unpack(params)
        hidden = np.tanh(x @ w1 + b1)
        p = _softmax(hidden @ w2 + b2)
        p[np.arange(len(y)), y] -= 1.0
        p /= len(y)
        g_w2 = hidden.T @ p
        g_b2 = p.sum(axis=0)
        dh = (p @ w2.T) * (1.0 - hidden * hidden)
        g_w1 = x.T @ dh
        g_b1 = dh.sum(axis=0)
        return np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])

    def predict(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        w1, b1, w2, b2 = self._unpack(params)
        return np.argmax(np.tanh(x @ w1 + b1) @ w2 + b2, axis=1)


def build_model(cfg: TrainConfig, features: int, classes: int):
    rng = RngStream(cfg.seed, "model-init").gen
    if cfg.model == "logreg":
        return SoftmaxRegression(features, classes, rng)
    return TwoLayerMlp(features, classes, cfg.hidden, rng)


# ---------------------------------------------------------------------------
# drop + recovery paths
# ---------------------------------------------------------------------------

def _apply_drops(grad: np.ndarray, cfg: TrainConfig, drop_rng: np.random.Generator,
                 sign_seed: int) -> np.ndarray:
    """One worker's gradient through fragmentation, loss and recovery."""
    d = grad.size
    n = coding.next_pow2(d)
    fs = cfg.fragment_elems
    if n % fs:
        raise ValueError(f"fragment_elems {fs} must divide padded length {n}")
    count = n // fs
    p = cfg.drop_fraction
    if cfg.mode is DropMode.HADAMARD:
        payload = coding.encode(grad, sign_seed, fs)
        mask = drop_rng.random(count) >= p
        return coding.decode(payload, mask).values

    padded = np.zeros(n)
    padded[:d] = grad
    if cfg.mode is DropMode.ZERO_FILL:
        mask = drop_rng.random(count) >= p
        padded *= np.repeat(mask, fs)
        return padded[:d]

    # XOR: parity per group over the raw fragments, drops hit data and parity
    # fragments alike; single losses recover exactly, the rest zero-fill.
    frags = [padded[i * fs:(i + 1) * fs].tobytes() for i in range(count)]
    parities = coding.xor_encode(frags, cfg.xor_group)
    width = fs * 8
    data_mask = drop_rng.random(count) >= p
    parity_mask = drop_rng.random(len(parities)) >= p
    lossy = [f if keep else None for f, keep in zip(frags, data_mask)]
    lossy_par = [f if keep else None for f, keep in zip(parities, parity_mask)]
    restored, _ = coding.xor_recover(lossy, lossy_par, cfg.xor_group, width)
    flat = np.concatenate([np.frombuffer(f, dtype=np.float64) for f in restored])
    return flat[:d]


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def train_with_drops(cfg: TrainConfig) -> TrainResult:
    """Run the harness and return per-epoch test accuracy plus gradient MSE."""
    cfg.validate()
    (x_train, y_train), (x_test, y_test) = load_dataset(cfg)
    features = x_train.shape[1]
    classes = int(y_train.max()) + 1
    model = build_model(cfg, features, classes)
    params = model.init.copy()
    shuffle_rng = RngStream(cfg.seed, "shuffle").gen
    drop_rng = RngStream(cfg.seed, "drops").gen

    w = cfg.workers
    group = w * cfg.batch_per_worker
    steps_per_epoch = len(x_train) // group
    result = TrainResult(mode=cfg.mode, drop_fraction=cfg.drop_fraction,
                         epoch_accuracy=[], final_accuracy=0.0)
    step = 0
    for _epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(x_train))
        for s in range(steps_per_epoch):
            batch = order[s * group:(s + 1) * group]
            grads = []
            for wi in range(w):
                idx = batch[wi * cfg.batch_per_worker:(wi + 1) * cfg.batch_per_worker]
                grads.append(model.grad(params, x_train[idx], y_train[idx]))
            lossless = np.mean(grads, axis=0)
            if cfg.drop_fraction > 0.0:
                recovered = [
                    _apply_drops(g, cfg, drop_rng,
                                 _derive_seed(cfg.seed, f"signs:{step}:{wi}"))
                    for wi, g in enumerate(grads)
                ]
                applied = np.mean(recovered, axis=0)
            else:
                applied = lossless
            err = applied - lossless
            result.grad_mse.append(float(err @ err / err.size))
            params -= cfg.lr * applied
            step += 1
        acc = float(np.mean(model.predict(params, x_test) == y_test))
        result.epoch_accuracy.append(acc)
    result.final_accuracy = result.epoch_accuracy[-1] if result.epoch_accuracy else 0.0
    result.steps = step
    return result
