"""Feed-forward softmax classifier with hand-written backpropagation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .losses import Loss


class NumericalError(ArithmeticError):
    """Raised when a loss or gradient turns non-finite."""

    def __init__(self, message, sample_index=None, epoch=None):
        super().__init__(message)
        self.sample_index = sample_index
        self.epoch = epoch


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Classifier:
    layer_sizes: list
    weights: list
    biases: list
    seed: int = 0

    @classmethod
    def init(cls, layer_sizes, seed=0):
        """Uniform init in +-1/sqrt(fan_in), reproducible from ``seed``."""
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {layer_sizes}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(sizes, weights, biases, seed)

    @classmethod
    def zeros(cls, layer_sizes):
        sizes = [int(s) for s in layer_sizes]
        return cls(
            sizes,
            [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
            [np.zeros(b) for b in sizes[1:]],
        )

    @property
    def num_classes(self):
        return self.layer_sizes[-1]

    @property
    def num_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self):
        return Classifier(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.seed,
        )

    def _check_input(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.layer_sizes[0]:
            raise ValueError(
                f"input dimension {X.shape[-1]} does not match layer_sizes[0]={self.layer_sizes[0]}"
            )
        return X

    def _forward_cache(self, X):
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = softmax(z) if i == last else np.tanh(z)
            acts.append(h)
        return acts

    def predict_proba(self, X):
        X = self._check_input(X)
        single = X.ndim == 1
        probs = self._forward_cache(np.atleast_2d(X))[-1]
        return probs[0] if single else probs

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=-1)

    def flat_params(self):
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.extend([W.ravel(), b])
        return np.concatenate(parts)

    def set_flat_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.num_params:
            raise ValueError(f"expected {self.num_params} parameters, got {theta.size}")
        pos = 0
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = theta[pos : pos + W.size].reshape(W.shape).copy()
            pos += W.size
            self.biases[i] = theta[pos : pos + b.size].copy()
            pos += b.size


def forward(clf, x):
    """Class probabilities for one feature vector (or a batch)."""
    return clf.predict_proba(x)


def backward(clf, X, target, loss: Loss):
    """Mean batch loss and its exact gradients.

    Returns ``(loss_value, grads)`` where ``grads`` is a list of ``(dW, db)``
    pairs aligned with ``clf.weights``.
    """
    X = clf._check_input(np.atleast_2d(X))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    acts = clf._forward_cache(X)
    f = acts[-1]
    per_sample = loss.value(f, target)
    bad = ~np.isfinite(per_sample)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"non-finite loss at batch sample {idx}", sample_index=idx)
    n = len(X)
    g = loss.grad_probs(f, target) / n
    # softmax Jacobian-vector product
    delta = f * (g - (g * f).sum(axis=1, keepdims=True))
    grads = [None] * len(clf.weights)
    for i in range(len(clf.weights) - 1, -1, -1):
        h_in = acts[i]
        grads[i] = (h_in.T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ clf.weights[i].T) * (1.0 - acts[i] ** 2)
    return float(per_sample.mean()), grads


def flatten_grads(grads):
    return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in grads])


@dataclass
class OptimizerConfig:
    initial_lr: float = 0.01
    momentum: float = 0.9
    max_epochs: int = 300
    batch_size: int = 64

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be positive")

    def iterations_per_epoch(self, n):
        return math.ceil(n / self.batch_size)


def cosine_lr(epoch, cfg: OptimizerConfig):
    """Cosine decay from ``initial_lr`` at epoch 0 to 0 at ``max_epochs``."""
    return 0.5 * cfg.initial_lr * (1.0 + math.cos(math.pi * epoch / cfg.max_epochs))


@dataclass
class SGD:
    cfg: OptimizerConfig
    velocity: list = field(default_factory=list)

    def step(self, clf, grads, epoch):
        """In-place momentum SGD update at the learning rate of ``epoch``."""
        if epoch >= self.cfg.max_epochs:
            raise ValueError(f"epoch {epoch} is past max_epochs={self.cfg.max_epochs}")
        if not self.velocity:
            self.velocity = [(np.zeros_like(W), np.zeros_like(b)) for W, b in zip(clf.weights, clf.biases)]
        lr = cosine_lr(epoch, self.cfg)
        mu = self.cfg.momentum
        for i, (dW, db) in enumerate(grads):
            if not (np.all(np.isfinite(dW)) and np.all(np.isfinite(db))):
                raise NumericalError(f"non-finite gradient in layer {i}", epoch=epoch)
            vW, vb = self.velocity[i]
            vW = mu * vW + dW
            vb = mu * vb + db
            self.velocity[i] = (vW, vb)
            clf.weights[i] = clf.weights[i] - lr * vW
            clf.biases[i] = clf.biases[i] - lr * vb
        return clf


def sgd_step(clf, grads, epoch, cfg: OptimizerConfig, optimizer=None):
    """Functional wrapper; pass the same ``optimizer`` across calls to keep momentum."""
    optimizer = optimizer or SGD(cfg)
    return optimizer.step(clf, grads, epoch)


# Checkpoint layout: ASCII header lines "key=value", terminated by a line
# "END", followed by the flat parameter block as little-endian float64 in
# (W0 row-major, b0, W1, b1, ...) order.
CHECKPOINT_MAGIC = "noisypll-checkpoint v1"


def checkpoint_bytes(clf, epoch=0):
    header = "\n".join(
        [
            CHECKPOINT_MAGIC,
            "layer_sizes=" + ",".join(str(s) for s in clf.layer_sizes),
            f"seed={clf.seed}",
            f"epoch={epoch}",
            "activation=tanh",
            "END",
            "",
        ]
    ).encode("ascii")
    return header + clf.flat_params().astype("<f8").tobytes()


def save_checkpoint(clf, path, epoch=0):
    payload = checkpoint_bytes(clf, epoch)
    with open(path, "wb") as fh:
        fh.write(payload)
    return payload


def load_checkpoint(path_or_bytes):
    """Returns ``(classifier, epoch)``."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        data = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as fh:
            data = fh.read()
    marker = b"\nEND\n"
    cut = data.index(marker)
    lines = data[:cut].decode("ascii").split("\n")
    if lines[0] != CHECKPOINT_MAGIC:
        raise ValueError("not a noisypll checkpoint")
    meta = dict(line.split("=", 1) for line in lines[1:])
    sizes = [int(s) for s in meta["layer_sizes"].split(",")]
    clf = Classifier.zeros(sizes)
    clf.seed = int(meta["seed"])
    clf.set_flat_params(np.frombuffer(data[cut + len(marker) :], dtype="<f8"))
    return clf, int(meta["epoch"])
