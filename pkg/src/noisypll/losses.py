"""Training objectives over the probability simplex.

Every loss here is a function of the softmax output ``f`` (shape ``(n, C)``)
and a target array of the same shape.  For the partial-label loss the target
holds per-label confidence weights supported on the candidate set; for the
noise-robust losses it holds a one-hot label.  Each loss exposes its per-sample
value and the derivative with respect to ``f``; the model chains the latter
through the softmax Jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# log(0) replacement used by the reverse cross-entropy term.
RCE_LOG_ZERO = -4.0
LOG_CLIP = 1e-12

LAMBDA_C_GRID = (0.1, 1.0, 6.0)
LAMBDA_R_GRID = (0.1, 1.0)
LAMBDA_G_GRID = (0.5, 0.6, 0.7)

KINDS = ("pll", "mae", "mse", "sce", "gce")


def _2d(a):
    a = np.asarray(a, dtype=float)
    return a[None, :] if a.ndim == 1 else a


def _unwrap(values, was_1d):
    return float(values[0]) if was_1d else values


def pll_reweighted_loss(f, candidates, weights):
    """Confidence-weighted negative log-likelihood over the candidate set.

    Returns ``-sum_{j in S} w_j log f_j`` per sample.
    """
    was_1d = np.ndim(f) == 1
    f, S, w = _2d(f), _2d(candidates).astype(bool), _2d(weights)
    w = np.where(S, w, 0.0)
    out = -(w * np.log(np.maximum(f, LOG_CLIP))).sum(axis=1)
    return _unwrap(out, was_1d)


def update_pll_weights(f, candidates):
    """Next-step confidences: the model output renormalised over ``S``."""
    f = np.asarray(f, dtype=float)
    S = np.asarray(candidates, dtype=bool)
    w = np.where(S, f, 0.0)
    total = w.sum(axis=-1, keepdims=True)
    uniform = S / np.maximum(S.sum(axis=-1, keepdims=True), 1)
    # all-zero rows (underflow) fall back to uniform weights over S
    return np.where(total > 0, w / np.where(total > 0, total, 1.0), uniform)


def uniform_weights(candidates):
    S = np.asarray(candidates, dtype=float)
    return S / S.sum(axis=-1, keepdims=True)


def mae_loss(f, y_onehot):
    was_1d = np.ndim(f) == 1
    f, y = _2d(f), _2d(y_onehot)
    return _unwrap(np.abs(y - f).sum(axis=1), was_1d)


def mse_loss(f, y_onehot):
    was_1d = np.ndim(f) == 1
    f, y = _2d(f), _2d(y_onehot)
    return _unwrap(((y - f) ** 2).sum(axis=1), was_1d)


def sce_loss(f, y_onehot, lambda_c=1.0, lambda_r=1.0):
    was_1d = np.ndim(f) == 1
    f, y = _2d(f), _2d(y_onehot)
    cce = -(y * np.log(np.maximum(f, LOG_CLIP))).sum(axis=1)
    log_y = np.where(y > 0, np.log(np.maximum(y, LOG_CLIP)), RCE_LOG_ZERO)
    rce = -(f * log_y).sum(axis=1)
    return _unwrap(lambda_c * cce + lambda_r * rce, was_1d)


def gce_loss(f, y_onehot, lambda_g=0.7):
    was_1d = np.ndim(f) == 1
    f, y = _2d(f), _2d(y_onehot)
    fy = np.maximum((f * y).sum(axis=1), LOG_CLIP)
    return _unwrap((1.0 - fy**lambda_g) / lambda_g, was_1d)


@dataclass(frozen=True)
class Loss:
    """A selected objective with its hyper-parameters.

    ``kind`` is one of ``pll``, ``mae``, ``mse``, ``sce``, ``gce``.
    """

    kind: str = "pll"
    lambda_c: float = 1.0
    lambda_r: float = 1.0
    lambda_g: float = 0.7

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "gce" and not 0 < self.lambda_g <= 1:
            raise ValueError("lambda_g must lie in (0, 1]")
        if self.kind == "sce" and (self.lambda_c < 0 or self.lambda_r < 0):
            raise ValueError("SCE weights must be non-negative")

    @property
    def uses_candidate_weights(self):
        return self.kind == "pll"

    def value(self, f, target):
        """Per-sample loss values, shape ``(n,)``."""
        f, t = _2d(f), _2d(target)
        if self.kind == "pll":
            return pll_reweighted_loss(f, t > 0, t)
        if self.kind == "mae":
            return mae_loss(f, t)
        if self.kind == "mse":
            return mse_loss(f, t)
        if self.kind == "sce":
            return sce_loss(f, t, self.lambda_c, self.lambda_r)
        return gce_loss(f, t, self.lambda_g)

    def grad_probs(self, f, target):
        """Derivative of each per-sample loss with respect to ``f``."""
        f, t = _2d(f), _2d(target)
        if self.kind == "pll":
            return -t / np.maximum(f, LOG_CLIP)
        if self.kind == "mae":
            # d|y - f|/df = sign(f - y); f is strictly inside the simplex
            return np.sign(f - t)
        if self.kind == "mse":
            return 2.0 * (f - t)
        if self.kind == "sce":
            log_y = np.where(t > 0, np.log(np.maximum(t, LOG_CLIP)), RCE_LOG_ZERO)
            return -self.lambda_c * t / np.maximum(f, LOG_CLIP) - self.lambda_r * log_y
        fy = np.maximum((f * t).sum(axis=1, keepdims=True), LOG_CLIP)
        return -t * fy ** (self.lambda_g - 1.0)

    def targets(self, f, candidates, weights):
        """Build the target array the loss expects for a batch.

        The PLL loss trains on the running confidence weights.  The robust
        losses train on the one-hot of the top candidate under the current
        model.
        """
        if self.kind == "pll":
            return weights
        S = np.asarray(candidates, dtype=bool)
        masked = np.where(S, f, -np.inf)
        onehot = np.zeros_like(f)
        onehot[np.arange(len(f)), masked.argmax(axis=1)] = 1.0
        return onehot
