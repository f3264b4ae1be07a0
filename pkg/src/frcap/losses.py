"""Losses and their derivatives with respect to the network output.

All functions accept a single output vector ``f`` of length K with a scalar
label, or a batch ``F`` of shape ``(n, K)`` with ``n`` labels; batched calls
return one value (or one gradient row) per example.

Kink conventions: the hinge subgradient is 0 at ``y f = 1`` and the
absolute-loss subgradient is 0 at ``f = y``.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

__all__ = ["LossKind", "softmax", "log_softmax", "loss_value",
           "loss_output_grad", "mean_loss"]


class LossKind(str, Enum):
    ABSOLUTE = "absolute"
    SQUARED = "squared"
    HINGE = "hinge"
    CROSS_ENTROPY = "cross_entropy"

    @classmethod
    def parse(cls, kind) -> "LossKind":
        return kind if isinstance(kind, cls) else cls(str(kind))


def softmax(z, axis=-1):
    """Softmax with a max-shift; safe for large inputs."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    s = z - z.max(axis=axis, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def _prepare(kind, f, y):
    kind = LossKind.parse(kind)
    f = np.asarray(f, dtype=np.float64)
    single = f.ndim == 1
    F = np.atleast_2d(f)
    Y = np.atleast_1d(np.asarray(y))
    if kind is LossKind.CROSS_ENTROPY:
        K = F.shape[1]
        if K < 2:
            raise ValueError("cross-entropy needs K >= 2 outputs")
        labels = Y.astype(np.int64)
        if labels.shape != (F.shape[0],) or np.any(labels != Y):
            raise ValueError("cross-entropy labels must be one integer per example")
        if np.any((labels < 0) | (labels >= K)):
            raise ValueError(f"class labels must lie in [0, {K})")
        Y = labels
    elif kind in (LossKind.HINGE, LossKind.ABSOLUTE):
        if F.shape[1] != 1:
            raise ValueError(f"{kind.value} loss needs a single output unit")
        Y = Y.astype(np.float64).reshape(F.shape[0], 1)
        if kind is LossKind.HINGE and np.any(np.abs(Y) != 1):
            raise ValueError("hinge labels must be -1 or +1")
    else:
        Y = Y.astype(np.float64).reshape(F.shape)
    return kind, F, Y, single


def loss_value(kind, f, y):
    """Pointwise loss; squared loss carries the factor 1/2."""
    kind, F, Y, single = _prepare(kind, f, y)
    if kind is LossKind.ABSOLUTE:
        out = np.abs(F - Y)[:, 0]
    elif kind is LossKind.SQUARED:
        out = 0.5 * np.sum((F - Y) ** 2, axis=1)
    elif kind is LossKind.HINGE:
        out = np.maximum(0.0, 1.0 - Y * F)[:, 0]
    else:
        out = -log_softmax(F)[np.arange(F.shape[0]), Y]
    return float(out[0]) if single else out


def loss_output_grad(kind, f, y):
    """Derivative of the loss with respect to the output vector."""
    kind, F, Y, single = _prepare(kind, f, y)
    if kind is LossKind.ABSOLUTE:
        G = np.sign(F - Y)
    elif kind is LossKind.SQUARED:
        G = F - Y
    elif kind is LossKind.HINGE:
        G = np.where(Y * F < 1.0, -Y, 0.0)
    else:
        G = softmax(F)
        G[np.arange(F.shape[0]), Y] -= 1.0
    return G[0] if single else G


def mean_loss(kind, F, Y) -> float:
    return float(np.mean(loss_value(kind, np.atleast_2d(F), Y)))
