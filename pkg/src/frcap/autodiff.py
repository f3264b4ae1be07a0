"""Reverse-mode gradients for :class:`~frcap.network.Network`.

Besides plain backpropagation this module exposes per-example gradients
(dense or matrix-free), the output-Jacobian contraction
``sum_ij dO^{s+1}_l / dW^t_ij * W^t_ij`` for every ``t <= s``, and
finite-difference helpers used as independent oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import loss_output_grad, loss_value
from .network import Network, ForwardTrace, flatten, forward, predict, unflatten

__all__ = [
    "GradientSet",
    "backprop",
    "PerSampleGradients",
    "per_sample_grads",
    "loss_gradient",
    "output_jacobian_contraction",
    "directional_second_derivative",
    "loss_directional_second_derivative",
    "numerical_gradient",
    "relative_error",
    "near_kink",
    "loss_fd_gradient",
]


@dataclass
class GradientSet:
    """One gradient matrix per weight matrix."""

    layers: list

    def flatten(self) -> np.ndarray:
        return np.concatenate([G.ravel(order="F") for G in self.layers])

    def dot(self, net: Network) -> float:
        return float(sum(np.sum(G * W) for G, W in zip(self.layers, net.weights)))


def _deltas(net: Network, trace: ForwardTrace, out_grad: np.ndarray) -> list:
    """``dloss/dN^{t+1}`` for t = 0..L, batched over rows."""
    L = net.depth
    deltas = [None] * (L + 1)
    delta = out_grad * trace.masks[L]
    deltas[L] = delta
    for t in range(L, 0, -1):
        delta = (delta @ net.weights[t].T) * trace.masks[t - 1]
        deltas[t - 1] = delta
    return deltas


def backprop(net: Network, x, loss_grad, trace: ForwardTrace | None = None) -> GradientSet:
    """Gradient of the loss with respect to every ``W^t``.

    ``loss_grad`` is ``dloss/df``.  For a batch (2-D ``x`` and ``loss_grad``)
    the result is the gradient of the batch-mean loss.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(loss_grad, dtype=np.float64)
    if trace is None:
        trace = forward(net, x)
    if g.shape != trace.output.shape:
        raise ValueError(f"loss gradient shape {g.shape} does not match output "
                         f"shape {trace.output.shape}")
    single = x.ndim == 1
    X2 = np.atleast_2d(x)
    deltas = _deltas(net, trace, np.atleast_2d(g))
    n = X2.shape[0]
    layers = []
    for t in range(net.depth + 1):
        O = np.atleast_2d(trace.layer_output(t))
        layers.append(O.T @ deltas[t] if single else (O.T @ deltas[t]) / n)
    return GradientSet(layers)


class PerSampleGradients:
    """Per-example loss gradients kept in factored form.

    The gradient of example ``i`` with respect to ``W^t`` is the outer
    product ``O^t_i (x) delta^{t+1}_i``; products with directions and
    weighted sums are formed from the factors, so the ``n x d`` matrix is
    only built on request (:meth:`dense`).
    """

    def __init__(self, net: Network, X, G, trace: ForwardTrace | None = None):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] == 0:
            raise ValueError("empty batch")
        self.net = net
        self.trace = trace if trace is not None else forward(net, X)
        self.acts = [np.atleast_2d(self.trace.layer_output(t))
                     for t in range(net.depth + 1)]
        self.deltas = _deltas(net, self.trace, np.atleast_2d(G))
        self.n = X.shape[0]

    def dot(self, direction) -> np.ndarray:
        """``<g_i, v>`` for every example; ``direction`` is a list of matrices."""
        out = np.zeros(self.n)
        for A, D, V in zip(self.acts, self.deltas, direction):
            out += np.einsum("ij,ij->i", A @ V, D)
        return out

    def weighted_sum(self, c) -> list:
        """``sum_i c_i g_i`` as a list of matrices."""
        c = np.asarray(c, dtype=np.float64)
        return [A.T @ (D * c[:, None]) for A, D in zip(self.acts, self.deltas)]

    def mean(self) -> list:
        return self.weighted_sum(np.full(self.n, 1.0 / self.n))

    def dense(self, rows=None) -> np.ndarray:
        """Flattened gradients, one row per example (column-major per layer)."""
        idx = np.arange(self.n) if rows is None else np.asarray(rows)
        blocks = []
        for A, D in zip(self.acts, self.deltas):
            # (n, k_t, k_{t+1}) -> column-major flatten == row-major of transpose
            outer = np.einsum("ni,nj->nji", A[idx], D[idx])
            blocks.append(outer.reshape(len(idx), -1))
        return np.hstack(blocks)


def per_sample_grads(net: Network, X, Y, loss) -> np.ndarray:
    """Dense ``(n, d)`` matrix of per-example loss gradients."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    trace = forward(net, X)
    G = loss_output_grad(loss, trace.output, Y)
    return PerSampleGradients(net, X, G, trace).dense()


def loss_gradient(net: Network, X, Y, loss) -> GradientSet:
    """Gradient of the mean loss over a batch."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    trace = forward(net, X)
    G = loss_output_grad(loss, trace.output, Y)
    return backprop(net, X, np.atleast_2d(G), trace)


def output_jacobian_contraction(net: Network, x):
    """Contract each output Jacobian block with its own weights.

    Returns ``(per_pair, total)`` where ``per_pair[(t, s)]`` is the vector
    over units ``l`` of ``sum_ij dO^{s+1}_l/dW^t_ij * W^t_ij`` for
    ``0 <= t <= s <= L``, and ``total`` is ``sum_t`` of the same with
    ``s = L``.  For rectified networks these equal ``O^{s+1}`` and
    ``(L+1) f(x)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("output_jacobian_contraction takes a single input")
    trace = forward(net, x)
    L = net.depth
    per_pair = {}
    for s in range(L + 1):
        k = net.weights[s].shape[1]
        # one reverse sweep from O^{s+1}, seeded with every unit at once
        delta = np.eye(k) * trace.masks[s][None, :]
        for t in range(s, -1, -1):
            O = trace.layer_output(t)
            # sum_ij O_i delta_lj W_ij  for each seed row l
            per_pair[(t, s)] = delta @ (O @ net.weights[t])
            if t > 0:
                delta = (delta @ net.weights[t].T) * trace.masks[t - 1][None, :]
    total = sum(per_pair[(t, L)] for t in range(L + 1))
    return per_pair, total


def directional_second_derivative(net: Network, x, h: float = 1e-3) -> np.ndarray:
    """Central second difference of ``r -> f_{(1+r) theta}(x)`` at 0."""
    if not h > 0:
        raise ValueError("step must be positive")
    f0 = predict(net, x)
    fp = predict(net.scaled(1.0 + h), x)
    fm = predict(net.scaled(1.0 - h), x)
    return (fp - 2.0 * f0 + fm) / h ** 2


def loss_directional_second_derivative(net: Network, X, Y, loss, h: float = 1e-3) -> np.ndarray:
    """Per-example ``<theta, Hess_theta loss theta>`` by central differences."""
    vals = [loss_value(loss, np.atleast_2d(predict(net.scaled(1.0 + e), X)), Y)
            for e in (h, 0.0, -h)]
    return (vals[0] - 2.0 * vals[1] + vals[2]) / h ** 2


def numerical_gradient(fun, theta, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a vector."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (fun(theta + e) - fun(theta - e)) / (2.0 * h)
    return g


def loss_fd_gradient(net: Network, X, Y, loss, h: float = 1e-5) -> np.ndarray:
    """Finite-difference gradient of the mean loss in flattened order."""
    X2 = np.atleast_2d(np.asarray(X, dtype=np.float64))

    def fun(theta):
        F = predict(unflatten(net, theta), X2)
        return float(np.mean(loss_value(loss, F, Y)))

    return numerical_gradient(fun, flatten(net), h)


def relative_error(a, b) -> float:
    """Normwise relative error ``||a - b||_inf / ||b||_inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.max(np.abs(b)) if b.size else 0.0
    diff = np.max(np.abs(a - b)) if a.size else 0.0
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)


def near_kink(net: Network, X, margin: float = 1e-6) -> bool:
    """True if any hidden pre-activation of a non-linear layer is within
    ``margin`` of 0."""
    trace = forward(net, X)
    for N, act in zip(trace.pre, net.activations):
        if act.slope != 1.0 and np.any(np.abs(N) < margin):
            return True
    return False
