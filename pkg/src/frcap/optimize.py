"""Trainers, damped natural gradient, and stationarity checks.

All steps take a network and a batch ``(X, Y)`` and return a new network;
optimizer memory (momentum buffers, Adam moments, the current damping)
lives in an explicit :class:`OptimizerState`.  Weights marked ``frozen`` on
the network are never updated.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .autodiff import PerSampleGradients, loss_gradient
from .capacity import capacity_summary
from .losses import LossKind, loss_output_grad, mean_loss, softmax
from .network import Network, forward, predict

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "EpochRecord",
    "TrainHistory",
    "sgd_step",
    "momentum_step",
    "adam_step",
    "natural_gradient_direction",
    "natural_gradient_step",
    "step",
    "train",
    "gradient_norm",
    "MarginVerdict",
    "check_large_margin",
    "LinearStationarity",
    "check_linear_stationarity",
    "end_to_end_vector",
    "ReparametrizationGap",
    "reparametrization_gap",
    "ProjectionCheck",
    "overparametrization_projection",
]

OPTIMIZERS = ("sgd", "momentum", "adam", "natural")


@dataclass
class TrainConfig:
    optimizer: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    damping: float | None = None  # None: 1e-3 * trace(F) / d, per step
    ng_tol: float = 1e-10
    ng_max_iter: int = 200
    fisher: str = "empirical"  # or "model"
    batch_size: int | None = None  # None: full batch
    epochs: int = 100
    seed: int = 0
    loss: str = "squared"
    grad_tol: float = 1e-6
    stop_at_stationary: bool = False
    record_every: int = 1
    record_norms: bool = False
    lr_decay: float = 1.0
    lr_decay_every: int = 0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.damping is not None and self.damping < 0:
            raise ValueError("damping must be >= 0")
        if self.fisher not in ("empirical", "model"):
            raise ValueError("fisher must be 'empirical' or 'model'")
        LossKind.parse(self.loss)


@dataclass
class OptimizerState:
    velocity: list | None = None
    m: list | None = None
    v: list | None = None
    t: int = 0
    damping_used: float | None = None
    cg_fallbacks: int = 0


def _masked(net: Network, grads):
    if net.frozen is None:
        return grads
    return [np.where(f, 0.0, g) for g, f in zip(grads, net.frozen)]


def _apply(net: Network, updates, lr):
    return net.with_weights([W - lr * U for W, U in zip(net.weights, updates)])


def _grads(net, X, Y, loss):
    return _masked(net, loss_gradient(net, X, Y, loss).layers)


def _lr(config: TrainConfig, lr=None):
    return config.lr if lr is None else lr


def sgd_step(net: Network, X, Y, config: TrainConfig, state=None, lr=None) -> Network:
    return _apply(net, _grads(net, X, Y, config.loss), _lr(config, lr))


def momentum_step(net: Network, X, Y, config: TrainConfig, state: OptimizerState,
                  lr=None) -> Network:
    """Heavy-ball: ``v <- mu v + g``, ``W <- W - lr v``."""
    g = _grads(net, X, Y, config.loss)
    if state.velocity is None:
        state.velocity = [np.zeros_like(G) for G in g]
    state.velocity = [config.momentum * V + G for V, G in zip(state.velocity, g)]
    return _apply(net, state.velocity, _lr(config, lr))


def adam_step(net: Network, X, Y, config: TrainConfig, state: OptimizerState,
              lr=None) -> Network:
    g = _grads(net, X, Y, config.loss)
    if state.m is None:
        state.m = [np.zeros_like(G) for G in g]
        state.v = [np.zeros_like(G) for G in g]
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    state.m = [b1 * M + (1 - b1) * G for M, G in zip(state.m, g)]
    state.v = [b2 * V + (1 - b2) * G * G for V, G in zip(state.v, g)]
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    upd = [(M / c1) / (np.sqrt(V / c2) + config.adam_eps)
           for M, V in zip(state.m, state.v)]
    return _apply(net, _masked(net, upd), _lr(config, lr))


def natural_gradient_direction(fvp, grad, damping: float, tol: float = 1e-10,
                               max_iter: int = 200, max_retries: int = 6):
    """Solve ``(F + damping I) delta = grad`` by conjugate gradient.

    ``fvp`` maps a flat vector ``v`` to ``F v``; ``F`` is never formed.  On
    CG failure the damping is multiplied by 10 and the solve retried.
    Returns ``(delta, damping_used, fallbacks)``.
    """
    grad = np.asarray(grad, dtype=np.float64)
    d = grad.size
    if not damping > 0:
        raise ValueError("natural gradient needs positive damping")
    if not np.any(grad):
        return np.zeros(d), damping, 0
    lam = float(damping)
    for attempt in range(max_retries + 1):
        op = LinearOperator((d, d), matvec=lambda v, lam=lam: fvp(v) + lam * v,
                            dtype=np.float64)
        delta, info = cg(op, grad, rtol=tol, atol=0.0, maxiter=max_iter)
        if info == 0 and np.all(np.isfinite(delta)):
            return delta, lam, attempt
        log.warning("CG did not converge (info=%s) at damping %.3g; retrying "
                    "with damping x10", info, lam)
        lam *= 10.0
    return delta, lam, max_retries + 1


def _flat(layers):
    return np.concatenate([G.ravel(order="F") for G in layers])


def _unflat(net, v):
    out, s = [], 0
    for W in net.weights:
        out.append(v[s:s + W.size].reshape(W.shape, order="F"))
        s += W.size
    return out


def _fisher_labels(net, X, Y, config, rng):
    if config.fisher == "empirical":
        return Y
    loss = LossKind.parse(config.loss)
    F = predict(net, X)
    if loss is LossKind.CROSS_ENTROPY:
        P = softmax(F)
        u = rng.random(P.shape[0])
        return np.minimum((P.cumsum(axis=1) < u[:, None]).sum(axis=1), P.shape[1] - 1)
    if loss is LossKind.SQUARED:
        return F + rng.standard_normal(F.shape)
    raise ValueError("model Fisher is available for squared and cross-entropy losses")


def natural_gradient_step(net: Network, X, Y, config: TrainConfig,
                          state: OptimizerState | None = None, lr=None,
                          rng=None) -> Network:
    """One damped natural-gradient step ``theta <- theta - lr * delta``.

    ``delta`` solves ``(F + lam I) delta = grad`` where ``F`` is the Fisher
    ``mean_i g_i g_i^T`` of per-example gradients on the batch; the product
    ``F v = mean_i g_i <g_i, v>`` is formed from factored per-example
    gradients.
    """
    state = state if state is not None else OptimizerState()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    trace = forward(net, X)
    G_out = np.atleast_2d(loss_output_grad(config.loss, trace.output, Y))
    psg = PerSampleGradients(net, X, G_out, trace)
    grad = _flat(_masked(net, psg.mean()))

    if config.fisher == "empirical":
        fisher = psg
    else:
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        Ys = _fisher_labels(net, X, Y, config, rng)
        Gs = np.atleast_2d(loss_output_grad(config.loss, trace.output, Ys))
        fisher = PerSampleGradients(net, X, Gs, trace)

    def fvp(v):
        V = _masked(net, _unflat(net, v))
        c = fisher.dot(V)
        return _flat(_masked(net, fisher.weighted_sum(c / fisher.n)))

    if config.damping is None:
        # trace(F) = mean_i ||g_i||^2, from the factors
        tr = float(sum(np.sum(np.sum(A * A, axis=1) * np.sum(D * D, axis=1))
                       for A, D in zip(fisher.acts, fisher.deltas)) / fisher.n)
        lam = 1e-3 * tr / grad.size if tr > 0 else 1e-8
    else:
        lam = config.damping
    delta, lam_used, fallbacks = natural_gradient_direction(
        fvp, grad, lam, config.ng_tol, config.ng_max_iter)
    state.damping_used = lam_used
    state.cg_fallbacks += fallbacks
    return _apply(net, _masked(net, _unflat(net, delta)), _lr(config, lr))


_STEPS = {"sgd": sgd_step, "momentum": momentum_step, "adam": adam_step,
          "natural": natural_gradient_step}


def step(net, X, Y, config: TrainConfig, state: OptimizerState, lr=None):
    """Dispatch on ``config.optimizer``."""
    return _STEPS[config.optimizer](net, X, Y, config, state, lr=lr)


def gradient_norm(net: Network, X, Y, loss) -> float:
    """l_2 norm of the full-batch gradient over trainable entries."""
    return float(np.sqrt(sum(np.sum(G * G) for G in _grads(net, X, Y, loss))))


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    grad_norm: float
    norms: dict = field(default_factory=dict)
    wall_clock: float = 0.0


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    aborted: bool = False
    reason: str = ""
    stationary_epoch: int | None = None

    def rows(self, include_time: bool = False) -> list:
        out = []
        for r in self.records:
            row = {"epoch": r.epoch, "loss": r.loss, "grad_norm": r.grad_norm}
            row.update(r.norms)
            if include_time:
                row["wall_clock"] = r.wall_clock
            out.append(row)
        return out

    def summary(self) -> dict:
        last = self.records[-1] if self.records else None
        return {"epochs_recorded": len(self.records), "aborted": self.aborted,
                "reason": self.reason, "stationary_epoch": self.stationary_epoch,
                "final": None if last is None else
                {k: v for k, v in asdict(last).items() if k != "wall_clock"}}


def train(net: Network, X, Y, config: TrainConfig):
    """Run ``config.epochs`` epochs with seeded shuffling.

    Records loss and full-batch gradient norm every ``record_every`` epochs
    (plus the capacity norms when ``record_norms`` is set).  A non-finite
    loss aborts the run with ``history.aborted`` set.  With
    ``stop_at_stationary`` training halts once the gradient norm falls to
    ``grad_tol``.
    """
    # divergence is caught from the recorded loss; overflow on the way is expected
    with np.errstate(over="ignore", invalid="ignore"):
        return _train(net, X, Y, config)


def _train(net: Network, X, Y, config: TrainConfig):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y)
    n = X.shape[0]
    rng = np.random.default_rng(config.seed)
    state = OptimizerState()
    history = TrainHistory()
    bs = n if config.batch_size is None else min(int(config.batch_size), n)
    t0 = time.perf_counter()
    lr = config.lr

    def record(epoch):
        F = predict(net, X)
        loss = mean_loss(config.loss, F, Y)
        gn = gradient_norm(net, X, Y, config.loss)
        norms = capacity_summary(net, X, Y if LossKind.parse(config.loss)
                                 is LossKind.CROSS_ENTROPY else None) \
            if config.record_norms else {}
        history.records.append(EpochRecord(epoch, loss, gn, norms,
                                           time.perf_counter() - t0))
        return loss, gn

    loss0, gn = record(0)
    if not np.isfinite(loss0):
        history.aborted, history.reason = True, "non-finite loss at init"
        return net, history
    for epoch in range(1, config.epochs + 1):
        if config.stop_at_stationary and gn <= config.grad_tol:
            history.stationary_epoch = epoch - 1
            break
        if config.lr_decay_every and epoch > 1 and (epoch - 1) % config.lr_decay_every == 0:
            lr *= config.lr_decay
        order = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            net = step(net, X[idx], Y[idx], config, state, lr=lr)
        if epoch % config.record_every == 0 or epoch == config.epochs \
                or config.stop_at_stationary:
            loss, gn = record(epoch)
            if not np.isfinite(loss) or not np.isfinite(gn):
                history.aborted, history.reason = True, f"non-finite loss at epoch {epoch}"
                log.error("training diverged at epoch %d", epoch)
                break
    else:
        if config.stop_at_stationary and gn <= config.grad_tol:
            history.stationary_epoch = config.epochs
    return net, history


# ---------------------------------------------------------------- corollaries

@dataclass
class MarginVerdict:
    applicable: bool
    stationary: bool
    separating: bool
    holds: bool | None
    grad_norm: float
    min_margin: float
    margins: np.ndarray
    detail: str = ""


def check_large_margin(net: Network, X, y, eps_grad: float = 1e-6,
                       delta_margin: float = 1e-3) -> MarginVerdict:
    """Hinge-loss stationary points that separate the data have margin >= 1.

    The check applies when the gradient norm is at most ``eps_grad`` and
    every margin ``y_i f(x_i)`` is positive; it then holds if the smallest
    margin is at least ``1 - delta_margin``.  Margins are always reported.
    """
    if net.output_dim != 1:
        raise ValueError("large-margin check needs a single output unit")
    y = np.asarray(y, dtype=np.float64).ravel()
    margins = y * predict(net, X)[:, 0]
    gn = gradient_norm(net, X, y, LossKind.HINGE)
    stationary = gn <= eps_grad
    separating = bool(np.all(margins > 0))
    applicable = stationary and separating
    holds = bool(margins.min() >= 1.0 - delta_margin) if applicable else None
    if not separating:
        detail = "not applicable: the network does not separate the data"
    elif not stationary:
        detail = f"not applicable: gradient norm {gn:.3g} > {eps_grad:g}"
    else:
        detail = f"min margin {margins.min():.6g}"
    return MarginVerdict(applicable, stationary, separating, holds, gn,
                         float(margins.min()), margins, detail)


def end_to_end_vector(net: Network) -> np.ndarray:
    """``w(theta) = W^0 W^1 ... W^L`` (a column for single-output nets)."""
    w = net.weights[0]
    for W in net.weights[1:]:
        w = w @ W
    return w[:, 0] if w.shape[1] == 1 else w


@dataclass
class LinearStationarity:
    residual: float
    scale: float

    @property
    def relative(self) -> float:
        return abs(self.residual) / self.scale if self.scale > 0 else abs(self.residual)


def check_linear_stationarity(net: Network, X, Y) -> LinearStationarity:
    """``<w, X^T X w - X^T Y>`` for a deep linear network with scalar output.

    ``scale`` is ``||X^T X w - X^T Y|| * ||w||``.
    """
    if any(a.slope != 1.0 for a in net.activations):
        raise ValueError("stationarity identity is for linear activations")
    if net.output_dim != 1:
        raise ValueError("stationarity identity needs a single output unit")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64).ravel()
    w = end_to_end_vector(net)
    r = X.T @ (X @ w) - X.T @ Y
    return LinearStationarity(float(w @ r),
                              float(np.linalg.norm(r) * np.linalg.norm(w)))


# ---------------------------------------------------------------- invariance
#
# Small explicit models ``f_xi(x) = <xi, x>`` under squared loss, driven
# through a smooth map ``xi = phi(theta)``.  The Fisher in xi coordinates is
# either the model Fisher ``E[x x^T]`` (unit-variance Gaussian noise) or the
# empirical Fisher ``E[r^2 x x^T]``; in theta coordinates it is pulled back
# through the Jacobian, ``J^T F_xi J``.

def _xi_grad_fisher(X, y, xi, fisher: str):
    r = X @ xi - y
    grad = X.T @ r / X.shape[0]
    if fisher == "model":
        F = X.T @ X / X.shape[0]
    elif fisher == "empirical":
        F = (X * (r ** 2)[:, None]).T @ X / X.shape[0]
    else:
        raise ValueError("fisher must be 'model' or 'empirical'")
    return grad, F


def _dense_ng(F, g, damping, tol):
    if damping > 0:
        delta, _, _ = natural_gradient_direction(lambda v: F @ v, g, damping, tol,
                                                 max_iter=10 * g.size)
        return delta
    return np.linalg.solve(F, g)


@dataclass
class ReparametrizationGap:
    lr: float
    steps: int
    gaps: np.ndarray  # ||phi(theta_n) - xi_n|| after each step

    @property
    def final(self) -> float:
        return float(self.gaps[-1])


def reparametrization_gap(X, y, phi, jacobian, theta0, lr: float, horizon: float = 1.0,
                          damping: float = 0.0, fisher: str = "model",
                          tol: float = 1e-13) -> ReparametrizationGap:
    """Run natural gradient in theta and in xi = phi(theta) side by side.

    Both runs start at corresponding points and take ``round(horizon/lr)``
    steps, so they approximate the same stretch of the continuous flow.
    The flows agree exactly; the discrete gap is the Euler error and so
    shrinks with ``lr``.  For an affine ``phi`` with zero damping it is 0.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    theta = np.asarray(theta0, dtype=np.float64).copy()
    xi = np.asarray(phi(theta), dtype=np.float64).copy()
    steps = max(1, int(round(horizon / lr)))
    gaps = np.empty(steps)
    for n in range(steps):
        g_xi, F_xi = _xi_grad_fisher(X, y, xi, fisher)
        xi = xi - lr * _dense_ng(F_xi, g_xi, damping, tol)

        J = np.asarray(jacobian(theta), dtype=np.float64)
        g_at, F_at = _xi_grad_fisher(X, y, phi(theta), fisher)
        theta = theta - lr * _dense_ng(J.T @ F_at @ J, J.T @ g_at, damping, tol)
        gaps[n] = np.linalg.norm(phi(theta) - xi)
    return ReparametrizationGap(lr, steps, gaps)


def _sym_sqrt(F):
    w, V = np.linalg.eigh(F)
    if w.min() <= 0:
        raise ValueError("Fisher in the larger parametrization must be positive definite")
    return (V * np.sqrt(w)) @ V.T, (V / np.sqrt(w)) @ V.T


@dataclass
class ProjectionCheck:
    M: np.ndarray
    eigenvalues: np.ndarray
    predicted: np.ndarray  # M (xi_{t+dt} - xi_t)
    actual: np.ndarray     # phi(theta_{t+dt}) - phi(theta_t)

    @property
    def eigen_defect(self) -> float:
        """Distance of the spectrum from {0, 1}."""
        ev = np.real(self.eigenvalues)
        return float(np.max(np.minimum(np.abs(ev), np.abs(ev - 1.0))))

    @property
    def mismatch(self) -> float:
        scale = max(np.linalg.norm(self.actual), np.finfo(float).tiny)
        return float(np.linalg.norm(self.predicted - self.actual) / scale)


def overparametrization_projection(X, y, phi, jacobian, theta, dt: float = 1e-6,
                                   fisher: str = "model", null_tol: float = 1e-10
                                   ) -> ProjectionCheck:
    """The matrix relating one natural-gradient step in theta to one in xi.

    ``theta`` has fewer coordinates than ``xi = phi(theta)``.  With ``B`` the
    Jacobian and ``S = F_xi^{1/2}``, ``M = S^{-1} (I - U U^T) S`` where ``U``
    spans the null space of ``S B B^T S`` (built by eigendecomposition).
    ``M`` is a projection, and a step of length ``dt`` in theta moves
    ``phi`` by ``M`` times the step in xi, up to ``O(dt^2)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    theta = np.asarray(theta, dtype=np.float64)
    xi = np.asarray(phi(theta), dtype=np.float64)
    B = np.asarray(jacobian(theta), dtype=np.float64)
    if B.shape[0] <= B.shape[1]:
        raise ValueError("xi must have more coordinates than theta")
    g, F = _xi_grad_fisher(X, y, xi, fisher)
    S, S_inv = _sym_sqrt(F)
    w, U = np.linalg.eigh(S @ B @ B.T @ S)
    U_perp = U[:, w <= null_tol * max(w.max(), 1.0)]
    M = S_inv @ (np.eye(len(xi)) - U_perp @ U_perp.T) @ S

    d_xi = -dt * np.linalg.solve(F, g)
    d_theta = -dt * np.linalg.solve(B.T @ F @ B, B.T @ g)
    return ProjectionCheck(M, np.linalg.eigvals(M), M @ d_xi,
                           np.asarray(phi(theta + d_theta)) - xi)
