"""Capacity measures: the Fisher-Rao norm and the norm-based family.

The Fisher-Rao norm of a parameter ``theta`` is ``sqrt(theta^T I(theta) theta)``
with ``I`` the (empirical or model) Fisher information of the loss.  For the
networks in :mod:`frcap.network` it also equals

    (L + 1) * sqrt(E <dloss/df, f(X)>^2)

and both routes are exposed here: :func:`fr_norm_fisher` contracts exact
per-example gradients with ``theta``, :func:`fr_norm_identity` uses only
forward outputs.  The expectation is always explicit; pass an
:class:`Empirical` or :class:`ModelSampled` distribution.

The flat norms (spectral, group, induced, chain) are per-layer products;
the data-dependent versions multiply them by a prefactor that depends on
the activation masks of each example (:func:`data_prefactor`).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import linalg
from .autodiff import PerSampleGradients
from .linalg import conjugate_exponent
from .losses import LossKind, loss_output_grad, softmax
from .network import Network, flatten, forward, predict

__all__ = [
    "Empirical",
    "ModelSampled",
    "expectation_points",
    "fr_norm_identity",
    "fr_norm_fisher",
    "fr_norm_crossentropy",
    "spectral_product",
    "group_product",
    "induced_product",
    "chain_product",
    "flat_norm",
    "path_norm",
    "l2_norm",
    "data_prefactor",
    "NormEntry",
    "NormReport",
    "norm_comparison_report",
    "star_shape_check",
    "capacity_summary",
    "COMPARISON_SLACK",
    "REPORT_SCHEMA_VERSION",
]

COMPARISON_SLACK = 1e-9
REPORT_SCHEMA_VERSION = 1
_CHUNK = 512


# ---------------------------------------------------------------- distributions

@dataclass(frozen=True, eq=False)
class Empirical:
    """Expectation over the observed pairs ``(X_i, y_i)``."""

    X: np.ndarray
    y: np.ndarray


@dataclass(frozen=True, eq=False)
class ModelSampled:
    """Inputs from data, labels from the model's own predictive distribution.

    Cross-entropy draws a class from ``softmax(f)``; squared loss draws
    ``y ~ N(f, noise_scale^2)``; absolute loss draws from a Laplace law
    centred at ``f``.  With ``exact=True`` (cross-entropy only) the label
    expectation is the exact weighted sum over all K classes.
    """

    X: np.ndarray
    samples_per_input: int = 1
    seed: int = 0
    exact: bool = False
    noise_scale: float = 1.0


def expectation_points(dist, net: Network, loss):
    """Materialize ``dist`` as weighted points ``(X, Y, w)`` with ``sum w = 1``."""
    loss = LossKind.parse(loss)
    if isinstance(dist, Empirical):
        X = np.atleast_2d(np.asarray(dist.X, dtype=np.float64))
        if X.shape[0] == 0:
            raise ValueError("empty distribution")
        return X, np.asarray(dist.y), np.full(X.shape[0], 1.0 / X.shape[0])
    if not isinstance(dist, ModelSampled):
        raise TypeError("dist must be Empirical or ModelSampled")

    X = np.atleast_2d(np.asarray(dist.X, dtype=np.float64))
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty distribution")
    F = predict(net, X)
    if dist.exact:
        if loss is not LossKind.CROSS_ENTROPY:
            raise ValueError("exact label enumeration needs cross-entropy loss")
        K = F.shape[1]
        P = softmax(F)
        Xr = np.repeat(X, K, axis=0)
        Yr = np.tile(np.arange(K), n)
        return Xr, Yr, P.ravel() / n

    m = int(dist.samples_per_input)
    if m < 1:
        raise ValueError("samples_per_input must be >= 1")
    rng = np.random.default_rng(dist.seed)
    Xr = np.repeat(X, m, axis=0)
    Fr = np.repeat(F, m, axis=0)
    if loss is LossKind.CROSS_ENTROPY:
        P = softmax(Fr)
        u = rng.random(P.shape[0])
        Y = np.minimum((P.cumsum(axis=1) < u[:, None]).sum(axis=1), P.shape[1] - 1)
    elif loss is LossKind.SQUARED:
        Y = Fr + dist.noise_scale * rng.standard_normal(Fr.shape)
    elif loss is LossKind.ABSOLUTE:
        Y = Fr + rng.laplace(0.0, dist.noise_scale, size=Fr.shape)
    else:
        raise ValueError("the hinge loss has no model distribution to sample")
    return Xr, Y, np.full(Xr.shape[0], 1.0 / Xr.shape[0])


# ---------------------------------------------------------------- Fisher-Rao

def fr_norm_identity(net: Network, loss, dist) -> float:
    """``(L+1) * sqrt(E <dloss/df, f>^2)``; needs only forward outputs."""
    X, Y, w = expectation_points(dist, net, loss)
    F = predict(net, X)
    G = np.atleast_2d(loss_output_grad(loss, F, Y))
    inner = np.sum(G * F, axis=1)
    return float((net.depth + 1) * np.sqrt(np.dot(w, inner ** 2)))


def fr_norm_fisher(net: Network, loss, dist) -> float:
    """``sqrt(theta^T I theta)`` as ``sqrt(E <grad loss, theta>^2)``.

    Per-example gradients are built densely in chunks and multiplied by
    the flattened parameter vector; the ``d x d`` Fisher matrix is never
    formed.
    """
    X, Y, w = expectation_points(dist, net, loss)
    theta = flatten(net)
    total = 0.0
    for start in range(0, X.shape[0], _CHUNK):
        sl = slice(start, start + _CHUNK)
        trace = forward(net, X[sl])
        G = np.atleast_2d(loss_output_grad(loss, trace.output, Y[sl]))
        dense = PerSampleGradients(net, X[sl], G, trace).dense()
        total += float(np.dot(w[sl], (dense @ theta) ** 2))
    return float(np.sqrt(total))


def fr_norm_crossentropy(net: Network, X, y=None, variant: str = "empirical") -> float:
    """Closed-form cross-entropy Fisher-Rao norm.

    ``empirical``: ``(L+1)^2 mean_i [<g(f_i), f_i> - f_i[y_i]]^2``;
    ``model``: the same averaged over ``y ~ g(f_i)`` exactly.
    Returns the square root of either.
    """
    F = np.atleast_2d(predict(net, X))
    K = F.shape[1]
    if K < 2:
        raise ValueError("cross-entropy Fisher-Rao norm needs K >= 2")
    P = softmax(F)
    center = np.sum(P * F, axis=1)
    scale = (net.depth + 1) ** 2
    if variant == "empirical":
        if y is None:
            raise ValueError("the empirical variant needs labels")
        y = np.asarray(y)
        labels = y.astype(np.int64)
        if np.any(labels != y) or np.any((labels < 0) | (labels >= K)):
            raise ValueError(f"class labels must be integers in [0, {K})")
        terms = (center - F[np.arange(F.shape[0]), labels]) ** 2
    elif variant == "model":
        terms = np.sum(P * (center[:, None] - F) ** 2, axis=1)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return float(np.sqrt(scale * np.mean(terms)))


# ---------------------------------------------------------------- flat norms

def spectral_product(net: Network) -> float:
    return float(np.prod([linalg.spectral_norm(W) for W in net.weights]))


def group_product(net: Network, p: float, q: float) -> float:
    return float(np.prod([linalg.group_norm(W, p, q) for W in net.weights]))


def induced_product(net: Network, p: float, q: float) -> tuple[float, bool]:
    """Product of ``||W^t||_{p->q}``; the flag is False if any factor is a
    heuristic lower bound."""
    vals = [linalg.induced_norm(W, p, q) for W in net.weights]
    return float(np.prod([v for v, _ in vals])), all(e for _, e in vals)


def chain_product(net: Network, chain) -> tuple[float, bool]:
    """Product of ``||W^t||_{p_t -> p_{t+1}}`` for ``chain = (p_0..p_{L+1})``."""
    chain = tuple(float(c) for c in chain)
    if len(chain) != net.depth + 2:
        raise ValueError(f"chain needs {net.depth + 2} exponents, got {len(chain)}")
    vals = [linalg.induced_norm(W, a, b)
            for W, a, b in zip(net.weights, chain[:-1], chain[1:])]
    return float(np.prod([v for v, _ in vals])), all(e for _, e in vals)


def path_norm(net: Network, q: float) -> float:
    """l_q norm of all input-to-output path products, by dynamic programming.

    Propagates the all-ones row vector through the entrywise powers
    ``|W^t|^q`` (or a max-product recursion for ``q = inf``).
    """
    q = float(q)
    if np.isnan(q) or q < 1:
        raise ValueError("q must be >= 1")
    v = np.ones(net.input_dim)
    if np.isinf(q):
        for W in net.weights:
            v = np.max(v[:, None] * np.abs(W), axis=0)
        return float(v.max())
    for W in net.weights:
        v = v @ (np.abs(W) ** q)
    return float(v.sum() ** (1.0 / q))


def l2_norm(net: Network) -> float:
    return float(np.linalg.norm(flatten(net)))


def flat_norm(net: Network, kind: str, p=None, q=None, chain=None) -> float:
    """Per-layer product norm: ``spectral``, ``group``, ``induced``, ``chain``
    or ``path``."""
    if kind == "spectral":
        return spectral_product(net)
    if kind == "group":
        return group_product(net, p, q)
    if kind == "induced":
        return induced_product(net, p, q)[0]
    if kind == "chain":
        return chain_product(net, chain)[0]
    if kind == "path":
        return path_norm(net, q)
    raise ValueError(f"unknown norm kind {kind!r}")


# ---------------------------------------------------------------- prefactors

def _rows_pnorm(A, p):
    return np.array([linalg.vec_pnorm(a, p) for a in A]) if A.size else np.zeros(len(A))


def _rows_diag_induced(D, q, p):
    """``||diag(d_i)||_{q->p}`` for every row ``d_i`` of ``D``."""
    if p >= q:
        return D.max(axis=1)
    inv_r = 1.0 / p - (0.0 if np.isinf(q) else 1.0 / q)
    return _rows_pnorm(D, 1.0 / inv_r)


def data_prefactor(net: Network, kind: str, X, p=None, q=None, chain=None) -> float:
    """Square root of the empirical mean of the mask-dependent factor.

    ``spectral``:  ||x||_2^2 prod_t ||D^t||_sigma^2
    ``group``:     ||x||_{p*}^2 prod_t ||D^t||_{q->p*}^2
    ``induced``:   ||x||_p^2 prod_t ||D^t||_{q->p}^2
    ``chain``:     ||x||_{p_0}^2 prod_t ||D^t||_{p_t->p_t}^2
    ``path``:      (||x||_{q*}^{q*} prod_t sum_i (D^t_i)^{q*})^{2/q*},
                   or (||x||_inf prod_t max_i D^t_i)^2 when q = 1

    with ``t`` running over layers ``1..L+1``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    masks = forward(net, X).masks
    L1 = net.depth + 1

    if kind == "spectral":
        factor = _rows_pnorm(X, 2) ** 2
        for D in masks:
            factor = factor * D.max(axis=1) ** 2
    elif kind == "group":
        ps = conjugate_exponent(p)
        factor = _rows_pnorm(X, ps) ** 2
        for D in masks:
            factor = factor * _rows_diag_induced(D, float(q), ps) ** 2
    elif kind == "induced":
        factor = _rows_pnorm(X, p) ** 2
        for D in masks:
            factor = factor * _rows_diag_induced(D, float(q), float(p)) ** 2
    elif kind == "chain":
        chain = tuple(float(c) for c in chain)
        if len(chain) != L1 + 1:
            raise ValueError(f"chain needs {L1 + 1} exponents, got {len(chain)}")
        factor = _rows_pnorm(X, chain[0]) ** 2
        for D in masks:
            factor = factor * D.max(axis=1) ** 2
    elif kind == "path":
        qs = conjugate_exponent(q)
        if np.isinf(qs):
            base = np.abs(X).max(axis=1)
            for D in masks:
                base = base * D.max(axis=1)
            factor = base ** 2
        else:
            base = np.sum(np.abs(X) ** qs, axis=1)
            for D in masks:
                base = base * np.sum(D ** qs, axis=1)
            factor = base ** (2.0 / qs)
    else:
        raise ValueError(f"unknown prefactor kind {kind!r}")
    return float(np.sqrt(np.mean(factor)))


# ---------------------------------------------------------------- reports

@dataclass
class NormEntry:
    """One data-dependent norm: ``value = prefactor * flat``."""

    name: str
    prefactor: float
    flat: float
    value: float
    exact: bool
    holds: bool
    slack: float


@dataclass
class NormReport:
    depth: int
    dims: list
    fr_identity: float
    fr_fisher: float
    fr_natural: float
    fr_empirical_ce: float | None = None
    fr_model_ce: float | None = None
    entries: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def all_hold(self) -> bool:
        return all(e.holds for e in self.entries if e.exact)

    def entry(self, name: str) -> NormEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def recheck(self, slack: float = COMPARISON_SLACK) -> bool:
        """Recompute every verdict from the stored values."""
        return all((self.fr_natural <= e.value + slack) == e.holds
                   for e in self.entries)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["schema"] = REPORT_SCHEMA_VERSION
        return _jsonable(doc)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    def csv_row(self) -> dict:
        row = {"depth": self.depth, "dims": "-".join(map(str, self.dims)),
               "fr_identity": self.fr_identity, "fr_fisher": self.fr_fisher,
               "fr_natural": self.fr_natural}
        for e in self.entries:
            row[f"{e.name}"] = e.value
            row[f"{e.name}_holds"] = int(e.holds)
        return row

    def to_csv(self) -> str:
        row = self.csv_row()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _fmt(p):
    return "inf" if np.isinf(p) else f"{float(p):g}"


def default_chains(depth: int) -> list:
    """Chains over {1, 2, inf} whose every factor has a closed form."""
    n = depth + 2
    inf = np.inf
    chains = [(1.0,) * n, (2.0,) * n, (inf,) * n]
    if n >= 3:
        chains.append((1.0,) + (2.0,) * (n - 2) + (inf,))
        chains.append((2.0,) * (n - 1) + (1.0,))
    return chains


def norm_comparison_report(net: Network, X, y=None, *,
                           group_pairs=((1, 1), (2, 2), (1, np.inf)),
                           path_qs=(1, 2),
                           induced_pairs=((2, 2), (1, 2), (1, np.inf)),
                           chains=None,
                           slack: float = COMPARISON_SLACK,
                           metadata=None) -> NormReport:
    """Compare ``||theta||_fr / (L+1)`` with every data-dependent norm.

    Uses the absolute loss on the empirical distribution of ``X`` and a
    single output unit.  Without labels the Fisher-Rao norm is evaluated in
    its function-space form ``(L+1) sqrt(mean f^2)``.  A verdict holds when
    ``fr / (L+1) <= value + slack``; entries whose flat norm is only a
    heuristic lower bound are marked ``exact=False``.
    """
    if net.output_dim != 1:
        raise ValueError("norm comparison is defined for a single output unit")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    L1 = net.depth + 1
    if y is None:
        F = predict(net, X)[:, 0]
        fr_id = float(L1 * np.sqrt(np.mean(F ** 2)))
        # the Fisher route needs labels; any label off the range of f works
        # and reproduces the function-space form almost surely
        y_fd = F - 1.0
    else:
        fr_id = fr_norm_identity(net, LossKind.ABSOLUTE, Empirical(X, y))
        y_fd = y
    fr_f = fr_norm_fisher(net, LossKind.ABSOLUTE, Empirical(X, y_fd))
    fr_nat = fr_id / L1

    entries = []

    def add(name, pref, flat, exact):
        value = pref * flat
        entries.append(NormEntry(name, pref, flat, value, bool(exact),
                                 bool(fr_nat <= value + slack), value - fr_nat))

    add("spectral", data_prefactor(net, "spectral", X), spectral_product(net), True)
    for p, q in group_pairs:
        add(f"group_{_fmt(p)}_{_fmt(q)}", data_prefactor(net, "group", X, p=p, q=q),
            group_product(net, p, q), True)
    for q in path_qs:
        add(f"path_{_fmt(q)}", data_prefactor(net, "path", X, q=q), path_norm(net, q), True)
    for p, q in induced_pairs:
        flat, exact = induced_product(net, p, q)
        add(f"induced_{_fmt(p)}_{_fmt(q)}", data_prefactor(net, "induced", X, p=p, q=q),
            flat, exact)
    for P in (default_chains(net.depth) if chains is None else chains):
        flat, exact = chain_product(net, P)
        add("chain_" + "_".join(_fmt(c) for c in P),
            data_prefactor(net, "chain", X, chain=P), flat, exact)

    meta = {"n": int(X.shape[0]), "loss": "absolute", "slack": slack}
    meta.update(metadata or {})
    return NormReport(depth=net.depth, dims=net.dims, fr_identity=fr_id,
                      fr_fisher=fr_f, fr_natural=fr_nat, entries=entries,
                      metadata=meta)


def star_shape_check(net: Network, r: float, dist, loss=LossKind.ABSOLUTE):
    """``(||r theta||_fr, r^{L+1} ||theta||_fr, relative error)``."""
    if not r > 0:
        raise ValueError("r must be positive")
    lhs = fr_norm_fisher(net.scaled(r), loss, dist)
    rhs = r ** (net.depth + 1) * fr_norm_fisher(net, loss, dist)
    denom = max(abs(rhs), np.finfo(float).tiny)
    return lhs, rhs, abs(lhs - rhs) / denom if rhs != 0 else abs(lhs)


def capacity_summary(net: Network, X, y=None) -> dict:
    """Norms recorded during training and sweeps, for any output width.

    The Fisher-Rao entries use cross-entropy when ``K >= 2`` and the
    absolute loss (function-space form) when ``K = 1``; ``fr_*_natural`` are
    divided by ``L + 1``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    L1 = net.depth + 1
    out = {"l2": l2_norm(net), "spectral": spectral_product(net),
           "path_1": path_norm(net, 1), "path_2": path_norm(net, 2),
           "group_2_2": group_product(net, 2, 2)}
    if net.output_dim >= 2:
        out["fr_model"] = fr_norm_crossentropy(net, X, variant="model")
        if y is not None:
            out["fr_empirical"] = fr_norm_crossentropy(net, X, y, variant="empirical")
    else:
        F = predict(net, X)[:, 0]
        out["fr_model"] = float(L1 * np.sqrt(np.mean(F ** 2)))
        out["fr_empirical"] = out["fr_model"]
    out["fr_model_natural"] = out["fr_model"] / L1
    if "fr_empirical" in out:
        out["fr_empirical_natural"] = out["fr_empirical"] / L1
    return out
