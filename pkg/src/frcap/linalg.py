"""Dense matrix kernels and the norm catalogue.

Conventions
-----------
All operator norms use the row-vector convention

    ||M||_{p->q} = max_{v != 0} ||v^T M||_q / ||v||_p

so that ``M`` maps a row vector on the left (``v @ M``), the same way weights
act on activations in :mod:`frcap.network`.  The spectral norm is the
``2->2`` case.  Group norms take an l_p norm down each column and an l_q
norm across the resulting column norms.

Exponents are floats in ``[1, inf]``; ``numpy.inf`` selects the max norm.
"""

from __future__ import annotations

import itertools
import warnings

import numpy as np

__all__ = [
    "ConvergenceWarning",
    "as_matrix",
    "as_mask",
    "conjugate_exponent",
    "vec_pnorm",
    "spectral_norm",
    "group_norm",
    "induced_norm",
    "diagonal_induced_norm",
]

# cube enumeration for p = inf is exact up to this many rows
_MAX_CUBE_ROWS = 16


class ConvergenceWarning(UserWarning):
    """An iterative kernel hit its iteration cap before converging."""


def as_matrix(M) -> np.ndarray:
    """Validate ``M`` as a finite 2-D float64 array."""
    A = np.array(M, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix entries must be finite")
    return A


def as_mask(d) -> np.ndarray:
    """Validate ``d`` as the nonnegative diagonal of an activation mask."""
    d = np.asarray(d, dtype=np.float64).ravel()
    if not np.all(np.isfinite(d)):
        raise ValueError("mask entries must be finite")
    if np.any(d < 0):
        raise ValueError("mask entries must be nonnegative")
    return d


def _check_exponent(p, name="p") -> float:
    p = float(p)
    if np.isnan(p) or p < 1:
        raise ValueError(f"{name} must be >= 1 or inf, got {p}")
    return p


def conjugate_exponent(p: float) -> float:
    """Return p* with 1/p + 1/p* = 1."""
    p = _check_exponent(p)
    if p == 1:
        return np.inf
    if np.isinf(p):
        return 1.0
    return p / (p - 1.0)


def vec_pnorm(v, p: float) -> float:
    """l_p norm of a vector; ``p=np.inf`` gives the max absolute entry."""
    p = _check_exponent(p)
    a = np.abs(np.asarray(v, dtype=np.float64).ravel())
    if a.size == 0:
        raise ValueError("vector must be nonempty")
    if np.isinf(p):
        return float(a.max())
    if p == 1:
        return float(a.sum())
    if p == 2:
        return float(np.sqrt(np.dot(a, a)))
    # scale by the max entry so large p does not overflow
    m = a.max()
    if m == 0:
        return 0.0
    return float(m * np.sum((a / m) ** p) ** (1.0 / p))


def _colwise_pnorm(M: np.ndarray, p: float, axis: int) -> np.ndarray:
    A = np.abs(M)
    if np.isinf(p):
        return A.max(axis=axis)
    if p == 1:
        return A.sum(axis=axis)
    if p == 2:
        return np.sqrt(np.sum(A * A, axis=axis))
    m = A.max(axis=axis, keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    return (np.squeeze(safe, axis=axis)
            * np.sum((A / safe) ** p, axis=axis) ** (1.0 / p))


def spectral_norm(M, tol: float = 1e-10, max_iter: int = 10000,
                  full_output: bool = False, seed: int = 0):
    """Largest singular value by power iteration on ``M^T M``.

    The start vector is the normalized all-ones vector.  If the Rayleigh
    quotient is exactly zero on a nonzero matrix (the start vector lies in
    the null space), one restart from a seeded random vector is made.
    Iteration stops once ``||M^T M v - lam v|| <= tol * lam``.

    Returns the norm, or ``(norm, converged)`` when ``full_output`` is set.
    A :class:`ConvergenceWarning` is emitted if ``max_iter`` is reached.
    """
    A = as_matrix(M)
    if A.size == 0:
        raise ValueError("matrix must be nonempty")
    n = A.shape[1]
    if not np.any(A):
        return (0.0, True) if full_output else 0.0

    v = np.full(n, 1.0 / np.sqrt(n))
    restarted = False
    converged = False
    lam = 0.0
    it = 0
    while it < max_iter:
        it += 1
        w = A.T @ (A @ v)
        lam = float(v @ w)
        if lam <= 0.0:
            if restarted:
                break
            restarted = True
            v = np.random.default_rng(seed).standard_normal(n)
            v /= np.linalg.norm(v)
            continue
        resid = np.linalg.norm(w - lam * v)
        if resid <= tol * lam:
            converged = True
            break
        v = w / np.linalg.norm(w)
    if not converged:
        warnings.warn(f"power iteration did not converge in {max_iter} "
                      "iterations", ConvergenceWarning, stacklevel=2)
    value = float(np.sqrt(max(lam, 0.0)))
    return (value, converged) if full_output else value


def group_norm(M, p: float, q: float) -> float:
    """``[sum_j (sum_i |M_ij|^p)^(q/p)]^(1/q)``: l_p per column, l_q across."""
    p = _check_exponent(p, "p")
    q = _check_exponent(q, "q")
    A = as_matrix(M)
    cols = _colwise_pnorm(A, p, axis=0)
    return vec_pnorm(cols, q)


def _dual_direction(g: np.ndarray, p: float) -> np.ndarray:
    """Maximizer of <g, v> over the unit l_p ball."""
    if not np.any(g):
        return np.zeros_like(g)
    if p == 1:
        v = np.zeros_like(g)
        i = int(np.argmax(np.abs(g)))
        v[i] = np.sign(g[i])
        return v
    if np.isinf(p):
        return np.where(g >= 0, 1.0, -1.0)
    ps = conjugate_exponent(p)
    a = np.abs(g) / np.abs(g).max()
    v = np.sign(g) * a ** (ps - 1.0)
    return v / vec_pnorm(v, p)


def _norm_subgradient(u: np.ndarray, q: float) -> np.ndarray:
    """A subgradient of ``||u||_q`` at ``u``."""
    if not np.any(u):
        return np.zeros_like(u)
    if q == 1:
        return np.sign(u)
    if np.isinf(q):
        g = np.zeros_like(u)
        i = int(np.argmax(np.abs(u)))
        g[i] = np.sign(u[i])
        return g
    a = np.abs(u) / np.abs(u).max()
    g = np.sign(u) * a ** (q - 1.0)
    return g / vec_pnorm(a, q) ** (q - 1.0)


def _ratio(A, v, p, q):
    nv = vec_pnorm(v, p)
    return 0.0 if nv == 0 else vec_pnorm(v @ A, q) / nv


def _ascent(A, v, p, q, max_iter=500):
    # conditional-gradient ascent on the convex map v -> ||v^T A||_q
    # over the unit l_p ball; each step cannot decrease the objective
    v = v / vec_pnorm(v, p)
    best = _ratio(A, v, p, q)
    for _ in range(max_iter):
        g = A @ _norm_subgradient(v @ A, q)
        w = _dual_direction(g, p)
        val = _ratio(A, w, p, q)
        if val <= best * (1 + 1e-14):
            break
        v, best = w, val
    return best


def induced_norm(M, p: float, q: float, restarts: int = 8,
                 seed: int = 0) -> tuple[float, bool]:
    """Operator norm ``max ||v^T M||_q / ||v||_p``.

    Returns ``(value, exact)``.  Closed forms are used when available:

    * one row or one column (the norm of a vector functional);
    * ``p = 1``: the extreme points of the l_1 ball are the signed basis
      vectors, so the value is ``max_i ||row_i||_q``;
    * ``q = inf``: ``max_j ||col_j||_{p*}``;
    * ``p = q = 2``: the spectral norm;
    * ``p = inf`` with at most 16 rows: enumeration of the cube vertices.

    Otherwise a conditional-gradient ascent from ``restarts`` random starts
    (plus the basis vectors and the all-ones vector) is run.  That value
    is a LOWER bound on the true norm and is returned with ``exact=False``.
    """
    p = _check_exponent(p, "p")
    q = _check_exponent(q, "q")
    A = as_matrix(M)
    if A.size == 0:
        raise ValueError("matrix must be nonempty")
    n, m = A.shape
    if m == 1:
        return vec_pnorm(A[:, 0], conjugate_exponent(p)), True
    if n == 1:
        return vec_pnorm(A[0], q), True
    if p == 1:
        return float(_colwise_pnorm(A, q, axis=1).max()), True
    if np.isinf(q):
        return float(_colwise_pnorm(A, conjugate_exponent(p), axis=0).max()), True
    if p == 2 and q == 2:
        return spectral_norm(A), True
    if np.isinf(p) and n <= _MAX_CUBE_ROWS:
        best = 0.0
        # v and -v give the same value; fix the first sign
        for signs in itertools.product((1.0, -1.0), repeat=n - 1):
            v = np.array((1.0,) + signs)
            best = max(best, vec_pnorm(v @ A, q))
        return best, True

    rng = np.random.default_rng(seed)
    starts = [np.ones(n)] + list(np.eye(n))
    starts += [rng.standard_normal(n) for _ in range(restarts)]
    best = max(_ascent(A, v, p, q) for v in starts)
    return float(best), False


def diagonal_induced_norm(d, q: float, p: float) -> float:
    """Exact ``||diag(d)||_{q->p}`` for a nonnegative diagonal.

    If ``p >= q`` the value is ``max_i d_i``; if ``p < q`` it is ``||d||_r``
    with ``1/r = 1/p - 1/q`` (Hoelder).  For a 0/1 mask with ``s`` active
    entries this is ``s ** max(0, 1/p - 1/q)``, and 0 when ``s = 0``.
    """
    d = as_mask(d)
    q = _check_exponent(q, "q")
    p = _check_exponent(p, "p")
    if d.size == 0:
        raise ValueError("mask must be nonempty")
    if p >= q:
        return float(d.max())
    inv_r = 1.0 / p - (0.0 if np.isinf(q) else 1.0 / q)
    return vec_pnorm(d, 1.0 / inv_r)
