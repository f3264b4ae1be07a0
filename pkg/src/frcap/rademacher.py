"""Monte-Carlo Rademacher complexity of the Fisher-Rao ball of deep linear nets.

For linear networks the output is ``<v(theta), x>`` with
``v = W^0 W^1 ... W^L``, and ``||theta||_fr / (L+1) = sqrt(v^T S v)`` where
``S = E[X X^T]``.  The supremum of ``(1/N) sum_i eps_i <v, X_i>`` over the
ball ``{v^T S v <= gamma^2}`` is therefore ``(gamma/N) ||sum_i eps_i X_i||``
in the ``S^{-1}`` norm, which is what each trial computes.  Depth never
enters.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .network import LINEAR, Network

__all__ = [
    "RademacherEstimate",
    "linear_fr_rademacher",
    "fr_ball_supremum_linear",
    "expected_chi",
    "realize_linear_network",
    "rademacher_sweep",
]


@dataclass
class RademacherEstimate:
    mean: float
    std_error: float
    trials: int
    bound: float
    p: int
    N: int
    gamma: float
    covariance: str
    seed: int

    @property
    def within_bound(self) -> bool:
        """``mean <= bound + 3 * std_error``."""
        return self.mean <= self.bound + 3.0 * self.std_error

    def to_json(self) -> dict:
        return asdict(self)


def _cholesky(cov):
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be square")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise ValueError("covariance must be symmetric")
    try:
        return cho_factor(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite") from exc


def fr_ball_supremum_linear(gram, s, gamma: float) -> float:
    """``sup {<s, v> : v^T gram v <= gamma^2} = gamma * sqrt(s^T gram^{-1} s)``."""
    c = _cholesky(gram)
    s = np.asarray(s, dtype=np.float64).ravel()
    return float(gamma * np.sqrt(max(s @ cho_solve(c, s), 0.0)))


def _trial_value(rng, chol_lower, c, N, p, gamma):
    Z = rng.standard_normal((N, p))
    X = Z @ chol_lower.T
    eps = rng.choice((-1.0, 1.0), size=N)
    s = eps @ X
    return gamma / N * np.sqrt(max(s @ cho_solve(c, s), 0.0))


def linear_fr_rademacher(p: int, N: int, gamma: float, cov=None, trials: int = 1000,
                         seed: int = 0, cov_id: str | None = None) -> RademacherEstimate:
    """Monte-Carlo estimate of ``E R_N(B_fr(gamma))`` for deep linear nets.

    Each trial draws ``X_1..X_N ~ N(0, cov)`` and Rademacher signs from its
    own generator seeded by ``(seed, trial)``, so results do not depend on
    how trials are scheduled.  The returned ``bound`` is ``gamma sqrt(p/N)``.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    cov = np.eye(p) if cov is None else np.asarray(cov, dtype=np.float64)
    if cov.shape != (p, p):
        raise ValueError(f"covariance must be {p}x{p}")
    c = _cholesky(cov)
    lower = np.tril(c[0])
    vals = np.array([_trial_value(np.random.default_rng([seed, t]), lower, c, N, p, gamma)
                     for t in range(trials)])
    se = float(vals.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    if cov_id is None:
        cov_id = "identity" if np.array_equal(cov, np.eye(p)) else "custom"
    return RademacherEstimate(float(vals.mean()), se, trials,
                              float(gamma * np.sqrt(p / N)), p, N, float(gamma),
                              cov_id, seed)


def expected_chi(p: int) -> float:
    """``E ||Z||_2`` for ``Z ~ N(0, I_p)``."""
    from scipy.special import gammaln
    return float(np.sqrt(2.0) * np.exp(gammaln((p + 1) / 2.0) - gammaln(p / 2.0)))


def realize_linear_network(v, widths, seed: int = 0) -> Network:
    """A linear network with the given hidden widths and ``W^0...W^L = v``.

    Hidden layers are random; the last layer is solved so the end-to-end
    product equals ``v`` exactly (up to rounding).
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    rng = np.random.default_rng(seed)
    dims = [v.size] + list(widths)
    if not widths:
        return Network((v[:, None],), (LINEAR,))
    ws = [rng.standard_normal((a, b)) for a, b in zip(dims[:-1], dims[1:])]
    P = ws[0]
    for W in ws[1:]:
        P = P @ W
    # P is p x k_L; need P u = v
    u, *_ = np.linalg.lstsq(P, v, rcond=None)
    if not np.allclose(P @ u, v, atol=1e-10 * max(1.0, np.abs(v).max())):
        raise ValueError("hidden widths too small to realize v")
    ws.append(u[:, None])
    return Network(tuple(ws), (LINEAR,) * len(ws))


def rademacher_sweep(ps, Ns, gammas, trials: int = 1000, seed: int = 0):
    """Estimates over a grid; returns ``(rows, csv_text)``."""
    rows = []
    for p in ps:
        for N in Ns:
            for g in gammas:
                est = linear_fr_rademacher(p, N, g, trials=trials, seed=seed)
                rows.append({"p": p, "N": N, "gamma": g, "mean": est.mean,
                             "se": est.std_error, "bound": est.bound})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["p", "N", "gamma", "mean", "se", "bound"],
                       lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return rows, buf.getvalue()
