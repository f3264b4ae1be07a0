import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from frcap.linalg import (ConvergenceWarning, conjugate_exponent, diagonal_induced_norm,
                          group_norm, induced_norm, spectral_norm, vec_pnorm)

INF = np.inf


def sphere_grid(dim, p, n=400):
    """Dense sample of the unit l_p sphere in dimension <= 3."""
    if dim == 1:
        pts = np.array([[1.0], [-1.0]])
    elif dim == 2:
        a = np.linspace(0, 2 * np.pi, 20 * n, endpoint=False)
        pts = np.column_stack([np.cos(a), np.sin(a)])
    else:
        u = np.linspace(0, np.pi, n // 2)
        v = np.linspace(0, 2 * np.pi, n, endpoint=False)
        U, V = np.meshgrid(u, v)
        pts = np.column_stack([(np.sin(U) * np.cos(V)).ravel(),
                               (np.sin(U) * np.sin(V)).ravel(), np.cos(U).ravel()])
    # a convex function peaks at an extreme point of the ball: add the
    # vertices of the l_1 and l_inf balls explicitly
    if p == 1:
        pts = np.vstack([pts, np.eye(dim), -np.eye(dim)])
    if p == INF:
        pts = np.vstack([pts, np.array(list(itertools.product((1.0, -1.0), repeat=dim)))])
    return pts / rows_pnorm(pts, p)[:, None]


def rows_pnorm(A, p):
    A = np.abs(A)
    return A.max(axis=1) if p == INF else (A ** p).sum(axis=1) ** (1.0 / p)


def brute_induced(M, p, q):
    V = sphere_grid(M.shape[0], p)
    return float(rows_pnorm(V @ M, q).max())


class TestVecPnorm:
    def test_examples(self):
        assert vec_pnorm([3, 4], 2) == 5
        assert vec_pnorm([1, -1], 1) == 2
        assert vec_pnorm([1, -7, 2], INF) == 7

    def test_rejects_small_exponent(self):
        with pytest.raises(ValueError):
            vec_pnorm([1.0], 0.5)

    def test_conjugates(self):
        assert conjugate_exponent(1) == INF
        assert conjugate_exponent(INF) == 1
        assert conjugate_exponent(2) == 2
        assert conjugate_exponent(3) == pytest.approx(1.5)


class TestSpectral:
    def test_examples(self):
        assert spectral_norm(np.eye(3)) == pytest.approx(1.0, rel=1e-12)
        assert spectral_norm(np.diag([3.0, -4.0])) == pytest.approx(4.0, rel=1e-10)

    def test_rank_one(self, rng):
        for _ in range(10):
            u, v = rng.standard_normal(5), rng.standard_normal(4)
            assert spectral_norm(np.outer(u, v)) == pytest.approx(
                np.linalg.norm(u) * np.linalg.norm(v), rel=1e-10)

    @given(st.integers(0, 10 ** 6))
    def test_matches_svd(self, seed):
        rng = np.random.default_rng(seed)
        m, n = rng.integers(1, 21, size=2)
        M = rng.standard_normal((m, n))
        s = np.linalg.svd(M, compute_uv=False)[0]
        assert spectral_norm(M) == pytest.approx(s, rel=1e-8)

    def test_zero_and_orthogonal_to_ones(self):
        assert spectral_norm(np.zeros((3, 2))) == 0.0
        # all-ones start is in the null space; the random restart must recover
        M = np.array([[1.0, -1.0]])
        assert spectral_norm(M) == pytest.approx(np.sqrt(2), rel=1e-10)

    def test_nonconvergence_warns(self, rng):
        M = np.diag([1.0, 0.999999])
        with pytest.warns(ConvergenceWarning):
            spectral_norm(M, tol=1e-15, max_iter=2)

    def test_full_output(self):
        val, converged = spectral_norm(np.eye(2), full_output=True)
        assert val == pytest.approx(1.0)
        assert converged


class TestGroup:
    def test_examples(self, rng):
        assert group_norm(np.ones((2, 2)), 2, 2) == pytest.approx(2.0)
        assert group_norm(np.zeros((3, 3)), 1, 2) == 0.0
        M = rng.standard_normal((3, 3))
        total = 0.0
        for j in range(3):
            col = 0.0
            for i in range(3):
                col += abs(M[i, j])
            total += col ** 2
        assert group_norm(M, 1, 2) == pytest.approx(np.sqrt(total), rel=1e-14)

    def test_infinite_exponents(self, rng):
        M = rng.standard_normal((4, 3))
        assert group_norm(M, 1, INF) == pytest.approx(np.abs(M).sum(axis=0).max())
        assert group_norm(M, INF, 1) == pytest.approx(np.abs(M).max(axis=0).sum())


class TestInduced:
    def test_identity(self):
        v, exact = induced_norm(np.eye(3), 2, 2)
        assert exact and v == pytest.approx(1.0)

    def test_p1_is_max_row_norm(self, rng):
        for _ in range(10):
            M = rng.standard_normal((4, 3))
            # oracle: the l1 ball's extreme points are the signed basis vectors
            oracle = max(vec_pnorm(s * M[i], 2) for i in range(4) for s in (1, -1))
            v, exact = induced_norm(M, 1, 2)
            assert exact and v == pytest.approx(oracle, rel=1e-14)

    @pytest.mark.parametrize("p,q", [(1, 1), (1, 2), (1, INF), (2, 2), (2, INF),
                                     (INF, 1), (INF, 2), (3, INF)])
    def test_exact_forms_match_grid(self, rng, p, q):
        for _ in range(3):
            M = rng.standard_normal((int(rng.integers(1, 4)), int(rng.integers(1, 4))))
            v, exact = induced_norm(M, p, q)
            assert exact
            assert v == pytest.approx(brute_induced(M, p, q), rel=1e-3)

    @given(st.integers(0, 10 ** 6))
    def test_heuristic_is_lower_bound_of_probes(self, seed):
        rng = np.random.default_rng(seed)
        M = rng.standard_normal((3, 4))
        v, exact = induced_norm(M, 3, 1.5)
        assert not exact
        for _ in range(20):
            v0 = rng.standard_normal(3)
            assert v >= vec_pnorm(v0 @ M, 1.5) / vec_pnorm(v0, 3) - 1e-12

    def test_heuristic_close_to_grid(self, rng):
        M = rng.standard_normal((2, 3))
        v, exact = induced_norm(M, 3, 1.5)
        assert v == pytest.approx(brute_induced(M, 3, 1.5), rel=1e-3)


class TestDiagonalInduced:
    def test_mask_example(self):
        d = np.array([1, 1, 1, 0.0])
        assert diagonal_induced_norm(d, 2, 1) == pytest.approx(np.sqrt(3))
        assert diagonal_induced_norm(np.zeros(4), 2, 1) == 0.0
        for s in range(1, 5):
            m = np.r_[np.ones(s), np.zeros(4 - s)]
            assert diagonal_induced_norm(m, 1, 2) == 1.0
            assert diagonal_induced_norm(m, 2, INF) == 1.0

    def test_power_law_for_masks(self):
        for s in range(0, 5):
            m = np.r_[np.ones(s), np.zeros(4 - s)]
            for p, q in itertools.product((1, 2, 3, INF), repeat=2):
                expected = 0.0 if s == 0 else s ** max(1 / p - (0 if q == INF else 1 / q), 0)
                assert diagonal_induced_norm(m, q, p) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("q,p", [(2, 1), (1, 2), (INF, 1), (3, 1.5), (1.5, 3), (INF, 2)])
    def test_matches_grid_and_heuristic(self, rng, q, p):
        for _ in range(3):
            d = rng.uniform(0, 2, size=int(rng.integers(1, 4)))
            val = diagonal_induced_norm(d, q, p)
            assert val == pytest.approx(brute_induced(np.diag(d), q, p), rel=1e-3)
            assert induced_norm(np.diag(d), q, p)[0] <= val + 1e-9

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            diagonal_induced_norm([-1.0, 1.0], 2, 2)


@given(st.integers(0, 10 ** 6), st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3))
def test_homogeneity(seed, c):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((3, 4))
    assert spectral_norm(c * M) == pytest.approx(abs(c) * spectral_norm(M), rel=1e-9)
    assert group_norm(c * M, 1, 2) == pytest.approx(abs(c) * group_norm(M, 1, 2), rel=1e-12)
    for p, q in [(1, 2), (INF, 1), (2, 2)]:
        assert induced_norm(c * M, p, q)[0] == pytest.approx(
            abs(c) * induced_norm(M, p, q)[0], rel=1e-9)
    d = np.abs(rng.standard_normal(4))
    assert diagonal_induced_norm(abs(c) * d, 2, 1) == pytest.approx(
        abs(c) * diagonal_induced_norm(d, 2, 1), rel=1e-12)


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        spectral_norm(np.array([[np.nan]]))
