import logging

import numpy as np
import pytest

from frcap.autodiff import loss_gradient
from frcap.data import make_synthetic
from frcap.network import Network, convex_combine, flatten, init_network, predict
from frcap.optimize import (OptimizerState, TrainConfig, adam_step, check_large_margin,
                            check_linear_stationarity, end_to_end_vector, momentum_step, natural_gradient_direction, natural_gradient_step,
                            overparametrization_projection, reparametrization_gap, sgd_step,
                            train)

from conftest import random_net


def blobs(seed=0, n=100):
    ds = make_synthetic("two_blobs", {"n": n, "separation": 2 * np.sqrt(2), "sigma": 0.5},
                        seed=seed)
    return ds.X, ds.targets("hinge")


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(damping=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(optimizer="lbfgs")
        with pytest.raises(ValueError):
            TrainConfig(loss="logistic")
        with pytest.raises(ValueError):
            TrainConfig(fisher="exact")


class TestFirstOrder:
    def test_zero_gradient_leaves_parameters(self, rng):
        net = random_net(rng, 2)
        X = rng.standard_normal((10, net.input_dim))
        Y = predict(net, X)[:, 0]
        assert sgd_step(net, X, Y, TrainConfig()) == net

    def test_quadratic_monotone(self):
        # f = w x on one point x=2, y=1: loss (2w - 1)^2 / 2 has curvature 4
        net = Network.from_weights([np.array([[3.0]])], "linear")
        X, Y = np.array([[2.0]]), np.array([1.0])
        for lr in (0.1, 0.2, 0.45):
            cfg = TrainConfig(lr=lr)
            cur, losses = net, []
            for _ in range(10):
                losses.append(0.5 * (predict(cur, X)[0, 0] - 1.0) ** 2)
                cur = sgd_step(cur, X, Y, cfg)
            assert np.all(np.diff(losses) < 0)

    def test_momentum_zero_is_sgd(self, rng):
        net = random_net(rng, 2)
        X = rng.standard_normal((10, net.input_dim))
        Y = rng.standard_normal(10)
        cfg = TrainConfig(momentum=0.0)
        state = OptimizerState()
        a, b = net, net
        for _ in range(3):
            a = momentum_step(a, X, Y, cfg, state)
            b = sgd_step(b, X, Y, cfg)
        for A, B in zip(a.weights, b.weights):
            np.testing.assert_allclose(A, B, rtol=1e-14)

    def test_adam_first_step_is_signed(self, rng):
        net = random_net(rng, 1)
        X = rng.standard_normal((10, net.input_dim))
        Y = rng.standard_normal(10)
        cfg = TrainConfig(optimizer="adam", lr=1e-3, adam_eps=0.0)
        new = adam_step(net, X, Y, cfg, OptimizerState())
        g = loss_gradient(net, X, Y, "squared").flatten()
        np.testing.assert_allclose(flatten(net) - flatten(new), 1e-3 * np.sign(g), rtol=1e-10)

    def test_frozen_entries_stay(self, rng):
        a, b = random_net(rng, 1, p=2), random_net(rng, 1, p=2)
        net = convex_combine(a, b, 0.5)
        X = rng.standard_normal((20, 2))
        Y = rng.standard_normal(20)
        for opt in ("sgd", "momentum", "adam", "natural"):
            out, _ = train(net, X, Y, TrainConfig(optimizer=opt, lr=0.05, epochs=5))
            for W, F in zip(out.weights, net.frozen):
                assert np.all(W[F] == 0.0)
            assert out != net


class TestNatural:
    def test_large_damping_is_scaled_gradient(self, rng):
        net = random_net(rng, 2)
        X = rng.standard_normal((15, net.input_dim))
        Y = rng.standard_normal(15)
        from frcap.autodiff import per_sample_grads
        G = per_sample_grads(net, X, Y, "squared")
        fisher_norm = np.linalg.norm(G.T @ G / 15, 2)
        lam = 1e8 * fisher_norm
        lr = 0.1
        new = natural_gradient_step(net, X, Y, TrainConfig(optimizer="natural", lr=lr, damping=lam))
        g = G.mean(axis=0)
        step = flatten(net) - flatten(new)
        assert np.linalg.norm(step - lr * g / lam) <= 1e-6 * np.linalg.norm(lr * g / lam)

    def test_one_parameter_formula(self, rng):
        net = Network.from_weights([np.array([[0.7]])], "linear")
        X = rng.standard_normal((5, 1))
        Y = rng.standard_normal(5)
        g_i = (0.7 * X[:, 0] - Y) * X[:, 0]
        lam = 0.3
        new = natural_gradient_step(net, X, Y, TrainConfig(optimizer="natural", lr=1.0,
                                                           damping=lam))
        delta = g_i.mean() / (np.mean(g_i ** 2) + lam)
        assert 0.7 - new.weights[0][0, 0] == pytest.approx(delta, rel=1e-12)

    def test_solver_against_dense(self, rng):
        A = rng.standard_normal((6, 6))
        F = A @ A.T
        g = rng.standard_normal(6)
        delta, lam, fb = natural_gradient_direction(lambda v: F @ v, g, 0.1)
        np.testing.assert_allclose(delta, np.linalg.solve(F + 0.1 * np.eye(6), g), rtol=1e-8)
        assert lam == 0.1 and fb == 0
        assert not natural_gradient_direction(lambda v: F @ v, np.zeros(6), 0.1)[0].any()
        with pytest.raises(ValueError):
            natural_gradient_direction(lambda v: F @ v, g, 0.0)

    def test_cg_failure_raises_damping(self, rng, caplog):
        A = rng.standard_normal((30, 30))
        F = A @ A.T * 1e4
        g = rng.standard_normal(30)
        with caplog.at_level(logging.WARNING, logger="frcap.optimize"):
            delta, lam, fb = natural_gradient_direction(lambda v: F @ v, g, 1e-6, tol=1e-12,
                                                        max_iter=3)
        assert fb >= 1 and lam == pytest.approx(1e-6 * 10 ** fb)
        assert "damping x10" in caplog.text

    def test_default_damping_and_state(self, rng):
        net = random_net(rng, 1)
        X = rng.standard_normal((10, net.input_dim))
        Y = rng.standard_normal(10)
        state = OptimizerState()
        natural_gradient_step(net, X, Y, TrainConfig(optimizer="natural"), state)
        from frcap.autodiff import per_sample_grads
        G = per_sample_grads(net, X, Y, "squared")
        assert state.damping_used == pytest.approx(1e-3 * np.mean(np.sum(G ** 2, axis=1))
                                                   / G.shape[1], rel=1e-12)

    def test_model_fisher_cross_entropy(self, rng):
        net = random_net(rng, 1, K=3)
        X = rng.standard_normal((20, net.input_dim))
        Y = rng.integers(0, 3, 20)
        cfg = TrainConfig(optimizer="natural", loss="cross_entropy", fisher="model", lr=0.1,
                          damping=1e-2, epochs=20)
        out, hist = train(net, X, Y, cfg)
        assert hist.records[-1].loss < hist.records[0].loss


class TestInvariance:
    @staticmethod
    def problem(rng):
        X = rng.standard_normal((50, 2))
        y = X @ np.array([1.0, -2.0]) + 0.1 * rng.standard_normal(50)
        return X, y

    def test_linear_reparametrization_is_exact(self, rng):
        X, y = self.problem(rng)
        A = np.array([[2.0, 1.0], [0.5, 3.0]])
        for lr in (0.1, 0.5):
            gap = reparametrization_gap(X, y, lambda t: A @ t, lambda t: A, [0.3, 0.5], lr)
            assert gap.gaps.max() < 1e-12

    def test_nonlinear_gap_shrinks_with_lr(self, rng):
        X, y = self.problem(rng)
        phi = lambda t: np.array([t[0] + 0.5 * t[1] ** 2, t[1]])
        jac = lambda t: np.array([[1.0, t[1]], [0.0, 1.0]])
        finals = [reparametrization_gap(X, y, phi, jac, [0.3, 0.5], lr, damping=1e-10).final
                  for lr in (1e-2, 1e-3, 1e-4)]
        assert finals[0] / finals[1] >= 8 and finals[1] / finals[2] >= 8
        one = [reparametrization_gap(X, y, phi, jac, [0.3, 0.5], lr, horizon=lr).final
               for lr in (1e-2, 1e-3)]
        # a single step is O(lr^2)
        assert one[0] / one[1] == pytest.approx(100, rel=0.1)

    def test_projection_eigenvalues(self, rng):
        X = rng.standard_normal((50, 3))
        y = X @ np.array([1.0, -1.0, 0.5])
        phi = lambda t: np.array([t[0], t[1], t[0] * t[1]])
        jac = lambda t: np.array([[1.0, 0.0], [0.0, 1.0], [t[1], t[0]]])
        for theta in ([0.4, -0.7], [1.2, 0.3], [-2.0, 0.1]):
            chk = overparametrization_projection(X, y, phi, jac, np.array(theta))
            assert chk.eigen_defect <= 1e-6
            assert sorted(np.round(np.real(chk.eigenvalues)).tolist()) == [0.0, 1.0, 1.0]
            np.testing.assert_allclose(chk.M @ chk.M, chk.M, atol=1e-8)
            assert chk.mismatch <= 1e-4

    def test_projection_needs_bigger_xi(self, rng):
        X = rng.standard_normal((10, 2))
        with pytest.raises(ValueError):
            overparametrization_projection(X, X[:, 0], lambda t: t, lambda t: np.eye(2),
                                           np.zeros(2))


class TestTrain:
    def test_separable_hinge_reaches_zero_loss(self):
        X, y = blobs()
        net, hist = train(init_network([2, 16, 1], seed=0), X, y,
                          TrainConfig(lr=0.1, loss="hinge", epochs=3000, stop_at_stationary=True))
        assert hist.records[-1].loss == 0.0
        assert hist.stationary_epoch is not None

    def test_deterministic(self, rng):
        X = rng.standard_normal((30, 3))
        Y = rng.standard_normal(30)
        cfg = TrainConfig(optimizer="momentum", lr=0.05, epochs=10, batch_size=7, seed=4,
                          record_norms=True)
        a = train(init_network([3, 8, 1], seed=1), X, Y, cfg)
        b = train(init_network([3, 8, 1], seed=1), X, Y, cfg)
        assert a[0] == b[0]
        assert a[1].rows() == b[1].rows()
        assert "spectral" in a[1].rows()[0]
        assert [r["epoch"] for r in a[1].rows()] == list(range(11))

    def test_linear_least_squares_converges(self, rng):
        X = rng.standard_normal((40, 3))
        Y = X @ np.array([1.0, 2.0, -1.0]) + 0.1 * rng.standard_normal(40)
        net = Network.from_weights([np.zeros((3, 1))], "linear")
        net, hist = train(net, X, Y, TrainConfig(lr=0.3, epochs=5000, stop_at_stationary=True))
        assert hist.records[-1].grad_norm <= 1e-6

    def test_divergence_aborts(self, rng):
        X = 10 * rng.standard_normal((20, 3))
        Y = rng.standard_normal(20)
        _, hist = train(init_network([3, 8, 1], seed=0), X, Y, TrainConfig(lr=50.0, epochs=500))
        assert hist.aborted and "non-finite" in hist.reason
        assert hist.summary()["aborted"]

    def test_lr_decay_and_summary(self, rng):
        X = rng.standard_normal((20, 2))
        Y = rng.standard_normal(20)
        _, hist = train(init_network([2, 4, 1], seed=0), X, Y,
                        TrainConfig(lr=0.1, epochs=6, lr_decay=0.5, lr_decay_every=2,
                                    record_every=3))
        assert [r.epoch for r in hist.records] == [0, 3, 6]
        s = hist.summary()
        assert s["final"]["epoch"] == 6 and "wall_clock" not in s["final"]
        assert "wall_clock" in hist.rows(include_time=True)[0]


class TestLargeMargin:
    def test_exact_stationary_net(self):
        # f(x) = relu(x) - relu(-x) = x; data at |x| >= 1 are fitted with margin >= 1
        net = Network.from_weights([np.array([[1.0, -1.0]]), np.array([[1.0], [-1.0]])])
        X = np.array([[1.0], [2.0], [-1.5], [-3.0]])
        y = np.array([1.0, 1.0, -1.0, -1.0])
        v = check_large_margin(net, X, y)
        assert v.applicable and v.holds and v.grad_norm == 0.0
        assert v.min_margin == 1.0

    def test_not_separating(self):
        net = Network.from_weights([np.array([[1.0]])], "linear")
        v = check_large_margin(net, np.array([[1.0], [2.0]]), np.array([1.0, -1.0]))
        assert not v.applicable and v.holds is None and "does not separate" in v.detail
        assert v.margins.tolist() == [1.0, -2.0]

    def test_not_stationary(self):
        net = Network.from_weights([np.array([[0.1]])], "linear")
        v = check_large_margin(net, np.array([[1.0]]), np.array([1.0]))
        assert v.separating and not v.stationary and v.holds is None

    def test_trained_toy(self):
        X, y = blobs(seed=1)
        net, hist = train(init_network([2, 16, 1], seed=0), X, y,
                          TrainConfig(lr=0.1, loss="hinge", epochs=20000,
                                      stop_at_stationary=True, record_every=100))
        v = check_large_margin(net, X, y, eps_grad=1e-6)
        assert v.applicable and v.min_margin >= 0.999

    def test_multi_output_rejected(self, rng):
        with pytest.raises(ValueError):
            check_large_margin(random_net(rng, 1, K=2), np.ones((1, 2)), [1.0])


class TestLinearStationarity:
    def test_global_optimum(self, rng):
        X = rng.standard_normal((30, 4))
        Y = rng.standard_normal(30)
        w = np.linalg.lstsq(X, Y, rcond=None)[0]
        net = Network.from_weights([np.eye(4), w[:, None]], "linear")
        st = check_linear_stationarity(net, X, Y)
        assert abs(st.residual) <= 1e-10 * np.linalg.norm(X.T @ Y) * np.linalg.norm(w)

    def test_zero_first_layer(self, rng):
        net = Network.from_weights([np.zeros((4, 3)), rng.standard_normal((3, 1))], "linear")
        st = check_linear_stationarity(net, rng.standard_normal((10, 4)), rng.standard_normal(10))
        assert st.residual == 0.0 and st.relative == 0.0

    def test_identity_with_gradient(self, rng):
        # <theta, grad> = (L + 1) / N <w, X^T X w - X^T Y> for every parameter
        net = random_net(rng, 2, "linear", p=4)
        X = rng.standard_normal((25, 4))
        Y = rng.standard_normal(25)
        g = loss_gradient(net, X, Y, "squared").flatten()
        st = check_linear_stationarity(net, X, Y)
        assert flatten(net) @ g == pytest.approx(3 / 25 * st.residual, rel=1e-10)

    def test_end_to_end(self, rng):
        net = random_net(rng, 2, "linear", p=3)
        w = end_to_end_vector(net)
        X = rng.standard_normal((5, 3))
        np.testing.assert_allclose(predict(net, X)[:, 0], X @ w, rtol=1e-12)

    def test_rejects_nonlinear(self, rng):
        with pytest.raises(ValueError):
            check_linear_stationarity(random_net(rng, 1, "relu"), np.ones((2, 1)), [0.0, 0.0])
