"""Hinge-loss stationary points that separate the data have margin at least 1.

At a stationary point  0 = <theta, grad> = (L+1)/N sum_i <dloss/df, f>, and
for the hinge loss every term with margin below 1 is negative.
"""

import numpy as np

from frcap import TrainConfig, check_large_margin, init_network, make_synthetic, train

data = make_synthetic("two_blobs", {"n": 100, "separation": 2 * np.sqrt(2), "sigma": 0.5}, seed=0)
y = data.targets("hinge")
cfg = TrainConfig(lr=0.1, epochs=20000, loss="hinge", grad_tol=1e-6, stop_at_stationary=True,
                  record_every=100)
net, history = train(init_network([2, 16, 1], seed=0), data.X, y, cfg)
print("stationary after epoch", history.stationary_epoch)

verdict = check_large_margin(net, data.X, y)
print("gradient norm :", verdict.grad_norm)
print("min margin    :", verdict.min_margin)
print("margin >= 1   :", verdict.holds)
print("margin quartiles:", np.quantile(verdict.margins, [0.25, 0.5, 0.75]).round(3))
