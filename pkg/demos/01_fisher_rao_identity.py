"""Two routes to the Fisher-Rao norm, and why it ignores rescalings.

A bias-free ReLU network satisfies  sum_t <dF/dW^t, W^t> = (L+1) f(x),
so  <theta, grad loss> = (L+1) <dloss/df, f>.  The Fisher-Rao norm
sqrt(E <grad loss, theta>^2) therefore needs only forward passes.
"""

import numpy as np

from frcap import Empirical, fr_norm_fisher, fr_norm_identity, init_network, nodewise_rescale
from frcap.autodiff import output_jacobian_contraction
from frcap.network import predict

rng = np.random.default_rng(0)
net = init_network([4, 12, 12, 1], "relu", seed=0)
X = rng.standard_normal((64, 4))
y = rng.standard_normal(64)

# contracting the output Jacobian with the weights gives back (L+1) f
_, total = output_jacobian_contraction(net, X[0])
print("contraction :", total[0])
print("(L+1) f(x)  :", 3 * predict(net, X[:1])[0, 0])

# the norm from per-example gradients and from the identity agree
data = Empirical(X, y)
print("FR via Fisher   :", fr_norm_fisher(net, "squared", data))
print("FR via identity :", fr_norm_identity(net, "squared", data))

# scaling a hidden unit's inputs by c and its outputs by 1/c changes nothing
for c in (0.1, 10.0):
    other = nodewise_rescale(net, 1, 3, c)
    print(f"rescaled by {c:>4}: FR = {fr_norm_fisher(other, 'squared', data):.12f}")
