"""Bias-free feedforward networks with positively homogeneous activations.

A network of depth ``L`` holds ``L + 1`` weight matrices
``W^0 (p x k_1), W^1 (k_1 x k_2), ..., W^L (k_L x K)``.  Inputs are row
vectors multiplied on the left, so for a batch ``X`` of shape ``(n, p)``

    N^{t+1} = O^t @ W^t,    O^{t+1} = sigma_{t+1}(N^{t+1}),    O^0 = X

and the output is ``O^{L+1}``.  Every activation satisfies
``sigma(z) = sigma'(z) z``; the derivative at 0 is taken as the slope on the
negative side (0 for ReLU), which keeps that identity exact at the kink.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .linalg import as_matrix

__all__ = [
    "Activation",
    "RELU",
    "LINEAR",
    "leaky_relu",
    "Network",
    "ForwardTrace",
    "forward",
    "predict",
    "init_network",
    "nodewise_rescale",
    "scale_layer",
    "convex_combine",
    "flatten",
    "unflatten",
    "num_params",
    "to_json",
    "from_json",
    "save_network",
    "load_network",
    "NETWORK_SCHEMA_VERSION",
]

NETWORK_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Activation:
    """Piecewise-linear activation ``z if z > 0 else slope * z``.

    ``slope`` is 0 for ReLU, alpha for leaky ReLU and 1 for linear.
    """

    name: str
    slope: float = 0.0

    def __post_init__(self):
        if self.name not in ("relu", "leaky_relu", "linear"):
            raise ValueError(f"unknown activation {self.name!r}")
        if not 0.0 <= self.slope <= 1.0:
            raise ValueError("slope must lie in [0, 1]")

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.slope == 1.0:
            return z.copy()
        return np.where(z > 0, z, self.slope * z)

    def derivative(self, z):
        z = np.asarray(z, dtype=np.float64)
        return np.where(z > 0, 1.0, self.slope)

    @property
    def label(self) -> str:
        if self.name == "leaky_relu":
            return f"leaky_relu:{self.slope!r}"
        return self.name

    @classmethod
    def parse(cls, spec) -> "Activation":
        """Build from ``"relu"``, ``"linear"`` or ``"leaky_relu:<alpha>"``."""
        if isinstance(spec, Activation):
            return spec
        name, _, arg = str(spec).partition(":")
        if name == "relu":
            return RELU
        if name == "linear":
            return LINEAR
        if name == "leaky_relu":
            return leaky_relu(float(arg) if arg else 0.01)
        raise ValueError(f"unknown activation {spec!r}")


RELU = Activation("relu", 0.0)
LINEAR = Activation("linear", 1.0)


def leaky_relu(alpha: float) -> Activation:
    if not 0.0 < alpha <= 1.0:
        raise ValueError("leaky ReLU alpha must lie in (0, 1]")
    return Activation("leaky_relu", float(alpha))


@dataclass(frozen=True, eq=False)
class Network:
    """Weights plus one activation per layer (layers ``1..L+1``).

    ``frozen`` optionally holds one boolean array per weight matrix marking
    hard-coded entries that trainers must leave untouched.
    """

    weights: tuple
    activations: tuple
    frozen: tuple | None = None

    def __post_init__(self):
        ws = tuple(as_matrix(W) for W in self.weights)
        if not ws:
            raise ValueError("a network needs at least one weight matrix")
        for a, b in zip(ws[:-1], ws[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError(f"adjacent weights do not chain: {a.shape} then {b.shape}")
        acts = tuple(Activation.parse(a) for a in self.activations)
        if len(acts) != len(ws):
            raise ValueError("need one activation per weight matrix")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "activations", acts)
        if self.frozen is not None:
            fz = tuple(np.asarray(f, dtype=bool) for f in self.frozen)
            if len(fz) != len(ws) or any(f.shape != W.shape for f, W in zip(fz, ws)):
                raise ValueError("frozen masks must match weight shapes")
            object.__setattr__(self, "frozen", fz)

    @classmethod
    def from_weights(cls, weights, hidden="relu", output="linear", frozen=None):
        weights = list(weights)
        acts = [hidden] * (len(weights) - 1) + [output]
        return cls(tuple(weights), tuple(acts), frozen)

    @property
    def depth(self) -> int:
        """Number of hidden layers L."""
        return len(self.weights) - 1

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def hidden_activation(self) -> Activation:
        return self.activations[0] if self.depth else self.activations[-1]

    @property
    def output_activation(self) -> Activation:
        return self.activations[-1]

    def with_weights(self, weights) -> "Network":
        return replace(self, weights=tuple(weights))

    def scaled(self, r: float) -> "Network":
        """The network with every weight multiplied by ``r``."""
        return self.with_weights([r * W for W in self.weights])

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (self.activations == other.activations
                and len(self.weights) == len(other.weights)
                and all(a.shape == b.shape and np.array_equal(a, b)
                        for a, b in zip(self.weights, other.weights)))


@dataclass
class ForwardTrace:
    """Intermediate values of a forward pass.

    ``pre[t]`` is ``N^{t+1}``, ``post[t]`` is ``O^{t+1}`` and ``masks[t]`` is
    the diagonal of ``D^{t+1}``, for ``t = 0..L``.  Arrays are 1-D for a
    single input and 2-D (one row per example) for a batch.
    """

    input: np.ndarray
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    masks: list = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]

    def layer_output(self, t: int) -> np.ndarray:
        """``O^t`` for ``t = 0..L+1``."""
        return self.input if t == 0 else self.post[t - 1]


def forward(net: Network, x) -> ForwardTrace:
    """Evaluate the network on one input (1-D) or a batch (rows of 2-D)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_dim:
        raise ValueError(f"input of shape {x.shape} does not match input "
                         f"dimension {net.input_dim}")
    trace = ForwardTrace(input=x)
    O = x
    for W, act in zip(net.weights, net.activations):
        N = O @ W
        O = act(N)
        trace.pre.append(N)
        trace.post.append(O)
        trace.masks.append(act.derivative(N))
    return trace


def predict(net: Network, X) -> np.ndarray:
    """Outputs only, shape ``(n, K)`` for a batch or ``(K,)`` for one input."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != net.input_dim:
        raise ValueError(f"input of shape {X.shape} does not match input "
                         f"dimension {net.input_dim}")
    O = X
    for W, act in zip(net.weights, net.activations):
        O = act(O @ W)
    return O


def init_network(dims, hidden="relu", output="linear", seed=0) -> Network:
    """Uniform init on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, seeded."""
    rng = np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    return Network.from_weights(weights, hidden, output)


def nodewise_rescale(net: Network, layer: int, node: int, c: float) -> Network:
    """Scale unit ``node`` of hidden layer ``layer`` (1..L) by ``c > 0``.

    The incoming column of ``W^{layer-1}`` is multiplied by ``c`` and the
    outgoing row of ``W^{layer}`` divided by ``c``.  For positively
    homogeneous activations the realized function does not change.
    """
    if not 1 <= layer <= net.depth:
        raise ValueError(f"layer must be in 1..{net.depth}, got {layer}")
    if not c > 0:
        raise ValueError("rescaling constant must be positive")
    if not 0 <= node < net.weights[layer].shape[0]:
        raise ValueError(f"node {node} out of range for layer {layer}")
    ws = [W.copy() for W in net.weights]
    ws[layer - 1][:, node] *= c
    ws[layer][node, :] /= c
    return net.with_weights(ws)


def scale_layer(net: Network, t: int, c: float) -> Network:
    """Multiply ``W^t`` by ``c``."""
    ws = list(net.weights)
    ws[t] = c * ws[t]
    return net.with_weights(ws)


def _block_diag(A, B):
    out = np.zeros((A.shape[0] + B.shape[0], A.shape[1] + B.shape[1]))
    out[:A.shape[0], :A.shape[1]] = A
    out[A.shape[0]:, A.shape[1]:] = B
    return out


def convex_combine(net1: Network, net2: Network, lam: float) -> Network:
    """Depth-(L+1) network realizing ``lam * f1 + (1 - lam) * f2`` exactly.

    The two networks run side by side with all cross-block weights
    hard-coded to zero (recorded in ``frozen``); their former scalar
    outputs keep their own output activation and feed a new linear output
    unit with weights ``(lam, 1 - lam)``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    if net1.depth != net2.depth:
        raise ValueError("networks must share the same depth")
    if net1.input_dim != net2.input_dim:
        raise ValueError("networks must share the input dimension")
    if net1.output_dim != 1 or net2.output_dim != 1:
        raise ValueError("convex_combine needs scalar-output networks")
    if net1.activations != net2.activations:
        raise ValueError("networks must share activations layer by layer")

    weights = [np.hstack([net1.weights[0], net2.weights[0]])]
    frozen = [np.zeros(weights[0].shape, dtype=bool)]
    for W1, W2 in zip(net1.weights[1:], net2.weights[1:]):
        B = _block_diag(W1, W2)
        mask = np.ones(B.shape, dtype=bool)
        mask[:W1.shape[0], :W1.shape[1]] = False
        mask[W1.shape[0]:, W1.shape[1]:] = False
        weights.append(B)
        frozen.append(mask)
    weights.append(np.array([[lam], [1.0 - lam]]))
    frozen.append(np.zeros((2, 1), dtype=bool))
    acts = tuple(net1.activations) + (LINEAR,)
    return Network(tuple(weights), acts, tuple(frozen))


def num_params(dims) -> int:
    return int(sum(a * b for a, b in zip(dims[:-1], dims[1:])))


def flatten(net: Network) -> np.ndarray:
    """Parameter vector: layers in order, each matrix in column-major order."""
    return np.concatenate([W.ravel(order="F") for W in net.weights])


def unflatten(net: Network, theta) -> Network:
    """Inverse of :func:`flatten`, using ``net`` for shapes and activations."""
    theta = np.asarray(theta, dtype=np.float64).ravel()
    sizes = [W.size for W in net.weights]
    if theta.size != sum(sizes):
        raise ValueError(f"expected {sum(sizes)} parameters, got {theta.size}")
    ws, start = [], 0
    for W, n in zip(net.weights, sizes):
        ws.append(theta[start:start + n].reshape(W.shape, order="F"))
        start += n
    return net.with_weights(ws)


def to_json(net: Network) -> dict:
    doc = {
        "schema": NETWORK_SCHEMA_VERSION,
        "dims": net.dims,
        "activation": net.hidden_activation.label,
        "output_activation": net.output_activation.label,
        "activations": [a.label for a in net.activations],
        "weights": [W.tolist() for W in net.weights],
    }
    if net.frozen is not None:
        doc["frozen"] = [f.astype(int).tolist() for f in net.frozen]
    return doc


def from_json(doc: dict) -> Network:
    if doc.get("schema") != NETWORK_SCHEMA_VERSION:
        raise ValueError(f"unsupported network schema {doc.get('schema')!r}")
    weights = [np.array(W, dtype=np.float64).reshape(a, b) for W, a, b in
               zip(doc["weights"], doc["dims"][:-1], doc["dims"][1:])]
    if "activations" in doc:
        acts = doc["activations"]
    else:
        acts = ([doc["activation"]] * (len(weights) - 1)
                + [doc.get("output_activation", "linear")])
    frozen = doc.get("frozen")
    if frozen is not None:
        frozen = [np.array(f, dtype=bool).reshape(W.shape)
                  for f, W in zip(frozen, weights)]
    net = Network(tuple(weights), tuple(acts), frozen)
    if net.dims != list(doc["dims"]):
        raise ValueError("dims do not match the weight shapes")
    return net


def save_network(net: Network, path) -> None:
    Path(path).write_text(json.dumps(to_json(net), indent=1))


def load_network(path) -> Network:
    return from_json(json.loads(Path(path).read_text()))
