"""Shared builders for networks, controlled random matrices, and
finite-difference oracles."""

import numpy as np
import pytest

from gaitprop import Activation, Network, Layer, build_network, forward
from gaitprop.linalg import make_rng, orthogonal_init


def controlled_matrix(n: int, rng: np.random.Generator,
                      smin: float = 0.5, smax: float = 2.0) -> np.ndarray:
    """Random invertible matrix with singular values in [smin, smax].

    Keeps condition numbers bounded so product chains in the linear
    equivalence tests stay far from the float64 noise floor.
    """
    u = orthogonal_init(n, rng)
    v = orthogonal_init(n, rng)
    return u @ np.diag(rng.uniform(smin, smax, n)) @ v


def net_from_weights(weights, classes, kind="leaky_relu", alpha=0.01) -> Network:
    act = Activation(kind, alpha) if kind == "leaky_relu" else Activation("linear")
    layers = []
    for i, w in enumerate(weights):
        fwd = weights[i + 1].shape[0] if i + 1 < len(weights) else classes
        layers.append(Layer(np.asarray(w, dtype=np.float64), act, fwd))
    return Network(layers)


def make_net(widths, classes, kind="leaky_relu", alpha=0.01,
             init="orthogonal", seed=0) -> Network:
    act = Activation(kind, alpha) if kind == "leaky_relu" else Activation("linear")
    return build_network(list(widths), classes, act, init, seed)


def quadratic_loss(net: Network, x: np.ndarray, t: np.ndarray) -> float:
    out = forward(net, x).output()[:, 0]
    return float(0.5 * np.sum((out - t) ** 2))


def fd_weight_grad(loss_fn, net: Network, layer_idx: int, step: float = 1e-6
                   ) -> np.ndarray:
    """Central finite differences of a scalar loss w.r.t. one weight matrix."""
    layer = net.layers[layer_idx]
    base = layer.weight.copy()
    grad = np.zeros_like(base)
    for i in range(base.shape[0]):
        for j in range(base.shape[1]):
            w = base.copy()
            w[i, j] = base[i, j] + step
            layer.weight = w
            up = loss_fn()
            w[i, j] = base[i, j] - step
            layer.weight = w
            down = loss_fn()
            grad[i, j] = (up - down) / (2 * step)
    layer.weight = base
    return grad


def min_abs_preactivation(net: Network, x: np.ndarray) -> float:
    trace = forward(net, x)
    return min(float(np.abs(h).min()) for h in trace.pre_activations)


def sample_away_from_kinks(net: Network, rng: np.random.Generator,
                           margin: float = 1e-4, tries: int = 200) -> np.ndarray:
    """Input whose pre-activations all sit at least `margin` from zero, so
    finite differencing never steps across a leaky-ReLU kink."""
    for _ in range(tries):
        x = rng.uniform(0.0, 1.0, net.input_width)
        if min_abs_preactivation(net, x) > margin:
            return x
    raise AssertionError("no kink-free sample found; widen margin or reseed")


@pytest.fixture
def rng():
    return make_rng(12345)
