"""Adam optimizer operating on per-layer UpdateSets.

UpdateSets already point in the descent direction, so the optimizer treats
their negation as the gradient. Moments live per layer, matching weight
shapes exactly.
"""

from __future__ import annotations

import numpy as np

from .network import Network
from .rules import UpdateSet


class AdamState:
    """First/second moment buffers and the shared step counter."""

    def __init__(self, net: Network, eta: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.99, eps: float = 1e-8):
        if eta <= 0:
            raise ValueError("eta must be positive")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        self.eta = eta
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(layer.weight) for layer in net.layers]
        self.v = [np.zeros_like(layer.weight) for layer in net.layers]


def adam_step(state: AdamState, net: Network, updates: UpdateSet) -> tuple[AdamState, Network]:
    """One bias-corrected Adam step, applied to the network in place.

    Mutates ``state`` and ``net`` under the caller's exclusive access and
    returns them for chaining.
    """
    if len(updates.deltas) != net.depth:
        raise ValueError(
            f"update has {len(updates.deltas)} layers, network has {net.depth}"
        )
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for i, layer in enumerate(net.layers):
        delta = updates.deltas[i]
        if delta.shape != layer.weight.shape:
            raise ValueError(f"layer {i}: update shape {delta.shape} != weight "
                             f"shape {layer.weight.shape}")
        g = -delta
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        layer.weight = layer.weight - state.eta * m_hat / (np.sqrt(v_hat) + state.eps)
    return state, net
