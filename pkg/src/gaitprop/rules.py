"""Learning rules: backprop, target propagation, and incremental variants.

All rules are pure functions of (network, trace, output target, config) and
return per-layer weight updates that already point in the descent direction;
the optimizer applies the learning rate.

Targets are represented both as absolute vectors and as gaps (forward
activation minus target). The incremental rules compute the gap recursion
directly: a gap at the deepest layer of a gamma=1e-3, depth-4 network is of
order gamma^3 = 1e-9 relative to the activations, so forming absolute
targets first and subtracting would lose half the mantissa to cancellation.
The gap recursion keeps every intermediate at the scale of the gap itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .network import ForwardTrace, Network, _as_columns, augmented_inverse


@dataclass(frozen=True)
class IncrementalConfig:
    """Blend factor for incremental targets and update rescaling.

    ``gamma`` is the fraction of the distance toward the target that the
    blended activation moves per layer; ``scale_updates`` restores update
    magnitudes by the accumulated gamma^-(depth - layer - 1) factor so they
    are directly comparable with backprop updates.
    """

    gamma: float = 1e-3
    scale_updates: bool = True

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")


@dataclass
class TargetStack:
    """Per-layer targets over forward units, plus their gaps from the trace.

    ``gaps[l] = forward_part(l) - targets[l]`` is the numerically primary
    representation (see module docstring). ``sign_flips`` counts, per
    sample, how many units crossed the leaky-ReLU kink while blending; zero
    means the piecewise-linear inversion was exact for that sample.
    """

    flavor: str
    targets: list[np.ndarray] = field(default_factory=list)
    gaps: list[np.ndarray] = field(default_factory=list)
    sign_flips: np.ndarray | None = None


@dataclass
class UpdateSet:
    """Per-layer weight updates (descent direction, learning rate excluded)."""

    rule: str
    deltas: list[np.ndarray] = field(default_factory=list)
    sample_count: int = 1


def _check_output_target(trace: ForwardTrace, t_out: np.ndarray) -> np.ndarray:
    width = trace.forward_widths[-1]
    t = _as_columns(t_out, width, "output target")
    if t.shape[1] != trace.n_samples:
        raise ValueError(
            f"target batch {t.shape[1]} != trace batch {trace.n_samples}"
        )
    return t


def _pad_rows(x: np.ndarray, total: int) -> np.ndarray:
    """Extend a forward-coordinate block with zero rows for auxiliary units."""
    if x.shape[0] == total:
        return x
    out = np.zeros((total, x.shape[1]))
    out[: x.shape[0]] = x
    return out


def bp_updates(net: Network, trace: ForwardTrace, t_out: np.ndarray) -> UpdateSet:
    """Gradient-descent updates for the quadratic output loss.

    Auxiliary output units receive no error; at every layer the backward
    product is restricted to the forward sub-block, mirroring the forward
    pass. Batched traces yield the mean of the per-sample updates.
    """
    t = _check_output_target(trace, t_out)
    n = trace.n_samples
    deltas: list[np.ndarray] = [np.empty(0)] * trace.depth
    err = trace.output() - t
    for l in range(trace.depth - 1, -1, -1):
        layer = net.layers[l]
        d = trace.gains[l] * _pad_rows(err, layer.total_width)
        deltas[l] = -(d @ trace.layer_input(l).T) / n
        if l > 0:
            err = layer.weight.T @ d
    return UpdateSet(rule="bp", deltas=deltas, sample_count=n)


def tp_targets(net: Network, trace: ForwardTrace, t_out: np.ndarray) -> TargetStack:
    """Layer-wise targets from exact inversion of the output target.

    Auxiliary activations are copied from the trace at every step, so the
    inversion stays square.
    """
    t = _check_output_target(trace, t_out)
    depth = trace.depth
    targets: list[np.ndarray] = [np.empty(0)] * depth
    targets[depth - 1] = t
    for l in range(depth - 1, 0, -1):
        pre_image = augmented_inverse(net.layers[l], targets[l], trace.aux_part(l))
        targets[l - 1] = pre_image
    gaps = [trace.forward_part(l) - targets[l] for l in range(depth)]
    return TargetStack(
        flavor="tp",
        targets=targets,
        gaps=gaps,
        sign_flips=np.zeros(trace.n_samples, dtype=np.int64),
    )


def _inverse_displacement(act: np.ndarray, disp: np.ndarray, slope: float):
    """Exact f^-1(act) - f^-1(act - disp) for the piecewise-linear activation.

    Computed branch-wise so that when both points share a linear piece the
    result is disp times the inverse slope with no cancellation. Returns the
    displacement in pre-activation space and the per-entry kink-crossing
    mask.
    """
    moved = act - disp
    before = act >= 0
    after = moved >= 0
    crossed = before != after
    v = np.where(before, np.where(after, disp, act - moved / slope),
                 np.where(after, act / slope - moved, disp / slope))
    return v, crossed


def _incremental_stack(
    net: Network, trace: ForwardTrace, t_out: np.ndarray, blend_gains, flavor: str
) -> TargetStack:
    """Shared gap recursion for the incremental rules.

    ``blend_gains(l)`` returns the per-unit blend factor over layer l's
    forward coordinates. The blended activation is displaced from the
    forward pass by blend * gap; propagating the displacement through the
    exact inverse gives the next gap directly.
    """
    t = _check_output_target(trace, t_out)
    depth = trace.depth
    gaps: list[np.ndarray] = [np.empty(0)] * depth
    gaps[depth - 1] = trace.output() - t
    flips = np.zeros(trace.n_samples, dtype=np.int64)
    for l in range(depth - 1, 0, -1):
        layer = net.layers[l]
        disp = _pad_rows(blend_gains(l) * gaps[l], layer.total_width)
        if layer.activation.kind == "linear":
            v = disp
        else:
            v, crossed = _inverse_displacement(
                trace.activations[l], disp, layer.activation.slope
            )
            flips += crossed.sum(axis=0)
        gaps[l - 1] = layer.weight_inv @ v
    targets = [trace.forward_part(l) - gaps[l] for l in range(depth)]
    return TargetStack(flavor=flavor, targets=targets, gaps=gaps, sign_flips=flips)


def itp_targets(
    net: Network, trace: ForwardTrace, t_out: np.ndarray, cfg: IncrementalConfig
) -> TargetStack:
    """Incremental targets: blend a fixed fraction gamma toward the target
    before each inversion. gamma = 1 degenerates to plain target propagation."""
    return _incremental_stack(net, trace, t_out, lambda l: cfg.gamma, "itp")


def gait_targets(
    net: Network, trace: ForwardTrace, t_out: np.ndarray, cfg: IncrementalConfig
) -> TargetStack:
    """Gradient-adjusted incremental targets: the blend fraction is
    gamma times the squared activation gain, per unit."""
    for l in range(1, trace.depth):
        fwd = trace.forward_widths[l]
        worst = cfg.gamma * float(np.max(trace.gains[l][:fwd] ** 2)) if fwd else 0.0
        if worst >= 1.0:
            raise ValueError(
                f"gamma {cfg.gamma} too large for layer {l} gains (blend {worst:.3g} >= 1)"
            )

    def blend(l: int) -> np.ndarray:
        return cfg.gamma * trace.gains[l][: trace.forward_widths[l]] ** 2

    return _incremental_stack(net, trace, t_out, blend, "gait")


def _local_updates(
    trace: ForwardTrace, stack: TargetStack, rule: str, layer_scale=None
) -> UpdateSet:
    n = trace.n_samples
    deltas = []
    for l in range(trace.depth):
        width = trace.activations[l].shape[0]
        d = trace.gains[l] * _pad_rows(stack.gaps[l], width)
        delta = -(d @ trace.layer_input(l).T) / n
        if layer_scale is not None:
            delta = delta * layer_scale(l)
        deltas.append(delta)
    return UpdateSet(rule=rule, deltas=deltas, sample_count=n)


def tp_updates(trace: ForwardTrace, targets: TargetStack) -> UpdateSet:
    """Local delta-rule updates toward propagated targets; auxiliary rows
    stay exactly zero because auxiliary targets equal the forward pass."""
    if targets.flavor != "tp":
        raise ValueError(f"expected tp targets, got {targets.flavor!r}")
    return _local_updates(trace, targets, "tp")


def _scaled_incremental_updates(
    trace: ForwardTrace, targets: TargetStack, cfg: IncrementalConfig, flavor: str
) -> UpdateSet:
    if targets.flavor != flavor:
        raise ValueError(f"expected {flavor} targets, got {targets.flavor!r}")
    scale = None
    if cfg.scale_updates:
        top = trace.depth - 1
        scale = lambda l: cfg.gamma ** -(top - l)
    return _local_updates(trace, targets, flavor, scale)


def itp_updates(
    trace: ForwardTrace, targets: TargetStack, cfg: IncrementalConfig
) -> UpdateSet:
    """Updates from incremental targets; optionally rescaled by
    gamma^-(depth-1-l) so magnitudes match backprop layer by layer."""
    return _scaled_incremental_updates(trace, targets, cfg, "itp")


def gait_updates(
    trace: ForwardTrace, targets: TargetStack, cfg: IncrementalConfig
) -> UpdateSet:
    """Updates from gradient-adjusted targets, rescaled as for itp_updates.
    With orthogonal weights and no kink crossings these equal bp_updates."""
    return _scaled_incremental_updates(trace, targets, cfg, "gait")


def loss_to_target(y_out: np.ndarray, loss_gradient: np.ndarray) -> np.ndarray:
    """Rewrite an arbitrary output-loss gradient as a quadratic-style target.

    Feeding the returned target to any rule reproduces the gradient of the
    original loss, since output - target equals the loss gradient.
    """
    y = np.asarray(y_out, dtype=np.float64)
    g = np.asarray(loss_gradient, dtype=np.float64)
    if y.shape != g.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {g.shape}")
    return y - g


def ortho_penalty(w: np.ndarray, lam: float, mode: str = "mask") -> float:
    """Row-orthogonality penalty lambda * ||W W^T (J - I)||^2.

    ``mode="mask"`` reads (J - I) as an elementwise mask that discards the
    diagonal of W W^T (the reading that directly penalizes row cross
    products); ``mode="product"`` reads it as a matrix product.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("penalty expects a square matrix")
    gram = w @ w.T
    k = 1.0 - np.eye(w.shape[0])
    if mode == "mask":
        off = gram * k
    elif mode == "product":
        off = gram @ k
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return float(lam * np.sum(off * off))


def ortho_reg_grad(w: np.ndarray, lam: float, mode: str = "mask") -> np.ndarray:
    """Gradient of ortho_penalty with respect to W (same mode semantics)."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("gradient expects a square matrix")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if lam == 0.0:
        return np.zeros_like(w)
    gram = w @ w.T
    k = 1.0 - np.eye(w.shape[0])
    if mode == "mask":
        return 4.0 * lam * ((gram * k) @ w)
    if mode == "product":
        k2 = k @ k
        x = gram @ k2 + k2 @ gram
        return 2.0 * lam * (x @ w)
    raise ValueError(f"unknown mode {mode!r}")


class CorrectionMatrices(NamedTuple):
    """Linear operators mapping scaled incremental updates onto backprop
    updates, and the gamma rescaling they assume (reported separately)."""

    itp: np.ndarray
    gait: np.ndarray
    scale: float


def correction_matrices(
    net: Network, trace: ForwardTrace, layer_index: int, cfg: IncrementalConfig
) -> CorrectionMatrices:
    """Exact operators relating incremental updates at one layer to backprop.

    The gait operator collapses to the identity when all weight matrices are
    orthogonal; the itp operator does not, which is what motivates the
    gain-squared blend. Requires a single-sample trace (the operators are
    activation-dependent) and auxiliary-free layers strictly between
    ``layer_index`` and the output, so the products stay square.
    """
    depth = trace.depth
    if not 0 <= layer_index < depth:
        raise ValueError(f"layer_index {layer_index} out of range")
    if trace.n_samples != 1:
        raise ValueError("correction matrices are defined per sample")
    for l in range(layer_index, depth - 1):
        if net.layers[l].forward_width != net.layers[l].total_width:
            raise ValueError(
                "correction matrices need auxiliary-free layers between "
                f"layer_index and the output (layer {l} has auxiliaries)"
            )
    width = net.layers[layer_index].total_width
    back = np.eye(width)
    fwd_itp = np.eye(width)
    fwd_gait = np.eye(width)
    for j in range(layer_index + 1, depth):
        w = net.layers[j].weight
        a = trace.gains[j][:, 0]
        back = back @ (w.T * a)
        fwd_itp = (a[:, None] * w) @ fwd_itp
        fwd_gait = (w / a[:, None]) @ fwd_gait
    a_here = trace.gains[layer_index][:, 0]
    sandwich = lambda middle: (a_here[:, None] * middle) / a_here[None, :]
    scale = float(cfg.gamma) ** -(depth - 1 - layer_index)
    return CorrectionMatrices(
        itp=sandwich(back @ fwd_itp),
        gait=sandwich(back @ fwd_gait),
        scale=scale,
    )
