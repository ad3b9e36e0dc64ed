"""1D capsule layer with time-distributed dynamic routing.

The convolutional feature map ``(d, N)`` is cut along channels into
``n = N / primary_dim`` primary capsules per time step, squashed, mapped to
``high_dim`` by one matrix per capsule index (shared over time), then routed
slice by slice so that output capsule ``t`` depends only on time step ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .layers import Conv1dSpec, conv1d_forward
from .numcore import ShapeError, Tensor

__all__ = [
    "CapsuleConfig",
    "RoutingState",
    "form_primary_capsules",
    "squash",
    "transform",
    "transform_capsules",
    "route",
    "route_slice",
    "capsnet_forward",
]

EPSILON = 1e-9


@dataclass(frozen=True)
class CapsuleConfig:
    primary_dim: int = 8
    high_dim: int = 256
    routing_iters: int = 3
    epsilon: float = EPSILON

    def __post_init__(self):
        if self.primary_dim < 1 or self.high_dim < 1:
            raise ValueError("capsule dimensions must be positive")
        if self.routing_iters < 1:
            raise ValueError("routing_iters must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def n_capsules(self, channels: int) -> int:
        if channels % self.primary_dim:
            raise ShapeError(f"{channels} channels do not split into capsules of {self.primary_dim}")
        return channels // self.primary_dim

    def transform_shape(self, channels: int) -> tuple[int, int, int]:
        return (self.n_capsules(channels), self.high_dim, self.primary_dim)

    def parameter_count(self, channels: int) -> int:
        return self.n_capsules(channels) * self.primary_dim * self.high_dim


@dataclass
class RoutingState:
    """Per-iteration logits and couplings, plus the routed output.

    ``logits[k]`` and ``couplings[k]`` are the values used in iteration
    ``k``; both have shape ``(..., n)``.
    """

    logits: list[np.ndarray] = field(default_factory=list)
    couplings: list[np.ndarray] = field(default_factory=list)
    output: np.ndarray | None = None


def form_primary_capsules(feature_map: Tensor, primary_dim: int) -> Tensor:
    """Reshape ``(..., N)`` into ``(..., N // primary_dim, primary_dim)``.

    Channel ``c`` becomes element ``c % primary_dim`` of capsule
    ``c // primary_dim``.
    """
    N = feature_map.shape[-1]
    if primary_dim < 1 or N % primary_dim:
        raise ShapeError(f"{N} channels are not divisible by capsule size {primary_dim}")
    return nc.reshape(feature_map, feature_map.shape[:-1] + (N // primary_dim, primary_dim))


def _squash_gain(norm, eps):
    # safe norm sqrt(|s|^2 + eps^2) keeps the norm law exact to O(eps^2);
    # the factors are arranged so huge norms never form inf * 0
    safe = np.hypot(norm, eps)
    ratio = norm / safe
    with np.errstate(over="ignore", divide="ignore"):
        damp = 1.0 / (1.0 + norm * norm)
        shrink = np.where(norm > 1.0, 1.0 / (norm + 1.0 / norm), norm * damp)
    gain = shrink * ratio
    # d(gain)/d(norm) / norm, finite at norm == 0
    slope = damp / safe * (2.0 * damp - ratio * ratio)
    return gain, slope


def _norm(S):
    # rescale before squaring so very large entries do not overflow
    m = np.max(np.abs(S), axis=-1, keepdims=True)
    m = np.where(m > 0, m, 1.0)
    return m * np.sqrt(np.sum((S / m) ** 2, axis=-1, keepdims=True))


def squash(s: Tensor, epsilon: float = EPSILON) -> Tensor:
    """Squash each vector along the last axis.

    ``v = |s|^2 / (1 + |s|^2) * s / sqrt(|s|^2 + epsilon^2)``; the direction
    is kept and the norm lands in [0, 1).
    """
    S = s.data
    norm = _norm(S)
    gain, slope = _squash_gain(norm, epsilon)

    def backward(g):
        return (gain * g + slope * np.sum(S * g, axis=-1, keepdims=True) * S,)

    return nc.apply_op(gain * S, (s,), backward)


def transform(v: Tensor, W: Tensor) -> Tensor:
    """``W @ v`` for one capsule: ``(high, primary) x (primary,) -> (high,)``."""
    if v.ndim != 1 or W.ndim != 2 or W.shape[1] != v.shape[0]:
        raise ShapeError(f"transform: matrix {W.shape} cannot act on capsule {v.shape}")
    return nc.reshape(nc.matmul(W, nc.reshape(v, (v.shape[0], 1))), (W.shape[0],))


def transform_capsules(v: Tensor, W: Tensor) -> Tensor:
    """Apply ``W[i]`` to capsule ``i`` of every slice.

    ``v`` is ``(B, d, n, primary)``, ``W`` is ``(n, high, primary)``;
    returns ``(B, d, n, high)``.
    """
    if v.ndim != 4 or W.ndim != 3 or v.shape[2] != W.shape[0] or v.shape[3] != W.shape[2]:
        raise ShapeError(f"transform: weights {W.shape} do not fit capsules {v.shape}")
    return nc.einsum("btip,iqp->btiq", v, W)


def route(u: Tensor, iterations: int, state: RoutingState | None = None) -> Tensor:
    """Dynamic routing applied independently to every slice.

    ``u`` is ``(B, d, n, high)``; returns ``(B, d, high)``. Each iteration
    takes couplings as the softmax of the logits over capsules, forms the
    coupling-weighted sum, then adds each capsule's agreement (dot product
    with that sum) to its logit. Logits start at zero and the result is not
    squashed.
    """
    if u.ndim != 4:
        raise ShapeError(f"route: expected (B, d, n, high), got {u.shape}")
    if u.shape[2] < 1:
        raise ShapeError("route: need at least one capsule per slice")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    b = nc.zeros(u.shape[:3])
    x = None
    for k in range(iterations):
        c = nc.softmax(b, axis=-1)
        x = nc.einsum("btn,btnq->btq", c, u)
        if state is not None:
            state.logits.append(b.numpy())
            state.couplings.append(c.numpy())
        if k < iterations - 1:
            # the final logit update never reaches the output
            b = nc.add(b, nc.einsum("btnq,btq->btn", u, x))
    if state is not None:
        state.output = x.numpy()
    return x


def route_slice(u: Tensor, iterations: int, state: RoutingState | None = None) -> Tensor:
    """Route one slice: ``n`` transformed capsules ``(n, high)`` -> ``(high,)``."""
    if u.ndim != 2:
        raise ShapeError(f"route_slice: expected (n, high), got {u.shape}")
    n, q = u.shape
    if n == 0:
        raise ShapeError("route_slice: no capsules")
    x = route(nc.reshape(u, (1, 1, n, q)), iterations, state)
    return nc.reshape(x, (q,))


def capsnet_forward(x: Tensor, conv_spec: Conv1dSpec, conv_kernel: Tensor, conv_bias: Tensor,
                    W: Tensor, config: CapsuleConfig, trace: list | None = None) -> Tensor:
    """Conv -> primary capsules -> squash -> transform -> per-slice routing.

    Accepts ``(d, 1)`` or ``(B, d, 1)``; returns ``(d, high)`` or
    ``(B, d, high)`` accordingly. When ``trace`` is a list, layer names and
    per-sample output shapes are appended to it.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = nc.reshape(x, (1,) + x.shape)
    fmap = conv1d_forward(conv_spec, conv_kernel, conv_bias, x)
    caps = form_primary_capsules(fmap, config.primary_dim)
    v = squash(caps, config.epsilon)
    expected = config.transform_shape(fmap.shape[-1])
    if W.shape != expected:
        raise ShapeError(f"transform weights {W.shape}, expected {expected}")
    u = transform_capsules(v, W)
    out = route(u, config.routing_iters)
    if trace is not None:
        trace += [("Conv1D", fmap.shape[1:]), ("Reshape", caps.shape[1:]),
                  ("Lambda (Squashing)", v.shape[1:]), ("Time-distributed Routing", out.shape[1:])]
    return nc.reshape(out, out.shape[1:]) if squeeze else out
