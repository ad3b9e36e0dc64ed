"""Feed-forward layers: causal 1D convolution, 1D max pooling, dense head.

Sequence tensors are laid out (time, channel), optionally with a leading
batch axis: ``(d, C)`` or ``(B, d, C)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import ShapeError, Tensor

__all__ = [
    "Conv1dSpec",
    "DenseSpec",
    "conv1d_forward",
    "maxpool1d_forward",
    "dense_forward",
]


@dataclass(frozen=True)
class Conv1dSpec:
    filters: int
    kernel_size: int = 2
    stride: int = 1
    activation: str = "relu"
    padding: str = "causal"

    def __post_init__(self):
        if min(self.filters, self.kernel_size, self.stride) < 1:
            raise ValueError("filters, kernel_size and stride must be positive")
        if self.activation not in ("relu", "linear"):
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.padding != "causal":
            raise ValueError("only causal padding is supported")
        if self.stride != 1:
            raise ValueError("only stride 1 is supported")

    def kernel_shape(self, in_channels: int) -> tuple[int, int, int]:
        return (self.kernel_size, in_channels, self.filters)

    def parameter_count(self, in_channels: int) -> int:
        return self.filters * self.kernel_size * in_channels + self.filters


@dataclass(frozen=True)
class DenseSpec:
    units: int
    activation: str = "linear"

    def __post_init__(self):
        if self.units < 1:
            raise ValueError("units must be positive")
        if self.activation != "linear":
            raise ValueError("dense head is linear")

    def parameter_count(self, in_dim: int) -> int:
        return in_dim * self.units + self.units


def _batched(x: Tensor, rank: int) -> tuple[Tensor, bool]:
    if x.ndim == rank:
        return nc.reshape(x, (1,) + x.shape), True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected rank {rank} or {rank + 1} input, got {x.shape}")


def conv1d_forward(spec: Conv1dSpec, kernel: Tensor, bias: Tensor, x: Tensor) -> Tensor:
    """Causal cross-correlation followed by the spec's activation.

    ``kernel`` is ``(kernel_size, C, filters)`` and ``bias`` is
    ``(filters,)``. The input is left-padded with ``kernel_size - 1`` zeros,
    so output step ``t`` only sees inputs ``t - kernel_size + 1 .. t``.
    """
    x, squeeze = _batched(x, 2)
    B, d, C = x.shape
    K = spec.kernel_size
    if kernel.shape != spec.kernel_shape(C):
        raise ShapeError(f"conv1d: kernel {kernel.shape} does not fit input channels {C} "
                         f"(expected {spec.kernel_shape(C)})")
    if bias.shape != (spec.filters,):
        raise ShapeError(f"conv1d: bias {bias.shape}, expected ({spec.filters},)")
    if d < 1:
        raise ShapeError("conv1d: empty sequence")
    padded = nc.pad_left(x, K - 1, axis=1)
    # im2col: column block k holds x[t - (K-1) + k]
    cols = nc.concat([nc.slice_axis(padded, k, k + d, axis=1) for k in range(K)], axis=2)
    flat = nc.reshape(cols, (B * d, K * C))
    out = nc.matmul(flat, nc.reshape(kernel, (K * C, spec.filters)))
    out = nc.bias_add(nc.reshape(out, (B, d, spec.filters)), bias)
    if spec.activation == "relu":
        out = nc.relu(out)
    return nc.reshape(out, (d, spec.filters)) if squeeze else out


def maxpool1d_forward(pool_size: int, stride: int, x: Tensor) -> Tensor:
    """Sliding maximum over time with length-preserving end padding.

    The tail is padded by repeating the final step, so output length equals
    input length. The adjoint routes each output gradient to the first
    maximal input position of its window.
    """
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    if stride != 1:
        raise ValueError("only stride 1 is supported")
    xb, squeeze = _batched(x, 2)
    data = xb.data
    B, d, C = data.shape
    padded = np.concatenate([data, np.repeat(data[:, -1:, :], pool_size - 1, axis=1)], axis=1)
    windows = np.stack([padded[:, k:k + d, :] for k in range(pool_size)], axis=0)
    arg = windows.argmax(axis=0)  # argmax returns the first maximum
    value = np.take_along_axis(windows, arg[None], axis=0)[0]
    # map window offsets back to (clipped) source time indices
    src_t = np.minimum(np.arange(d)[None, :, None] + arg, d - 1)

    def backward(g):
        gx = np.zeros((B, d, C))
        bi = np.broadcast_to(np.arange(B)[:, None, None], g.shape)
        ci = np.broadcast_to(np.arange(C)[None, None, :], g.shape)
        np.add.at(gx, (bi, src_t, ci), g)
        return (gx,)

    out = nc.apply_op(value, (xb,), backward)
    return nc.reshape(out, (d, C)) if squeeze else out


def dense_forward(spec: DenseSpec, kernel: Tensor, bias: Tensor, x: Tensor) -> Tensor:
    """Affine map ``x @ kernel + bias`` on ``(k,)`` or ``(B, k)`` input."""
    xb, squeeze = _batched(x, 1)
    k = xb.shape[1]
    if kernel.shape != (k, spec.units):
        raise ShapeError(f"dense: input length {k} does not match kernel {kernel.shape}")
    if bias.shape != (spec.units,):
        raise ShapeError(f"dense: bias {bias.shape}, expected ({spec.units},)")
    out = nc.bias_add(nc.matmul(xb, kernel), bias)
    return nc.reshape(out, (spec.units,)) if squeeze else out
