"""LSTM and simple RNN cells and the many-to-one sequence fold.

Gate kernels act on the concatenation ``[h, x]`` (previous output first),
so each kernel has ``hidden + in_dim`` rows. Cell parameters are plain
mappings using the keys ``W_f, b_f, W_u, b_u, W_c, b_c, W_o, b_o`` for the
LSTM and ``W, b`` for the RNN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from . import numcore as nc
from .numcore import ShapeError, Tensor

__all__ = [
    "LSTM_GATES",
    "LstmState",
    "lstm_parameter_count",
    "rnn_parameter_count",
    "lstm_param_shapes",
    "rnn_param_shapes",
    "lstm_step",
    "rnn_step",
    "sequence_forward",
]

LSTM_GATES = ("f", "u", "c", "o")
GATE_VARIANTS = ("sigmoid_output", "tanh_output")


@dataclass(frozen=True)
class LstmState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, hidden: int, batch: int | None = None) -> "LstmState":
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(nc.zeros(shape), nc.zeros(shape))


def _check_dims(in_dim: int, hidden: int):
    if in_dim < 1 or hidden < 1:
        raise ValueError(f"in_dim and hidden must be positive (got {in_dim}, {hidden})")


def lstm_parameter_count(in_dim: int, hidden: int) -> int:
    _check_dims(in_dim, hidden)
    return 4 * ((in_dim + hidden) * hidden + hidden)


def rnn_parameter_count(in_dim: int, hidden: int) -> int:
    _check_dims(in_dim, hidden)
    return (in_dim + hidden) * hidden + hidden


def lstm_param_shapes(in_dim: int, hidden: int) -> dict[str, tuple[int, ...]]:
    _check_dims(in_dim, hidden)
    shapes = {}
    for g in LSTM_GATES:
        shapes[f"W_{g}"] = (hidden + in_dim, hidden)
        shapes[f"b_{g}"] = (hidden,)
    return shapes


def rnn_param_shapes(in_dim: int, hidden: int) -> dict[str, tuple[int, ...]]:
    _check_dims(in_dim, hidden)
    return {"W": (hidden + in_dim, hidden), "b": (hidden,)}


def _validate(params: Mapping[str, Tensor], shapes: dict):
    for k, shp in shapes.items():
        if k not in params:
            raise ShapeError(f"missing recurrent parameter {k!r}")
        if params[k].shape != shp:
            raise ShapeError(f"{k}: shape {params[k].shape}, expected {shp}")


def _hidden_of(params, key) -> int:
    return params[key].shape[1]


def _affine(hx: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return nc.bias_add(nc.matmul(hx, W), b)


def lstm_step(params: Mapping[str, Tensor], state: LstmState, x_t: Tensor,
              gate_variant: str = "sigmoid_output") -> LstmState:
    """One LSTM step on ``(in_dim,)`` or ``(B, in_dim)`` input.

    Written gate by gate, without fusion. ``gate_variant="tanh_output"``
    uses tanh instead of the sigmoid for the output gate.
    """
    if gate_variant not in GATE_VARIANTS:
        raise ValueError(f"unknown gate variant {gate_variant!r}")
    squeeze = x_t.ndim == 1
    if squeeze:
        x_t = nc.reshape(x_t, (1,) + x_t.shape)
        state = LstmState(nc.reshape(state.h, (1,) + state.h.shape),
                          nc.reshape(state.c, (1,) + state.c.shape))
    hidden = _hidden_of(params, "W_f")
    _validate(params, lstm_param_shapes(x_t.shape[1], hidden))
    if state.h.shape != (x_t.shape[0], hidden) or state.c.shape != state.h.shape:
        raise ShapeError(f"state {state.h.shape}/{state.c.shape} does not match batch/hidden")
    hx = nc.concat([state.h, x_t], axis=1)
    f = nc.sigmoid(_affine(hx, params["W_f"], params["b_f"]))
    u = nc.sigmoid(_affine(hx, params["W_u"], params["b_u"]))
    cand = nc.tanh(_affine(hx, params["W_c"], params["b_c"]))
    c = nc.add(nc.mul(f, state.c), nc.mul(u, cand))
    o_pre = _affine(hx, params["W_o"], params["b_o"])
    o = nc.sigmoid(o_pre) if gate_variant == "sigmoid_output" else nc.tanh(o_pre)
    h = nc.mul(o, nc.tanh(c))
    if squeeze:
        return LstmState(nc.reshape(h, (hidden,)), nc.reshape(c, (hidden,)))
    return LstmState(h, c)


def rnn_step(params: Mapping[str, Tensor], h: Tensor, x_t: Tensor) -> Tensor:
    """``tanh([h, x] @ W + b)`` on ``(in_dim,)`` or ``(B, in_dim)`` input."""
    squeeze = x_t.ndim == 1
    if squeeze:
        x_t = nc.reshape(x_t, (1,) + x_t.shape)
        h = nc.reshape(h, (1,) + h.shape)
    hidden = _hidden_of(params, "W")
    _validate(params, rnn_param_shapes(x_t.shape[1], hidden))
    if h.shape != (x_t.shape[0], hidden):
        raise ShapeError(f"state {h.shape} does not match batch/hidden")
    out = nc.tanh(_affine(nc.concat([h, x_t], axis=1), params["W"], params["b"]))
    return nc.reshape(out, (hidden,)) if squeeze else out


def sequence_forward(cell: str, params: Mapping[str, Tensor], inputs: Tensor,
                     gate_variant: str = "sigmoid_output") -> Tensor:
    """Fold a cell over ``(d, in_dim)`` or ``(B, d, in_dim)``; return the last output.

    The input projections of all steps are computed in one matrix product
    and the four LSTM gates share one recurrent product per step; the
    arithmetic is the same as repeated :func:`lstm_step` calls.
    """
    if cell not in ("lstm", "rnn"):
        raise ValueError(f"unknown cell {cell!r}")
    if gate_variant not in GATE_VARIANTS:
        raise ValueError(f"unknown gate variant {gate_variant!r}")
    squeeze = inputs.ndim == 2
    if squeeze:
        inputs = nc.reshape(inputs, (1,) + inputs.shape)
    if inputs.ndim != 3:
        raise ShapeError(f"expected (d, in_dim) or (B, d, in_dim), got {inputs.shape}")
    B, d, in_dim = inputs.shape
    if d < 1:
        raise ShapeError("empty input sequence")

    if cell == "lstm":
        hidden = _hidden_of(params, "W_f")
        _validate(params, lstm_param_shapes(in_dim, hidden))
        W = nc.concat([params[f"W_{g}"] for g in LSTM_GATES], axis=1)
        b = nc.concat([params[f"b_{g}"] for g in LSTM_GATES], axis=0)
    else:
        hidden = _hidden_of(params, "W")
        _validate(params, rnn_param_shapes(in_dim, hidden))
        W, b = params["W"], params["b"]
    width = W.shape[1]
    W_h = nc.slice_axis(W, 0, hidden, axis=0)
    W_x = nc.slice_axis(W, hidden, hidden + in_dim, axis=0)
    xz = nc.matmul(nc.reshape(inputs, (B * d, in_dim)), W_x)
    xz = nc.bias_add(nc.reshape(xz, (B, d, width)), b)

    h = nc.zeros((B, hidden))
    c = nc.zeros((B, hidden))
    for t in range(d):
        z = nc.add(nc.matmul(h, W_h), nc.take(xz, t, axis=1))
        if cell == "rnn":
            h = nc.tanh(z)
            continue
        f = nc.sigmoid(nc.slice_axis(z, 0, hidden, axis=1))
        u = nc.sigmoid(nc.slice_axis(z, hidden, 2 * hidden, axis=1))
        cand = nc.tanh(nc.slice_axis(z, 2 * hidden, 3 * hidden, axis=1))
        o_pre = nc.slice_axis(z, 3 * hidden, 4 * hidden, axis=1)
        o = nc.sigmoid(o_pre) if gate_variant == "sigmoid_output" else nc.tanh(o_pre)
        c = nc.add(nc.mul(f, c), nc.mul(u, cand))
        h = nc.mul(o, nc.tanh(c))
    return nc.reshape(h, (hidden,)) if squeeze else h
