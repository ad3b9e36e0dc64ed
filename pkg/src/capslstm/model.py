"""The four forecasting architectures, their parameter tables and checkpoints.

``capsnet_lstm``: Conv1D -> capsules -> routing -> LSTM -> Dense
``cnn_lstm``:     Conv1D -> MaxPool1D -> LSTM -> Dense
``lstm``/``rnn``: recurrent layer -> Dense

Every model maps a window ``(d, 1)`` to ``H`` normalized forecasts in one
pass.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import numcore as nc
from .capsule import CapsuleConfig, capsnet_forward
from .data import NormParams
from .layers import Conv1dSpec, DenseSpec, conv1d_forward, dense_forward, maxpool1d_forward
from .numcore import ParameterSet, Prng, ShapeError, Tensor
from .recurrent import lstm_param_shapes, rnn_param_shapes, sequence_forward

__all__ = [
    "KINDS",
    "ArchSpec",
    "LayerRow",
    "Checkpoint",
    "CheckpointError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedCheckpointError",
    "ShapeTableError",
    "param_shapes",
    "count_parameters",
    "build_model",
    "model_forward",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_bytes",
]

KINDS = ("capsnet_lstm", "lstm", "rnn", "cnn_lstm")


@dataclass(frozen=True)
class ArchSpec:
    kind: str
    d: int = 50
    H: int = 5
    hidden: int = 200
    conv: Conv1dSpec | None = None
    capsule: CapsuleConfig | None = None
    pool_size: int | None = None
    head: DenseSpec | None = None
    gate_variant: str = "sigmoid_output"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.head is None:
            object.__setattr__(self, "head", DenseSpec(self.H))
        if self.d < 1 or self.H < 1 or self.hidden < 1:
            raise ValueError("d, H and hidden must be positive")
        if self.head.units != self.H:
            raise ValueError(f"head has {self.head.units} units but H = {self.H}")
        if (self.capsule is not None) != (self.kind == "capsnet_lstm"):
            raise ValueError("capsule config is required for capsnet_lstm and only for it")
        if (self.conv is not None) != (self.kind in ("capsnet_lstm", "cnn_lstm")):
            raise ValueError("conv spec is required for capsnet_lstm/cnn_lstm and only for them")
        if (self.pool_size is not None) != (self.kind == "cnn_lstm"):
            raise ValueError("pool_size is required for cnn_lstm and only for it")
        if self.pool_size is not None and self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        if self.capsule is not None:
            self.capsule.n_capsules(self.conv.filters)
        if self.gate_variant not in ("sigmoid_output", "tanh_output"):
            raise ValueError(f"unknown gate variant {self.gate_variant!r}")

    @classmethod
    def create(cls, kind: str, d: int = 50, H: int = 5, *, hidden: int = 200, filters: int = 256,
               kernel_size: int = 2, primary_dim: int = 8, high_dim: int = 256,
               routing_iters: int = 3, pool_size: int = 2,
               gate_variant: str = "sigmoid_output") -> "ArchSpec":
        """Spec for ``kind`` with only the fields that kind uses filled in.

        Defaults reproduce the published layer configuration.
        """
        conv = Conv1dSpec(filters, kernel_size) if kind in ("capsnet_lstm", "cnn_lstm") else None
        caps = CapsuleConfig(primary_dim, high_dim, routing_iters) if kind == "capsnet_lstm" else None
        return cls(kind, d, H, hidden, conv, caps, pool_size if kind == "cnn_lstm" else None,
                   DenseSpec(H), gate_variant)

    # -- text form used inside checkpoints -------------------------------

    def to_fields(self) -> dict[str, str]:
        out = {"kind": self.kind, "d": str(self.d), "H": str(self.H),
               "hidden": str(self.hidden), "gate_variant": self.gate_variant}
        if self.conv is not None:
            out.update({"conv.filters": str(self.conv.filters),
                        "conv.kernel_size": str(self.conv.kernel_size),
                        "conv.stride": str(self.conv.stride),
                        "conv.activation": self.conv.activation})
        if self.capsule is not None:
            out.update({"capsule.primary_dim": str(self.capsule.primary_dim),
                        "capsule.high_dim": str(self.capsule.high_dim),
                        "capsule.routing_iters": str(self.capsule.routing_iters),
                        "capsule.epsilon": repr(self.capsule.epsilon)})
        if self.pool_size is not None:
            out["pool_size"] = str(self.pool_size)
        return out

    @classmethod
    def from_fields(cls, f: dict[str, str]) -> "ArchSpec":
        conv = caps = None
        if "conv.filters" in f:
            conv = Conv1dSpec(int(f["conv.filters"]), int(f["conv.kernel_size"]),
                              int(f["conv.stride"]), f["conv.activation"])
        if "capsule.primary_dim" in f:
            caps = CapsuleConfig(int(f["capsule.primary_dim"]), int(f["capsule.high_dim"]),
                                 int(f["capsule.routing_iters"]), float(f["capsule.epsilon"]))
        pool = int(f["pool_size"]) if "pool_size" in f else None
        H = int(f["H"])
        return cls(f["kind"], int(f["d"]), H, int(f["hidden"]), conv, caps, pool,
                   DenseSpec(H), f.get("gate_variant", "sigmoid_output"))


class LayerRow(NamedTuple):
    name: str
    output_shape: tuple
    parameters: int


def _recurrent_in_dim(spec: ArchSpec) -> int:
    if spec.kind == "capsnet_lstm":
        return spec.capsule.high_dim
    if spec.kind == "cnn_lstm":
        return spec.conv.filters
    return 1


def param_shapes(spec: ArchSpec) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape, in declared (initialization) order."""
    shapes: dict[str, tuple[int, ...]] = {}
    if spec.conv is not None:
        shapes["conv.kernel"] = spec.conv.kernel_shape(1)
        shapes["conv.bias"] = (spec.conv.filters,)
    if spec.capsule is not None:
        shapes["caps.W"] = spec.capsule.transform_shape(spec.conv.filters)
    in_dim = _recurrent_in_dim(spec)
    if spec.kind == "rnn":
        shapes.update({f"rnn.{k}": v for k, v in rnn_param_shapes(in_dim, spec.hidden).items()})
    else:
        shapes.update({f"lstm.{k}": v for k, v in lstm_param_shapes(in_dim, spec.hidden).items()})
    shapes["dense.kernel"] = (spec.hidden, spec.H)
    shapes["dense.bias"] = (spec.H,)
    return shapes


def count_parameters(spec: ArchSpec) -> list[LayerRow]:
    """Per-layer output shape and trainable parameter count, input layer first."""
    d = spec.d
    rows = [LayerRow("InputLayer", (d, 1), 0)]
    in_dim = _recurrent_in_dim(spec)
    if spec.conv is not None:
        N = spec.conv.filters
        rows.append(LayerRow("Conv1D", (d, N), spec.conv.parameter_count(1)))
    if spec.kind == "capsnet_lstm":
        cap = spec.capsule
        n = cap.n_capsules(N)
        rows += [LayerRow("Reshape", (d, n, cap.primary_dim), 0),
                 LayerRow("Lambda (Squashing)", (d, n, cap.primary_dim), 0),
                 LayerRow("Time-distributed Routing", (d, cap.high_dim), cap.parameter_count(N))]
    elif spec.kind == "cnn_lstm":
        rows.append(LayerRow("MaxPooling1D", (d, N), 0))
    if spec.kind == "rnn":
        rows.append(LayerRow("SimpleRNN", (spec.hidden,), (in_dim + spec.hidden + 1) * spec.hidden))
    else:
        rows.append(LayerRow("LSTM", (spec.hidden,), 4 * ((in_dim + spec.hidden + 1) * spec.hidden)))
    rows.append(LayerRow("Dense", (spec.H,), spec.head.parameter_count(spec.hidden)))
    return rows


def _glorot(prng: Prng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return prng.uniform(-limit, limit, shape)


def build_model(spec: ArchSpec, prng: Prng) -> ParameterSet:
    """Initialize all parameters, drawing from ``prng`` in declared order.

    Kernels use Glorot-uniform bounds; biases start at zero except the
    LSTM forget gate, which starts at one.
    """
    params = ParameterSet()
    for name, shape in param_shapes(spec).items():
        layer, key = name.split(".", 1)
        if name == "conv.kernel":
            k, c, n = shape
            value = _glorot(prng, shape, k * c, k * n)
        elif name == "caps.W":
            _, high, primary = shape
            value = _glorot(prng, shape, primary, high)
        elif key.startswith("W") or key == "kernel":
            value = _glorot(prng, shape, shape[0], shape[1])
        elif name == "lstm.b_f":
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = Tensor(value)
    return params


def _sub(params: ParameterSet, prefix: str) -> dict[str, Tensor]:
    p = prefix + "."
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


def model_forward(spec: ArchSpec, params: ParameterSet, x, trace: list | None = None) -> Tensor:
    """Forecast ``H`` normalized values from a ``(d, 1)`` window.

    Also accepts a batch ``(B, d, 1)`` (returning ``(B, H)``), and a bare
    ``(d,)`` or ``(B, d)`` array of values. When ``trace`` is a list it
    receives ``(layer name, per-sample output shape)`` tuples.
    """
    x = nc.as_tensor(x)
    if x.ndim == 1 or (x.ndim == 2 and x.shape[-1] != 1):
        x = nc.reshape(x, x.shape + (1,))
    squeeze = x.ndim == 2
    if squeeze:
        x = nc.reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[1:] != (spec.d, 1):
        raise ShapeError(f"model expects windows of shape ({spec.d}, 1), got {x.shape}")
    if trace is not None:
        trace.append(("InputLayer", x.shape[1:]))

    kind = spec.kind
    if kind == "capsnet_lstm":
        seq = capsnet_forward(x, spec.conv, params["conv.kernel"], params["conv.bias"],
                              params["caps.W"], spec.capsule, trace)
    elif kind == "cnn_lstm":
        seq = conv1d_forward(spec.conv, params["conv.kernel"], params["conv.bias"], x)
        if trace is not None:
            trace.append(("Conv1D", seq.shape[1:]))
        seq = maxpool1d_forward(spec.pool_size, 1, seq)
        if trace is not None:
            trace.append(("MaxPooling1D", seq.shape[1:]))
    else:
        seq = x

    cell = "rnn" if kind == "rnn" else "lstm"
    h = sequence_forward(cell, _sub(params, cell), seq, spec.gate_variant)
    if trace is not None:
        trace.append(("SimpleRNN" if cell == "rnn" else "LSTM", h.shape[1:]))
    y = dense_forward(spec.head, params["dense.kernel"], params["dense.bias"], h)
    if trace is not None:
        trace.append(("Dense", y.shape[1:]))
    return nc.reshape(y, (spec.H,)) if squeeze else y


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"C1DL"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Base class for unreadable checkpoints."""


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeTableError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    spec: ArchSpec
    norm: NormParams
    params: ParameterSet
    extras: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def forward(self, x) -> Tensor:
        return model_forward(self.spec, self.params, x)


def _text_block(ckpt: Checkpoint) -> str:
    fields = ckpt.spec.to_fields()
    fields["norm.min"] = repr(float(ckpt.norm.min))
    fields["norm.max"] = repr(float(ckpt.norm.max))
    for k, v in ckpt.extras.items():
        fields[f"extra.{k}"] = str(v)
    return "".join(f"{k}={v}\n" for k, v in fields.items())


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serialize: magic, u32 version, text block, u32 count, then tensors.

    All integers little-endian; strings are u32-length-prefixed UTF-8;
    each tensor is name, u32 rank, u64 dims, raw float64 values.
    """
    expected = param_shapes(ckpt.spec)
    if list(expected) != list(ckpt.params) or any(
            ckpt.params[k].shape != s for k, s in expected.items()):
        raise ShapeTableError("parameters do not match the architecture's shape table")
    text = _text_block(ckpt).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", ckpt.version), struct.pack("<I", len(text)), text,
             struct.pack("<I", len(ckpt.params))]
    for name, t in ckpt.params.items():
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", t.ndim),
                  struct.pack(f"<{t.ndim}Q", *t.shape), t.data.astype("<f8").tobytes()]
    return b"".join(parts)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    data = checkpoint_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(
                f"checkpoint truncated: need {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_checkpoint(path) -> Checkpoint:
    """Parse and validate a checkpoint; nothing is returned unless all checks pass."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.buf[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (bad magic bytes)")
    r.pos = 4
    version = r.u32()
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version}, supported {FORMAT_VERSION}")
    try:
        fields = dict(line.split("=", 1) for line in r.string().splitlines() if line)
        spec = ArchSpec.from_fields(fields)
        norm = NormParams(float(fields["norm.min"]), float(fields["norm.max"]))
    except (KeyError, ValueError, UnicodeDecodeError) as err:
        raise ShapeTableError(f"{path}: invalid header block: {err}") from None
    extras = {k[len("extra."):]: v for k, v in fields.items() if k.startswith("extra.")}

    expected = param_shapes(spec)
    count = r.u32()
    if count != len(expected):
        raise ShapeTableError(f"{path}: {count} tensors stored, architecture needs {len(expected)}")
    params = ParameterSet()
    for name, shape in expected.items():
        stored = r.string()
        rank = r.u32()
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank))
        if stored != name or dims != shape:
            raise ShapeTableError(f"{path}: tensor {stored!r} {dims} where {name!r} {shape} expected")
        n = int(np.prod(dims, dtype=np.int64))
        params[name] = Tensor(np.frombuffer(r.take(8 * n), dtype="<f8").reshape(dims))
    if r.pos != len(r.buf):
        raise ShapeTableError(f"{path}: {len(r.buf) - r.pos} trailing bytes after tensor table")
    return Checkpoint(spec, norm, params, extras, version)

