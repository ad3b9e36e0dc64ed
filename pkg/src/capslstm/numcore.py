"""Dense float64 tensors with a tape-based reverse-mode differentiator.

Every differentiable operation in the package goes through :func:`apply_op`,
which computes the forward value eagerly and, when a :class:`GradTape` is
active and one of the inputs is tracked, appends a record holding the
adjoint rule. ``GradTape.gradient`` replays those records in exact reverse
order.

Binary ops never broadcast implicitly. The only broadcasting primitive is
:func:`bias_add`, which adds a vector along the trailing axis.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "GradientCheckError",
    "Tensor",
    "GradTape",
    "ParameterSet",
    "Prng",
    "apply_op",
    "as_tensor",
    "zeros",
    "matmul",
    "elementwise",
    "add",
    "sub",
    "mul",
    "scale",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "bias_add",
    "reshape",
    "concat",
    "stack",
    "take",
    "slice_axis",
    "pad_left",
    "sum",
    "mean",
    "softmax",
    "einsum",
    "finite_difference_gradient",
    "relative_error",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GradientCheckError(RuntimeError):
    """Raised by the finite-difference oracle on a non-finite evaluation."""


class Tensor:
    """Immutable n-dimensional array of 64-bit reals.

    The wrapped array is row-major and flagged read-only; ops always
    allocate a fresh result.
    """

    __slots__ = ("data", "__weakref__")

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        arr.setflags(write=False)
        self.data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # skip the defensive copy for arrays freshly produced by an op
        t = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        t.data = arr
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Writable copy of the values."""
        return np.array(self.data)

    def item(self) -> float:
        return float(self.data.item())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, data={np.array2string(self.data, threshold=8)})"

    def __len__(self):
        return self.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape) -> Tensor:
    return Tensor._wrap(np.zeros(shape))


# ---------------------------------------------------------------------------
# tape


_local = threading.local()


def _active_tapes() -> list["GradTape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


class _Record:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output, inputs, backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class GradTape:
    """Records differentiable ops executed inside its ``with`` block.

    Tapes are thread-local: a tape opened in one thread never sees ops
    executed in another.

    >>> x = Tensor([3.0])
    >>> with GradTape() as tape:
    ...     tape.watch(x)
    ...     y = mul(x, x)
    >>> tape.gradient(y, [x])[0].data
    array([6.])
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._leaves: dict[int, Tensor] = {}
        self._tracked: set[int] = set()

    def __enter__(self):
        _active_tapes().append(self)
        return self

    def __exit__(self, *exc):
        stack = _active_tapes()
        stack.remove(self)
        return False

    def watch(self, tensors):
        if isinstance(tensors, Tensor):
            tensors = [tensors]
        elif isinstance(tensors, Mapping):
            tensors = tensors.values()
        for t in tensors:
            self._leaves[id(t)] = t
            self._tracked.add(id(t))

    @property
    def records(self) -> list[_Record]:
        return self._records

    def _maybe_record(self, output: Tensor, inputs: Sequence[Tensor], backward):
        if any(id(t) in self._tracked for t in inputs):
            self._records.append(_Record(output, tuple(inputs), backward))
            self._tracked.add(id(output))

    def gradient(self, target: Tensor, sources, output_gradient=None):
        """Adjoints of ``target`` with respect to each of ``sources``.

        ``sources`` may be a sequence of tensors or a :class:`ParameterSet`;
        the result has the same structure. Sources the target does not
        depend on get zero gradients.
        """
        if output_gradient is None:
            seed = np.ones(target.shape)
        else:
            seed = np.asarray(output_gradient, dtype=np.float64)
            if seed.shape != target.shape:
                raise ShapeError(f"output gradient {seed.shape} vs target {target.shape}")
        wanted = {id(t) for t in (sources.values() if isinstance(sources, Mapping) else sources)}
        grads: dict[int, np.ndarray] = {id(target): seed}
        for rec in reversed(self._records):
            key = id(rec.output)
            g = grads.get(key) if key in wanted else grads.pop(key, None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or id(t) not in self._tracked:
                    continue
                prev = grads.get(id(t))
                grads[id(t)] = gi if prev is None else prev + gi

        def lookup(t: Tensor) -> Tensor:
            g = grads.get(id(t))
            return Tensor._wrap(np.zeros(t.shape) if g is None else g)

        if isinstance(sources, ParameterSet):
            return ParameterSet({k: lookup(v) for k, v in sources.items()})
        return [lookup(t) for t in sources]


def apply_op(value: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap a forward result and register its adjoint rule on active tapes.

    ``backward`` receives the output gradient as an ndarray and returns one
    ndarray (or ``None``) per input, in input order.
    """
    out = Tensor._wrap(value)
    for tape in _active_tapes():
        tape._maybe_record(out, inputs, backward)
    return out


# ---------------------------------------------------------------------------
# primitives


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an (m, k) and a (k, n) tensor."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data
    return apply_op(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return apply_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return apply_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return apply_op(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return apply_op(a.data * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return apply_op(y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return apply_op(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return apply_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return apply_op(y, (a,), lambda g: (g * y,))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "exp": exp}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *operands):
    """Dispatch by name: ``elementwise("tanh", x)``, ``elementwise("scale", x, 2.0)``."""
    if op in _UNARY:
        (a,) = operands
        return _UNARY[op](a)
    if op in _BINARY:
        a, b = operands
        return _BINARY[op](a, b)
    if op == "scale":
        a, c = operands
        return scale(a, c)
    raise ValueError(f"unknown elementwise op {op!r}")


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with ``b`` broadcast along every leading axis of ``x``."""
    if b.ndim != 1 or x.shape[-1:] != b.shape:
        raise ShapeError(f"bias_add: bias {b.shape} does not match trailing axis of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return apply_op(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"reshape: {src} -> {shape}: {err}") from None
    return apply_op(out, (a,), lambda g: (g.reshape(src),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            s != r for k, (s, r) in enumerate(zip(t.shape, tensors[0].shape)) if k != ax
        ):
            raise ShapeError(f"concat: {t.shape} incompatible with {tensors[0].shape} on axis {ax}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return apply_op(out, tensors, lambda g: tuple(np.split(g, bounds, axis=ax)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    for t in tensors[1:]:
        _same_shape("stack", tensors[0], t)
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim
    n = len(tensors)
    return apply_op(out, tensors, lambda g: tuple(np.take(g, i, axis=ax) for i in range(n)))


def take(a: Tensor, index: int, axis: int = 0) -> Tensor:
    """Select one position along ``axis``, dropping that axis."""
    ax = axis % a.ndim
    src = a.shape

    def backward(g):
        full = np.zeros(src)
        idx = [slice(None)] * len(src)
        idx[ax] = index
        full[tuple(idx)] = g
        return (full,)

    return apply_op(np.take(a.data, index, axis=ax), (a,), backward)


def slice_axis(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    ax = axis % a.ndim
    src = a.shape
    idx = [slice(None)] * a.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros(src)
        full[idx] = g
        return (full,)

    return apply_op(a.data[idx], (a,), backward)


def pad_left(a: Tensor, amount: int, axis: int = 0) -> Tensor:
    """Prepend ``amount`` zeros along ``axis``."""
    if amount < 0:
        raise ValueError("pad amount must be non-negative")
    ax = axis % a.ndim
    widths = [(0, 0)] * a.ndim
    widths[ax] = (amount, 0)
    n = a.shape[ax]
    return apply_op(
        np.pad(a.data, widths), (a,), lambda g: (np.take(g, np.arange(amount, amount + n), axis=ax),)
    )


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return apply_op(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor) -> Tensor:
    return scale(sum(a), 1.0 / a.size)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return apply_op(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum with an explicit output, e.g. ``"bij,jk->bik"``.

    Each operand's labels must be distinct and every label of an operand
    must appear in the other operand or in the output, which is what makes
    the adjoint another einsum.
    """
    lhs, out = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for s, t in ((sa, a), (sb, b)):
        if len(set(s)) != len(s) or len(s) != t.ndim:
            raise ShapeError(f"einsum: labels {s!r} do not fit operand of shape {t.shape}")
    if not set(sa) <= set(sb) | set(out) or not set(sb) <= set(sa) | set(out):
        raise ValueError(f"einsum: {subscripts!r} sums a label owned by a single operand")
    dims: dict[str, int] = {}
    for s, t in ((sa, a), (sb, b)):
        for ch, n in zip(s, t.shape):
            if dims.setdefault(ch, n) != n:
                raise ShapeError(f"einsum: label {ch!r} has sizes {dims[ch]} and {n}")
    A, B = a.data, b.data
    value = np.einsum(f"{sa},{sb}->{out}", A, B)
    return apply_op(
        value,
        (a, b),
        lambda g: (np.einsum(f"{out},{sb}->{sa}", g, B), np.einsum(f"{out},{sa}->{sb}", g, A)),
    )


# ---------------------------------------------------------------------------
# parameters and randomness


class ParameterSet(dict):
    """Ordered name -> Tensor mapping holding one model's trainable values.

    Insertion order is the declared order used for initialization and
    serialization.
    """

    def __setitem__(self, key, value):
        super().__setitem__(key, as_tensor(value))

    @property
    def size(self) -> int:
        return int(np.sum([t.size for t in self.values()], dtype=np.int64))

    def flatten(self) -> np.ndarray:
        if not self:
            return np.zeros(0)
        return np.concatenate([t.data.ravel() for t in self.values()])

    def unflatten(self, flat) -> "ParameterSet":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.size:
            raise ShapeError(f"flat vector of {flat.size} for {self.size} parameters")
        out, pos = ParameterSet(), 0
        for k, t in self.items():
            out[k] = Tensor._wrap(flat[pos:pos + t.size].reshape(t.shape).copy())
            pos += t.size
        return out

    def copy(self) -> "ParameterSet":
        return ParameterSet(self)

    def __init__(self, items=()):
        super().__init__()
        for k, v in dict(items).items():
            self[k] = v


_GOLDEN = 0x9E3779B97F4A7C15


class Prng:
    """Seeded stream built on numpy's PCG64 bit generator.

    PCG64 output for a given seed is fixed by numpy's stream-compatibility
    policy, so identical seeds give identical streams across platforms.
    ``stream`` selects an independent substream for the same run seed.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int, stream: int = 0):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, self.stream])))

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=(), loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(loc, scale, size=shape)

    def randint(self, high: int) -> int:
        """Uniform integer in [0, high)."""
        return int(self._gen.integers(0, high))

    def shuffle_indices(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of ``range(n)``."""
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx


# ---------------------------------------------------------------------------
# gradient oracle


def finite_difference_gradient(f: Callable[[ParameterSet], float], params: ParameterSet,
                               step: float = 1e-5) -> ParameterSet:
    """Central-difference gradient of scalar ``f`` at ``params``.

    Accepts a bare :class:`Tensor` as well, in which case ``f`` is called
    with a tensor and a tensor is returned.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    single = isinstance(params, Tensor)
    pset = ParameterSet({"x": params}) if single else params
    flat = pset.flatten()
    grad = np.empty_like(flat)

    def call(vec):
        p = pset.unflatten(vec)
        val = float(f(p["x"] if single else p))
        if not math.isfinite(val):
            raise GradientCheckError(f"objective returned {val}")
        return val

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = call(flat)
        flat[i] = orig - step
        lo = call(flat)
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * step)
    out = pset.unflatten(grad)
    return out["x"] if single else out


def relative_error(analytic, numeric) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)``; 0 when both vanish."""
    if isinstance(analytic, Mapping):
        analytic = np.concatenate([np.ravel(as_tensor(v).data) for v in analytic.values()])
        numeric = np.concatenate([np.ravel(as_tensor(v).data) for v in numeric.values()])
    a = np.ravel(as_tensor(analytic).data)
    n = np.ravel(as_tensor(numeric).data)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)
