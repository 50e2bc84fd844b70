"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

The tape is implicit: every tensor produced by an operation keeps references
to its parents and a closure routing the output gradient back to them.
Everything runs in float64 so analytic gradients can be compared against
central finite differences at tight tolerances.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "ParameterRegistry",
    "ShapeError",
    "NondeterministicFunctionError",
    "as_tensor",
    "tensor",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "gather_rows",
    "add",
    "subtract",
    "multiply",
    "scale",
    "relu",
    "row_softmax",
    "layer_norm",
    "smooth_l1",
    "reduce_sum",
    "reduce_mean",
    "backpropagate",
    "grad_check",
    "GradCheckReport",
    "uniform_init",
    "save_checkpoint",
    "load_checkpoint",
]


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class NondeterministicFunctionError(RuntimeError):
    """Repeated evaluation of a supposedly pure function changed its output."""


class Tensor:
    """Dense n-d float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad=False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _result(data, parents, backward) -> Tensor:
    # Constant subgraphs are pruned: no parents recorded, no backward closure.
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b, transpose_b: bool = False) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    bd = b.data.T if transpose_b else b.data
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {bd.shape}")
    out = a.data @ bd

    def backward(g):
        _accum(a, g @ bd.T)
        _accum(b, (g.T @ a.data) if transpose_b else (a.data.T @ g))

    return _result(out, (a, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d tensor, got shape {a.data.shape}")

    def backward(g):
        _accum(a, g.T)

    return _result(a.data.T.copy(), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.data.shape} as {shape}")
    original = a.data.shape

    def backward(g):
        _accum(a, g.reshape(original))

    return _result(a.data.reshape(shape), (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: empty tensor list")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _result(out, ts, backward)


def gather_rows(a, indices) -> Tensor:
    """Select rows (axis 0) by index; duplicate indices accumulate gradient."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: indices must be 1-d")
    if a.data.shape[0] == 0 or (idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0])):
        raise ShapeError(f"gather_rows: index out of range for {a.data.shape[0]} rows")

    def backward(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        _accum(a, buf)

    return _result(a.data[idx], (a,), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _result(out, (a, b), backward)


def subtract(a, b) -> Tensor:
    return add(a, scale(as_tensor(b), -1.0))


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(out, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def backward(g):
        _accum(a, g * c)

    return _result(a.data * c, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def backward(g):
        _accum(a, g * (a.data > 0.0))

    return _result(out, (a,), backward)


def row_softmax(a, mask=None) -> Tensor:
    """Numerically stable softmax over each row; masked entries are exactly 0.

    `mask` is a boolean array of the same shape, True = entry participates.
    A row with no unmasked entry is an error.
    """
    a = as_tensor(a)
    x = a.data
    if x.ndim != 2:
        raise ShapeError(f"row_softmax: expected 2-d tensor, got shape {x.shape}")
    if mask is None:
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"row_softmax: mask shape {mask.shape} != input {x.shape}")
        rows_ok = mask.any(axis=1)
        if not rows_ok.all():
            raise ValueError(f"empty attention row {int(np.flatnonzero(~rows_ok)[0])}")
        zm = np.where(mask, x, -np.inf)
        e = np.exp(zm - zm.max(axis=1, keepdims=True))  # masked -> exp(-inf) = 0
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        gp = g * p
        _accum(a, gp - p * gp.sum(axis=1, keepdims=True))

    return _result(p, (a,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm: expected 2-d tensor, got shape {x.data.shape}")
    d = x.data.shape[1]
    if gain.data.size != d or bias.data.size != d:
        raise ShapeError(f"layer_norm: gain/bias must have {d} values")
    gvec, bvec = gain.data.reshape(d), bias.data.reshape(d)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gvec + bvec

    def backward(g):
        gh = g * gvec
        # d xhat / d x folded into one expression (standard layer-norm backward)
        gx = inv * (gh - gh.mean(axis=1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        _accum(x, gx)
        _accum(gain, (g * xhat).sum(axis=0).reshape(gain.data.shape))
        _accum(bias, g.sum(axis=0).reshape(bias.data.shape))

    return _result(out, (x, gain, bias), backward)


def smooth_l1(a, delta: float = 1.0) -> Tensor:
    """Elementwise Huber penalty: quadratic inside +-delta, linear outside."""
    a = as_tensor(a)
    delta = float(delta)
    if delta <= 0:
        raise ValueError(f"smooth_l1: delta must be positive, got {delta}")
    absx = np.abs(a.data)
    out = np.where(absx <= delta, 0.5 * a.data * a.data, delta * (absx - 0.5 * delta))

    def backward(g):
        _accum(a, g * np.clip(a.data, -delta, delta))

    return _result(out, (a,), backward)


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _result(out, (a,), backward)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# backward pass


def _topological_order(root: Tensor) -> list:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backpropagate(loss: Tensor) -> None:
    """Accumulate d loss / d t into t.grad for every tensor reachable from loss."""
    if loss.data.size != 1:
        raise ValueError(f"backpropagate: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class Parameter:
    name: str
    tensor: Tensor


class ParameterRegistry:
    """Ordered name -> tensor store for everything the optimizer touches."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t.requires_grad = True
        self._tensors[name] = t
        return t

    def __len__(self):
        return len(self._tensors)

    def __contains__(self, name):
        return name in self._tensors

    def __getitem__(self, name) -> Tensor:
        return self._tensors[name]

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def parameters(self):
        return [Parameter(n, t) for n, t in self._tensors.items()]

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def norms(self) -> dict:
        return {n: float(np.linalg.norm(t.data)) for n, t in self._tensors.items()}


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Per-input max relative error between analytic and numeric gradients."""

    errors: list
    tol: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors)

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0


def grad_check(f, inputs, h: float = 1e-6, tol: float = 1e-6,
               floor: float = 1e-3) -> GradCheckReport:
    """Compare analytic gradients of scalar f(*inputs) against central differences.

    Each element's error is |a - n| / (max(|a|, |n|) + floor); the report keeps
    the max per input. The floor keeps near-zero gradient entries, where the
    finite difference is pure roundoff noise, from dominating the ratio while
    still flagging disagreements large enough to matter.
    """
    inputs = [as_tensor(t) for t in inputs]
    for t in inputs:
        t.requires_grad = True

    first = f(*inputs).data.copy()
    if not np.array_equal(first, f(*inputs).data):
        raise NondeterministicFunctionError("function output changed between evaluations")

    for t in inputs:
        t.grad = None
    out = f(*inputs)
    if out.data.size != 1:
        raise ValueError("grad_check: f must return a scalar tensor")
    backpropagate(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    errors = []
    for t, a in zip(inputs, analytic):
        num = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(*inputs).data)
            flat[i] = orig - h
            fm = float(f(*inputs).data)
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
        denom = np.maximum(np.abs(a), np.abs(num)) + floor
        rel = np.abs(a - num) / denom
        errors.append(float(rel.max(initial=0.0)))
    return GradCheckReport(errors=errors, tol=tol)


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout (all little-endian):
#   magic "LFCK" | u16 version | i64 seed | u32 record count
#   per record: u16 name length | name utf-8 | u8 ndim | u32 dims... | f64 values

_CKPT_MAGIC = b"LFCK"
_CKPT_VERSION = 1


def save_checkpoint(path, registry: ParameterRegistry, seed: int) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Hq I", _CKPT_VERSION, int(seed), len(registry)))
        for name, t in registry.items():
            blob = name.encode("utf-8")
            fh.write(struct.pack("<H", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<B", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path, registry: ParameterRegistry) -> int:
    """Load values into an already-built registry by name; returns the stored seed."""
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, seed, count = struct.unpack("<Hq I", fh.read(struct.calcsize("<Hq I")))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        seen = set()
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            values = np.frombuffer(fh.read(8 * int(np.prod(shape, dtype=np.int64))), dtype="<f8")
            if name not in registry:
                raise ValueError(f"{path}: unknown parameter {name!r}")
            target = registry[name]
            if tuple(shape) != target.data.shape:
                raise ValueError(
                    f"{path}: shape mismatch for {name!r}: {tuple(shape)} vs {target.data.shape}")
            target.data = values.reshape(shape).astype(np.float64)
            seen.add(name)
        missing = set(registry.names()) - seen
        if missing:
            raise ValueError(f"{path}: missing parameters {sorted(missing)}")
    return seed
