"""Dense float64 tensors with recorded reverse-mode differentiation.

Every primitive returns a new :class:`Tensor`. When gradient recording is
enabled and at least one operand requires a gradient, the result remembers
its operands and a closure mapping the upstream gradient to one gradient per
operand. :func:`backward` walks that graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

LEAKY_SLOPE = 0.01
COSINE_EPS = 1e-12

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


@contextlib.contextmanager
def no_grad():
    """Inference mode: primitives compute values without recording a graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A node in the computation graph.

    ``data`` is always a float64 ndarray. ``grad`` is populated by
    :func:`backward` and has the same shape as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar("item", self.shape)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _raise_not_scalar(name, shape):
    raise ShapeError(f"{name}: expected a scalar tensor, got shape {shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op}: non-finite result")
    out = Tensor(data, op=op)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------------------
# elementwise binary
# ----------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make("mul", a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make("div", out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent`` for a constant real exponent."""
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data**exponent

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (g * exponent * a.data ** (exponent - 1),)

    return _make("pow", out, (a,), bw)


def clamp_min(a, floor: float) -> Tensor:
    """``max(a, floor)``; the gradient is zero where the floor is active."""
    a = as_tensor(a)
    keep = a.data >= floor
    return _make("clamp_min", np.where(keep, a.data, floor), (a,), lambda g: (g * keep,))


# ----------------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------------


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make("relu", a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _make("leaky_relu", a.data * scale, (a,), lambda g: (g * scale,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` (row-wise for the default last axis)."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make("softmax", out, (a,), bw)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * sign,))


# ----------------------------------------------------------------------------
# linear algebra and shape
# ----------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules (2-D weights broadcast over batches)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # shared weight: fold the batch axes into the contraction
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make("matmul", out, (a, b), bw)


def linear(x, W, b) -> Tensor:
    """Fused ``x @ W + b`` for a 2-D weight and 1-D bias."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"linear: incompatible shapes {x.shape}, {W.shape}, {b.shape}")
    out = x.data @ W.data + b.data

    def bw(g):
        gx = g @ W.data.T if x.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        gW = x.data.reshape(-1, x.shape[-1]).T @ g2 if W.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gW, gb

    return _make("linear", out, (x, W, b), bw)


def standardize(x, axis: int = 0, var_floor: float = 1e-8) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """``(x - mean) / sqrt(max(var, floor))`` with moments taken along ``axis``.

    Returns the standardized tensor and the batch mean and (biased) variance,
    both with ``axis`` kept. Where the floor is active the denominator is a
    constant.
    """
    x = as_tensor(x)
    mu = x.data.mean(axis=axis, keepdims=True)
    c = x.data - mu
    var = (c * c).mean(axis=axis, keepdims=True)
    active = var > var_floor
    sigma = np.sqrt(np.where(active, var, var_floor))
    out = c / sigma

    def bw(g):
        gm = g.mean(axis=axis, keepdims=True)
        gy = np.where(active, (g * out).mean(axis=axis, keepdims=True), 0.0)
        return ((g - gm - out * gy) / sigma,)

    return _make("standardize", out, (x,), bw), mu, var


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 dims, got shape {a.shape}")
    return _make("transpose", np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}") from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    parts = index if isinstance(index, tuple) else (index,)
    advanced = any(not isinstance(i, (int, np.integer, slice, type(None), type(Ellipsis))) for i in parts)

    def bw(g):
        full = np.zeros_like(a.data)
        if advanced:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _make("getitem", np.array(out, dtype=np.float64), (a,), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (the last axis by default)."""
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make("concat", out, ts, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in ts]}") from None

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make("stack", out, ts, bw)


# ----------------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------------


def _expand(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))
    return _make("sum", out, (a,), lambda g: (_expand(g, a.shape, axis, keepdims).copy(),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.data.size // max(out.size, 1) if a.data.size else 1

    def bw(g):
        return (_expand(g, a.shape, axis, keepdims) / count,)

    return _make("mean", out, (a,), bw)


def mse(a, b) -> Tensor:
    """Mean of squared differences over every entry (scalar)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: incompatible shapes {a.shape} and {b.shape}")
    diff = a.data - b.data
    n = max(diff.size, 1)

    def bw(g):
        ga = 2.0 * g * diff / n
        return ga, -ga

    return _make("mse", np.asarray((diff * diff).sum() / n), (a, b), bw)


def l2_normalize(a, axis: int = -1, eps: float = COSINE_EPS) -> Tensor:
    """Divide by the L2 norm along ``axis``, clamped below by ``eps``."""
    a = as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    active = norm > eps
    denom = np.where(active, norm, eps)
    out = a.data / denom

    def bw(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        return ((g - np.where(active, out * proj, 0.0)) / denom,)

    return _make("l2_normalize", out, (a,), bw)


def cosine_similarity(a, b, axis: int = -1, eps: float = COSINE_EPS) -> Tensor:
    """Cosine similarity of paired rows of ``a`` and ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity: incompatible shapes {a.shape} and {b.shape}")
    return tsum(l2_normalize(a, axis, eps) * l2_normalize(b, axis, eps), axis=axis)


# ----------------------------------------------------------------------------
# backward
# ----------------------------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``.grad`` of every node reachable from the scalar ``root``.

    Leaf gradients accumulate across calls; clearing them is the optimizer's
    job. Intermediate gradients are recomputed from scratch each call.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topological(root)
    for node in order:
        if not node.is_leaf:
            node.grad = None
    seed = np.ones_like(root.data)
    if root.is_leaf:
        root.grad = seed if root.grad is None else root.grad + seed
        return
    root.grad = seed
    for node in reversed(order):
        if node.is_leaf or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                # no primitive mutates gradients in place, so sharing arrays is safe
                parent.grad = g if g.shape == parent.shape else np.reshape(g, parent.shape)
            else:
                parent.grad = parent.grad + g
    for node in order:
        if node.grad is None:
            node.grad = np.zeros_like(node.data)


# ----------------------------------------------------------------------------
# parameters and checkpoints
# ----------------------------------------------------------------------------


class ParameterStore:
    """Named tensors in insertion order.

    Trainable entries are optimized; non-trainable entries are buffers such
    as normalization running statistics, persisted alongside the weights.
    """

    def __init__(self):
        self._entries: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=trainable)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._entries.items())

    def names(self) -> list[str]:
        return list(self._entries)

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._entries.items() if t.requires_grad]

    def n_trainable(self) -> int:
        return int(sum(t.data.size for _, t in self.trainable()))

    def zero_grad(self) -> None:
        for _, t in self._entries.items():
            t.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.data.copy()) for n, t in self._entries.items())

    def load_state_dict(self, state) -> None:
        missing = set(self._entries) ^ set(state)
        if missing:
            raise KeyError(f"state mismatch on {sorted(missing)}")
        for n, t in self._entries.items():
            value = np.asarray(state[n], dtype=np.float64)
            if value.shape != t.shape:
                raise ShapeError(f"load_state_dict: {n} has shape {value.shape}, expected {t.shape}")
            t.data = value.copy()


def save_checkpoint(path, store: ParameterStore, header: dict | None = None) -> None:
    """Write a one-line JSON manifest followed by little-endian float64 data."""
    tensors = []
    offset = 0
    for name, t in store:
        tensors.append({"name": name, "shape": list(t.shape), "offset": offset, "trainable": t.requires_grad})
        offset += t.data.size * 8
    manifest = {"format": "legato-checkpoint", "version": 1, "header": header or {}, "tensors": tensors}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n")
        for _, t in store:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, "OrderedDict[str, tuple[np.ndarray, bool]]"]:
    """Return ``(header, {name: (array, trainable)})`` from a checkpoint file."""
    raw = Path(path).read_bytes()
    cut = raw.index(b"\n")
    manifest = json.loads(raw[:cut].decode("utf-8"))
    if manifest.get("format") != "legato-checkpoint":
        raise ValueError(f"{path}: not a legato checkpoint")
    body = raw[cut + 1 :]
    out: "OrderedDict[str, tuple[np.ndarray, bool]]" = OrderedDict()
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=entry["offset"])
        out[entry["name"]] = (arr.astype(np.float64).reshape(entry["shape"]), entry["trainable"])
    return manifest["header"], out


def load_checkpoint(path) -> tuple[dict, ParameterStore]:
    header, entries = read_checkpoint(path)
    store = ParameterStore()
    for name, (arr, trainable) in entries.items():
        store.add(name, arr, trainable=trainable)
    return header, store


# ----------------------------------------------------------------------------
# finite-difference gradient check
# ----------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    deviations: dict[str, float]
    tol: float
    step: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_deviation(self) -> float:
        return max(self.deviations.values(), default=0.0)


def relative_deviation(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Largest entrywise ``|a - n| / max(|a|, |n|, floor)``."""
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check(
    f: Callable[[ParameterStore], Tensor],
    store: ParameterStore,
    step: float = 1e-5,
    tol: float = 1e-4,
    names: Iterable[str] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences for each parameter."""
    if step <= 0 or tol <= 0:
        raise ValueError("step and tol must be positive")
    selected = list(names) if names is not None else [n for n, _ in store.trainable()]
    store.zero_grad()
    out = f(store)
    if out.data.size != 1:
        raise ShapeError(f"grad_check: objective must be scalar, got shape {out.shape}")
    backward(out)
    report = GradCheckReport({}, tol, step)
    for name in selected:
        param = store[name]
        analytic = np.zeros_like(param.data) if param.grad is None else param.grad.copy()
        numeric = np.zeros_like(param.data)
        flat = param.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + step
                up = f(store).item()
                flat[i] = orig - step
                down = f(store).item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * step)
        dev = relative_deviation(analytic, numeric)
        report.deviations[name] = dev
        if dev >= tol:
            report.failures.append(name)
    store.zero_grad()
    return report
