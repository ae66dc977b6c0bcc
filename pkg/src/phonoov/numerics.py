"""A small reverse-mode autodiff engine over numpy arrays, plus AdamW.

Only what the encoders and downstream heads need is here.  Broadcasting is
limited to equal shapes or a trailing-suffix operand (bias-style); anything
else raises :class:`ShapeError`.

Training runs in float32.  Wrap code in ``precision(np.float64)`` to build
float64 parameters and tensors, which is what the gradient checks use.
"""

from __future__ import annotations

import contextlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}")


class NotScalar(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


_DTYPE = [np.float32]
_GRAD_ENABLED = [True]


def default_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


@contextlib.contextmanager
def no_grad():
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "", dtype=None):
        self.data = np.asarray(data, dtype=dtype or default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{', grad' if self.requires_grad else ''})"

    def backward(self) -> None:
        if self.size != 1:
            raise NotScalar(f"backward needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_lift(other, self), -1.0))

    def __rsub__(self, other):
        return add(_lift(other, self), scale(self, -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.broadcast_to(np.asarray(x, dtype=like.data.dtype), like.shape).copy(), dtype=like.data.dtype)


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, name: str = "") -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), name)


# ---------------------------------------------------------------------------
# elementwise and shape ops


def _suffix_ok(big: tuple, small: tuple) -> bool:
    return len(small) <= len(big) and tuple(big[len(big) - len(small):]) == tuple(small)


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    return g.reshape(-1, *shape).sum(axis=0) if shape else g.sum()


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and not _suffix_ok(a.shape, b.shape) and not _suffix_ok(b.shape, a.shape):
        raise ShapeError("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def back(g):
        return _reduce_to(g, sa), _reduce_to(g, sb)

    return _make(a.data + b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and not _suffix_ok(a.shape, b.shape) and not _suffix_ok(b.shape, a.shape):
        raise ShapeError("mul", a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def back(g):
        return _reduce_to(g * b.data, sa), _reduce_to(g * a.data, sb)

    return _make(a.data * b.data, (a, b), back)


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return _make(x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return _make(np.where(keep, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * keep,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = (0.5 * (1 + np.tanh(0.5 * x.data))).astype(x.data.dtype)
    return _make(y, (x,), lambda g: (g * y * (1 - y),))


def tsum(x: Tensor, axis=None) -> Tensor:
    shape = x.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis)), (x,), back)


def tmean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return scale(tsum(x, axis), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, shape) from None
    return _make(data, (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError("transpose", x.shape, axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x: Tensor, key) -> Tensor:
    shape, dtype = x.shape, x.data.dtype

    def back(g):
        gx = np.zeros(shape, dtype=dtype)
        gx[key] += g
        return (gx,)

    return _make(np.array(x.data[key]), (x,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(data, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if len({t.shape for t in tensors}) != 1:
        raise ShapeError("stack", *(t.shape for t in tensors))
    data = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(data, tensors, back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    if b.ndim == 2:
        data = a.data @ b.data

        def back(g):
            ga = g @ b.data.T
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb

        return _make(data, (a, b), back)
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError("matmul", a.shape, b.shape)

    def back(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _make(a.data @ b.data, (a, b), back)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """``np.take`` with integer index arrays; gradients scatter-add back."""
    idx = np.asarray(indices, dtype=np.int64)
    axis = axis % x.ndim
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[axis]):
        raise IndexError(f"index out of range for axis of size {x.shape[axis]}")
    shape, dtype = x.shape, x.data.dtype

    def back(g):
        gx = np.zeros((shape[axis], *shape[:axis], *shape[axis + 1:]), dtype=dtype)
        gm = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        np.add.at(gx, idx, gm)
        return (np.moveaxis(gx, 0, axis),)

    return _make(np.take(x.data, idx, axis=axis), (x,), back)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    if table.ndim != 2:
        raise ShapeError("embedding_lookup", table.shape)
    return take(table, ids, axis=0)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    if not training or p <= 0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / x.data.dtype.type(1 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# normalisation, pooling, losses


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis``; positions where ``mask`` is False get zero weight."""
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = (e / e.sum(axis=axis, keepdims=True)).astype(x.data.dtype)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    sm = np.exp(y)

    def back(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gamma.shape, beta.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        dxhat = g * gamma.data
        gx = inv / d * (
            d * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        flat_g = g.reshape(-1, d)
        return gx, (flat_g * xhat.reshape(-1, d)).sum(axis=0), flat_g.sum(axis=0)

    return _make(out.astype(x.data.dtype), (x, gamma, beta), back)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True) + eps)
    y = x.data / norm

    def back(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)

    return _make(y, (x,), back)


def mean_pool(x: Tensor, mask: np.ndarray) -> Tensor:
    """Average (B, T, d) over the time steps where ``mask`` (B, T) is true."""
    mask = np.asarray(mask, dtype=bool)
    if x.ndim != 3 or mask.shape != x.shape[:2]:
        raise ShapeError("mean_pool", x.shape, mask.shape)
    w = mask.astype(x.data.dtype)
    count = np.maximum(w.sum(axis=1, keepdims=True), 1)
    w = (w / count)[:, :, None]
    return _make((x.data * w).sum(axis=1), (x,), lambda g: (g[:, None, :] * w,))


def max_pool(x: Tensor, mask: np.ndarray) -> Tensor:
    """Max over time of (B, T, F) restricted to valid steps (each row needs one)."""
    mask = np.asarray(mask, dtype=bool)
    if x.ndim != 3 or mask.shape != x.shape[:2]:
        raise ShapeError("max_pool", x.shape, mask.shape)
    z = np.where(mask[:, :, None], x.data, -np.inf)
    arg = z.argmax(axis=1)  # (B, F)
    b_idx, f_idx = np.meshgrid(np.arange(x.shape[0]), np.arange(x.shape[2]), indexing="ij")
    shape, dtype = x.shape, x.data.dtype

    def back(g):
        gx = np.zeros(shape, dtype=dtype)
        gx[b_idx, arg, f_idx] = g
        return (gx,)

    return _make(x.data[b_idx, arg, f_idx], (x,), back)


def cross_entropy(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    """-log softmax(logits)[label] for (N, C) logits; mean or sum over rows."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    losses = -logp[rows, labels]
    denom = n if reduction == "mean" else 1
    loss = losses.sum() / denom

    def back(g):
        gl = np.exp(logp)
        gl[rows, labels] -= 1
        return (gl * (g / denom),)

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), back)


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[Optional[np.ndarray]], state: AdamWState) -> AdamWState:
    """One in-place AdamW update (decoupled weight decay, bias-corrected moments)."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for i, g in enumerate(grads):
        if g is not None:
            if g.shape != params[i].shape:
                raise ShapeError("adamw_step", params[i].shape, g.shape)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in parameter {i} (shape {g.shape})")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    state.step += 1
    c1 = 1 - state.beta1 ** state.step
    c2 = 1 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if state.weight_decay:
            p *= 1 - state.lr * state.weight_decay
        if g is None:
            continue
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return state


class AdamW:
    def __init__(self, params: Iterable[Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.state = AdamWState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adamw_step([p.data for p in self.params], [p.grad for p in self.params], self.state)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, arrays: dict) -> None:
    """Version byte, header length (u32 LE), ``name\\tfloat32\\tshape`` lines, raw LE float32 data."""
    header = io.StringIO()
    blobs = []
    for name, arr in arrays.items():
        if "\t" in name or "\n" in name:
            raise ValueError(f"bad parameter name {name!r}")
        arr = np.asarray(arr, dtype="<f4")
        header.write(f"{name}\tfloat32\t{','.join(map(str, arr.shape))}\n")
        blobs.append(arr.tobytes())
    head = header.getvalue().encode("utf-8")
    with open(path, "wb") as f:
        f.write(bytes([CHECKPOINT_VERSION]))
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for b in blobs:
            f.write(b)


def load_checkpoint(path: str | Path) -> dict:
    raw = Path(path).read_bytes()
    if not raw or raw[0] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version")
    (hlen,) = struct.unpack("<I", raw[1:5])
    header = raw[5:5 + hlen].decode("utf-8")
    offset = 5 + hlen
    out = {}
    for line in header.splitlines():
        name, dtype, shape_s = line.split("\t")
        if dtype != "float32":
            raise ValueError(f"{path}: unsupported dtype {dtype}")
        shape = tuple(int(s) for s in shape_s.split(",") if s)
        n = int(np.prod(shape)) if shape else 1
        out[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(shape).copy()
        offset += 4 * n
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after last array")
    return out
