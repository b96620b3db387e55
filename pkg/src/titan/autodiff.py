"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records differentiable primitives in execution order; ``backward``
replays the record once in reverse (a Wengert list). All values are float64
so finite-difference checks can run at tight tolerances. Only operations
whose inputs require gradients are recorded; constant subgraphs cost nothing
beyond the forward arithmetic.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

ArrayLike = Union[float, int, Sequence, np.ndarray, "Tensor"]


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tape:
    """Ordered record of primitives for one forward trace.

    Parents of a node always precede it, so a single reverse sweep over the
    record propagates adjoints correctly. A tape may be swept exactly once;
    reusing a consumed tape raises, since op closures hold forward values
    that a second sweep would silently reinterpret.
    """

    def __init__(self):
        self._nodes: list = []  # (backward_fn | None, parent_ids)
        self._leaf_shapes: dict[int, tuple] = {}
        self._consumed = False

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, backward_fn, parents) -> int:
        self._nodes.append((backward_fn, parents))
        return len(self._nodes) - 1

    def leaf(self, data: ArrayLike, requires_grad: bool = False) -> "Tensor":
        """Create a leaf tensor. Only gradient-requiring leaves occupy a node."""
        arr = _as_array(data)
        if not requires_grad:
            return Tensor(arr)
        nid = self._record(None, ())
        self._leaf_shapes[nid] = arr.shape
        return Tensor(arr, tape=self, node_id=nid, requires_grad=True)


class Tensor:
    """Dense float64 array, optionally tracked on a tape."""

    __slots__ = ("data", "tape", "node_id", "requires_grad")

    def __init__(self, data: ArrayLike, tape: Optional[Tape] = None,
                 node_id: Optional[int] = None, requires_grad: bool = False):
        self.data = _as_array(data)
        self.tape = tape
        self.node_id = node_id
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # arithmetic sugar
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(_as_array(x))


def _apply(data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    """Wrap a computed value, recording the op if any input is tracked."""
    tape = None
    for t in inputs:
        if t.requires_grad:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise ValueError("operands were created on different tapes")
    if tape is None:
        return Tensor(data)
    if tape._consumed:
        raise ValueError("tape has already been backpropagated; build a new one")
    parent_ids = tuple(t.node_id if t.requires_grad else None for t in inputs)
    nid = tape._record(backward_fn, parent_ids)
    return Tensor(data, tape=tape, node_id=nid, requires_grad=True)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an adjoint down to the shape the operand had before broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(tape: Tape, loss: Tensor) -> dict[int, Tensor]:
    """Reverse sweep from a scalar loss. Returns node_id -> gradient tensor.

    Gradient-requiring leaves that the loss never touched map to zeros.
    Calling backward twice on one tape is an error.
    """
    if loss.tape is not tape or loss.node_id is None:
        raise ValueError("loss was not produced on this tape")
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.data.shape}")
    if tape._consumed:
        raise ValueError("tape has already been backpropagated; build a new one")
    tape._consumed = True

    adjoints: list = [None] * len(tape._nodes)
    adjoints[loss.node_id] = np.ones_like(loss.data)
    for nid in range(loss.node_id, -1, -1):
        g = adjoints[nid]
        if g is None:
            continue
        backward_fn, parents = tape._nodes[nid]
        if backward_fn is None:
            continue
        for pid, pg in zip(parents, backward_fn(g)):
            if pid is None or pg is None:
                continue
            if adjoints[pid] is None:
                adjoints[pid] = pg
            else:
                adjoints[pid] = adjoints[pid] + pg

    grads: dict[int, Tensor] = {}
    for nid, g in enumerate(adjoints):
        if g is not None:
            # materialize: adjoints may be read-only broadcast views
            grads[nid] = Tensor(np.array(g))
    for nid, shape in tape._leaf_shapes.items():
        if nid not in grads:
            grads[nid] = Tensor(np.zeros(shape))
    return grads


def grad_of(grads: dict[int, Tensor], t: Tensor) -> np.ndarray:
    """Gradient array for a tracked tensor out of a backward() result."""
    if not t.requires_grad or t.node_id is None:
        raise ValueError("tensor is not tracked on a tape")
    g = grads.get(t.node_id)
    if g is None:
        return np.zeros(t.data.shape)
    return g.data


# ---------------------------------------------------------------------------
# primitives


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ash, bsh = a.data.shape, b.data.shape

    def bw(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _apply(a.data + b.data, (a, b), bw)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ash, bsh = a.data.shape, b.data.shape

    def bw(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _apply(a.data - b.data, (a, b), bw)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _apply(ad * bd, (a, b), bw)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g / bd, ad.shape),
                _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _apply(ad / bd, (a, b), bw)


def neg(a: ArrayLike) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        return (-g,)

    return _apply(-a.data, (a,), bw)


def power(a: ArrayLike, p: float) -> Tensor:
    """Elementwise a**p for a constant exponent."""
    a = _as_tensor(a)
    p = float(p)
    ad = a.data

    def bw(g):
        return (g * p * ad ** (p - 1.0),)

    return _apply(ad ** p, (a,), bw)


def exp(a: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _apply(out, (a,), bw)


def log(a: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    ad = a.data

    def bw(g):
        return (g / ad,)

    return _apply(np.log(ad), (a,), bw)


def absolute(a: ArrayLike) -> Tensor:
    """Elementwise |a|; subgradient 0 at exactly 0."""
    a = _as_tensor(a)
    s = np.sign(a.data)

    def bw(g):
        return (g * s,)

    return _apply(np.abs(a.data), (a,), bw)


def relu(a: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0

    def bw(g):
        return (g * mask,)

    return _apply(a.data * mask, (a,), bw)


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # exponentiate only non-positive values so nothing overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: ArrayLike) -> Tensor:
    a = _as_tensor(a)
    out = stable_sigmoid(a.data)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _apply(out, (a,), bw)


def softplus(a: ArrayLike) -> Tensor:
    """log(1 + e^a), computed without overflow for large |a|."""
    a = _as_tensor(a)
    ad = a.data

    def bw(g):
        return (g * stable_sigmoid(ad),)

    return _apply(np.logaddexp(0.0, ad), (a,), bw)


def maximum(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise max; ties route the gradient to the first operand."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data >= b.data
    ash, bsh = a.data.shape, b.data.shape

    def bw(g):
        return (_unbroadcast(g * take_a, ash),
                _unbroadcast(g * ~take_a, bsh))

    return _apply(np.maximum(a.data, b.data), (a, b), bw)


def minimum(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise min; ties route the gradient to the first operand."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data <= b.data
    ash, bsh = a.data.shape, b.data.shape

    def bw(g):
        return (_unbroadcast(g * take_a, ash),
                _unbroadcast(g * ~take_a, bsh))

    return _apply(np.minimum(a.data, b.data), (a, b), bw)


def clip(a: ArrayLike, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes on the closed interval."""
    a = _as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        return (g * inside,)

    return _apply(np.clip(a.data, lo, hi), (a,), bw)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product with numpy batching over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")
    ad, bd = a.data, b.data
    needs = (a.requires_grad, b.requires_grad)

    def bw(g):
        ga = gb = None
        if needs[0]:
            ga = _unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape)
        if needs[1]:
            gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape)
        return ga, gb

    return _apply(ad @ bd, (a, b), bw)


def reduce_sum(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    ash = a.data.shape

    def bw(g):
        return (_expand_reduced(g, ash, axis, keepdims),)

    return _apply(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def reduce_mean(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    ash = a.data.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    scale = out.size / a.data.size if a.data.size else 1.0

    def bw(g):
        return (_expand_reduced(g, ash, axis, keepdims) * scale,)

    return _apply(out, (a,), bw)


def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def reshape(a: ArrayLike, shape: tuple) -> Tensor:
    a = _as_tensor(a)
    ash = a.data.shape

    def bw(g):
        return (g.reshape(ash),)

    return _apply(a.data.reshape(shape), (a,), bw)


def transpose(a: ArrayLike, axes: tuple) -> Tensor:
    a = _as_tensor(a)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inv),)

    return _apply(a.data.transpose(axes), (a,), bw)


def getitem(a: Tensor, idx) -> Tensor:
    a = _as_tensor(a)
    ash = a.data.shape
    out = a.data[idx]
    if np.isscalar(out) or out.ndim == 0:
        out = _as_array(out)

    def bw(g):
        full = np.zeros(ash)
        np.add.at(full, idx, g)
        return (full,)

    return _apply(out, (a,), bw)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _apply(np.concatenate([t.data for t in tensors], axis=axis),
                  tuple(tensors), bw)


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]

    def bw(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] for i in range(len(tensors)))

    return _apply(np.stack([t.data for t in tensors], axis=axis),
                  tuple(tensors), bw)


def softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    """Fused, shift-stabilized softmax along one axis."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _apply(out, (a,), bw)


def layer_norm(a: ArrayLike, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine part)."""
    a = _as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return ((g - gm - xhat * gx) * inv,)

    return _apply(xhat, (a,), bw)


def grad_reverse(a: Tensor, lambda_grl: float = 1.0) -> Tensor:
    """Identity forward; backward multiplies the adjoint by -lambda_grl.

    The strength must be non-negative: the whole point is a sign flip whose
    magnitude is controlled separately.
    """
    lam = float(lambda_grl)
    if lam < 0.0:
        raise ValueError(f"lambda_grl must be >= 0, got {lam}")
    a = _as_tensor(a)

    def bw(g):
        return (-lam * g,)

    return _apply(a.data, (a,), bw)


def dropout(a: Tensor, p: float, mode: str, rng) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/(1-p) in train mode.

    rng may be a numpy Generator or an int seed; the mask is a pure function
    of it, so a run can be replayed exactly. In eval mode (or p == 0) the
    input passes through untouched.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    p = float(p)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must satisfy 0 <= p < 1, got {p}")
    a = _as_tensor(a)
    if mode == "eval" or p == 0.0:
        return a
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    scale = (rng.random(a.data.shape) >= p) / (1.0 - p)

    def bw(g):
        return (g * scale,)

    return _apply(a.data * scale, (a,), bw)
