"""Dense tensors with reverse-mode automatic differentiation.

Ops record onto a process-global tape in execution order; because a node is
always recorded after its inputs, replaying the tape in reverse is a valid
topological order for the backward pass. Training runs in single precision,
gradient checking in double (finite differences are unreliable in float32).
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

SINGLE = np.float32
DOUBLE = np.float64


class ShapeError(ValueError):
    """Raised when an operation's shape contract is violated."""


class Tape:
    """Execution-ordered record of differentiable ops for one backward pass.

    Single-threaded: a tape must never be shared between concurrently
    executing forward passes.
    """

    def __init__(self):
        self.enabled = True
        self._nodes: list[Tensor] = []

    def record(self, node: "Tensor") -> None:
        self._nodes.append(node)

    def clear(self) -> None:
        self._nodes.clear()

    def __len__(self) -> int:
        return len(self._nodes)


_TAPE = Tape()


def active_tape() -> Tape:
    return _TAPE


@contextlib.contextmanager
def no_grad():
    """Disable tape recording; ops inside produce constant tensors."""
    prev = _TAPE.enabled
    _TAPE.enabled = False
    try:
        yield
    finally:
        _TAPE.enabled = prev


class Tensor:
    """N-dimensional value, optionally tracked for reverse-mode autodiff.

    Immutable once created except for gradient accumulation: ``grad`` is
    populated by :func:`backward` and accumulates until cleared.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DOUBLE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; everything routes through the module-level ops
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable tensor; unique name is assigned by the owning module tree."""

    __slots__ = ("name",)

    def __init__(self, data, dtype=None, name: str = ""):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = _TAPE.enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward_fn = backward_fn
        _TAPE.record(out)
    else:
        out._parents = ()
        out._backward_fn = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that were broadcast in the forward pass."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap_last2(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data * b.data

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _node(out, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bw(g):
        return ((x.data > 0) * g,)

    return _node(out, (x,), bw)


def abs_(x: Tensor) -> Tensor:
    """Elementwise absolute value; subgradient at 0 is 0."""
    out = np.abs(x.data)

    def bw(g):
        return (np.sign(x.data) * g,)

    return _node(out, (x,), bw)


def square(x: Tensor) -> Tensor:
    out = x.data * x.data

    def bw(g):
        return (2.0 * x.data * g,)

    return _node(out, (x,), bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with numpy stacking semantics ((..., m, k) @ (..., k, n))."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = _unbroadcast(g @ _swap_last2(b.data), a.data.shape)
        gb = _unbroadcast(_swap_last2(a.data) @ g, b.data.shape)
        return ga, gb

    return _node(out, (a, b), bw)


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.data.shape
    out = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(orig),)

    return _node(out, (x,), bw)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    out = np.swapaxes(x.data, a, b)

    def bw(g):
        return (np.swapaxes(g, a, b),)

    return _node(out, (x,), bw)


def broadcast_to(x: Tensor, shape) -> Tensor:
    out = np.broadcast_to(x.data, shape)

    def bw(g):
        return (_unbroadcast(g, x.data.shape),)

    # broadcast_to returns a view; copy so downstream ops own their memory
    return _node(np.ascontiguousarray(out), (x,), bw)


def concat(xs, axis: int = -1) -> Tensor:
    """Concatenate along one axis; all other extents must agree."""
    xs = [_as_tensor(x) for x in xs]
    if len(xs) == 0:
        raise ShapeError("concat needs at least one input")
    ref = xs[0].data.shape
    ax = axis if axis >= 0 else len(ref) + axis
    for x in xs[1:]:
        s = x.data.shape
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat extents differ off axis {axis}: {ref} vs {s}")
    out = np.concatenate([x.data for x in xs], axis=ax)
    sizes = [x.data.shape[ax] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        gs = []
        for i in range(len(xs)):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(offsets[i], offsets[i + 1])
            gs.append(g[tuple(sl)])
        return tuple(gs)

    return _node(out, tuple(xs), bw)


def concat_last(xs) -> Tensor:
    """Concatenate along the last axis, leading extents shared."""
    return concat(xs, axis=-1)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ax = axis if axis >= 0 else x.data.ndim + axis
    sl = [slice(None)] * x.data.ndim
    sl[ax] = slice(start, stop)
    sl = tuple(sl)
    out = x.data[sl]

    def bw(g):
        full = np.zeros_like(x.data)
        full[sl] = g
        return (full,)

    return _node(np.ascontiguousarray(out), (x,), bw)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    out = x.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy(),)

    return _node(np.asarray(out), (x,), bw)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    """Arithmetic mean along ``axis`` (all elements when None)."""
    n = x.data.size if axis is None else x.data.shape[axis]
    if n == 0:
        raise ShapeError(f"reduce_mean over empty extent (shape {x.data.shape}, axis {axis})")
    out = x.data.mean(axis=axis)
    inv = 1.0 / n

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g * inv, x.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g * inv, axis), x.data.shape).copy(),)

    return _node(np.asarray(out), (x,), bw)


# ---------------------------------------------------------------------------
# neural-net primitives


def softmax_rows(x: Tensor) -> Tensor:
    """Row-stabilized softmax over the last axis; rows sum to 1."""
    if x.data.shape[-1] < 1:
        raise ShapeError(f"softmax over empty rows (shape {x.data.shape})")
    if np.isnan(x.data).any():
        raise ValueError("softmax_rows rejects NaN input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return ((g - dot) * s,)

    return _node(s, (x,), bw)


def log_softmax_rows(x: Tensor) -> Tensor:
    if np.isnan(x.data).any():
        raise ValueError("log_softmax_rows rejects NaN input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _node(out, (x,), bw)


def gather_last(x: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one entry per row along the last axis (idx shape == leading shape)."""
    idx = np.asarray(idx)
    lead = x.data.shape[:-1]
    if idx.shape != lead:
        raise ShapeError(f"gather_last index shape {idx.shape} != leading {lead}")
    out = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        return (full,)

    return _node(out, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} != ({d},)"
        )
    if eps <= 0:
        raise ValueError("layer_norm eps must be > 0")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = y * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - y * (gh * y).mean(axis=-1, keepdims=True))
        ggamma = (g * y).sum(axis=lead) if lead else g * y
        gbeta = g.sum(axis=lead) if lead else g
        return gx, ggamma, gbeta

    return _node(out, (x, gamma, beta), bw)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather from an embedding table; gradients scatter-add back."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"embedding ids must be integers, got {ids.dtype}")
    out = table.data[ids]

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return (full,)

    return _node(out, (table,), bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: scale kept units by 1/(1-rate) at train time."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    out = x.data * keep

    def bw(g):
        return (g * keep,)

    return _node(out, (x,), bw)


# ---------------------------------------------------------------------------
# backward pass


def backward(root: Tensor) -> None:
    """Populate ``grad`` on every requires_grad ancestor of a scalar root.

    Repeated calls accumulate gradients until they are explicitly cleared.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        raise ValueError("backward root does not require grad (not connected to the tape)")
    if root._backward_fn is not None:
        on_tape = {id(n) for n in _TAPE._nodes}
        if id(root) not in on_tape:
            raise ValueError("backward root is not on the active tape")

    reachable: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in reachable:
            continue
        reachable[id(t)] = t
        stack.extend(t._parents)

    adjoint: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(_TAPE._nodes):
        nid = id(node)
        if nid not in reachable or nid not in adjoint:
            continue
        # the popped adjoint is never reused, so it can be owned directly
        g = adjoint.pop(nid)
        node.grad = g if node.grad is None else node.grad + g
        parent_grads = node._backward_fn(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad:
                continue
            pid = id(p)
            if pid in adjoint:
                adjoint[pid] = adjoint[pid] + pg
            else:
                adjoint[pid] = pg

    # whatever is left belongs to leaves (and a leaf root), which the tape
    # never records
    for tid, g in adjoint.items():
        leaf = reachable[tid]
        if leaf.requires_grad:
            leaf.grad = g if leaf.grad is None else leaf.grad + g


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(loss_fn, params, h: float = 1e-4, tol: float = 1e-4, max_entries: int | None = None, rng: np.random.Generator | None = None):
    """Compare autodiff gradients against central finite differences.

    ``loss_fn`` must be a deterministic zero-argument callable returning a
    scalar Tensor; ``params`` is an iterable of (name, Tensor) pairs, all in
    double precision. Returns a list of per-parameter report dicts with the
    max relative error, where relative error uses a max(|a|, |fd|, 1e-8)
    denominator. ``max_entries`` optionally samples that many coordinates per
    parameter (deterministic given ``rng``); default checks every coordinate.
    """
    params = list(params)
    for name, t in params:
        if t.data.dtype != DOUBLE:
            raise ValueError(f"grad_check requires double precision, {name} is {t.data.dtype}")

    with no_grad():
        l1 = float(loss_fn().data)
        l2 = float(loss_fn().data)
    if l1 != l2:
        raise ValueError("loss_fn is non-deterministic (two forward passes differ); disable dropout")

    for _, t in params:
        t.grad = None
    loss = loss_fn()
    backward(loss)

    report = []
    for name, t in params:
        if t.grad is None:
            raise ValueError(f"parameter {name} received no gradient")
        flat = t.data.reshape(-1)
        gflat = t.grad.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            gen = rng if rng is not None else np.random.default_rng(0)
            idxs = gen.choice(n, size=max_entries, replace=False)
        else:
            idxs = range(n)
        max_rel = 0.0
        with no_grad():
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + h
                fp = float(loss_fn().data)
                flat[i] = orig - h
                fm = float(loss_fn().data)
                flat[i] = orig
                fd = (fp - fm) / (2.0 * h)
                a = float(gflat[i])
                rel = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
                if rel > max_rel:
                    max_rel = rel
        report.append({"name": name, "max_rel_err": max_rel, "ok": max_rel <= tol})
    return report
