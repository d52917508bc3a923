"""Dense tensors with reverse-mode differentiation.

A minimal numpy-backed tape: each Tensor remembers its parents and a
closure that accumulates gradients into them. Exactly the operations the
sequence model needs are provided: affine maps, embedding lookup, layer
normalization, masked softmax, squared ReLU, causal depthwise convolution
and token-level cross-entropy. Float64 is the default precision; float32
is available by constructing parameters with that dtype.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-d float array plus an optional gradient slot.

    Tensors built from differentiable ops hold references to their parent
    tensors and a backward closure; ``backward`` walks the resulting DAG in
    reverse topological order exactly once.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward_fn: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy() if g.base is not None or not g.flags.owndata else g
        else:
            self.grad = self.grad + g

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mul(sum_all(self), 1.0 / self.data.size)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- primitives ---------------------------------------------------------------


def add(a, b) -> Tensor:
    # python scalars stay scalars so float32 tensors are not upcast
    if isinstance(b, (int, float)):
        a = _as_tensor(a)
        b = float(b)  # numpy float64 scalars would still upcast float32
        data = a.data + b

        def bwd_scalar(g):
            if a.requires_grad:
                a._accumulate(g)

        return _make(data, (a,), bwd_scalar)
    if isinstance(a, (int, float)):
        return add(b, a)
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        a = _as_tensor(a)
        b = float(b)
        data = a.data * b

        def bwd_scalar(g):
            if a.requires_grad:
                a._accumulate(g * b)

        return _make(data, (a,), bwd_scalar)
    if isinstance(a, (int, float)):
        return mul(b, a)
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bwd)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have at least 2 dims")
    data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), bwd)


def getitem(x: Tensor, idx) -> Tensor:
    data = x.data[idx]

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, g)
            x._accumulate(gx)

    return _make(data, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    data = x.data.reshape(shape)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g.reshape(old))

    return _make(data, (x,), bwd)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    data = x.data.swapaxes(a, b)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g.swapaxes(a, b))

    return _make(data, (x,), bwd)


def concat(tensors: list, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        splits = np.cumsum(sizes)[:-1]
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(data, tensors, bwd)


def sum_all(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum())

    def bwd(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g, x.data.shape).astype(x.data.dtype))

    return _make(data, (x,), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: output shape = ids.shape + (embedding dim,)."""
    ids = np.asarray(ids)
    data = table.data[ids]

    def bwd(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
            table._accumulate(gt)

    return _make(data, (table,), bwd)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map along the last axis."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(
            f"linear: input width {x.data.shape[-1]} != weight rows {w.data.shape[0]}"
        )
    out = matmul(x, w)
    if b is not None:
        if b.data.shape != (w.data.shape[1],):
            raise ValueError("linear: bias shape must match weight columns")
        out = add(out, b)
    return out


def squared_relu(x: Tensor) -> Tensor:
    r = np.maximum(x.data, 0.0)
    data = r * r

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * (2.0 * r))

    return _make(data, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def bwd(g):
        n = x.data.shape[-1]
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, n).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (
                gh
                - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
            x._accumulate(gx)

    return _make(data, (x, gain, bias), bwd)


def softmax_lastaxis(x: Tensor, bias: Optional[np.ndarray] = None) -> Tensor:
    """Max-subtracted softmax over the last axis.

    ``bias`` is a constant additive term broadcastable to x; entries may be
    -inf (hard mask) or finite (distance penalties). A row with every entry
    masked is an error.
    """
    z = x.data if bias is None else x.data + bias
    zmax = z.max(axis=-1, keepdims=True)
    if not np.isfinite(zmax).all():
        raise ValueError("softmax: a row is fully masked (all -inf)")
    e = np.exp(z - zmax)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            gy = y * (g - (g * y).sum(axis=-1, keepdims=True))
            x._accumulate(_unbroadcast(gy, x.data.shape))

    return _make(y, (x,), bwd)


def causal_depthwise_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel convolution along axis 1 with k-1 zeros of left padding.

    x: [batch, seq, channels], kernel: [k, channels]. Output position t
    depends on input positions <= t only.
    """
    if x.data.ndim != 3 or kernel.data.ndim != 2:
        raise ValueError("conv expects x [b,s,c] and kernel [k,c]")
    if x.data.shape[2] != kernel.data.shape[1]:
        raise ValueError(
            f"conv channel mismatch: x has {x.data.shape[2]}, kernel has {kernel.data.shape[1]}"
        )
    k = kernel.data.shape[0]
    s = x.data.shape[1]
    data = np.zeros_like(x.data)
    for j in range(k):
        d = k - 1 - j  # delay of tap j
        if d >= s:
            continue
        if d == 0:
            data += kernel.data[j] * x.data
        else:
            data[:, d:, :] += kernel.data[j] * x.data[:, : s - d, :]

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for j in range(k):
                d = k - 1 - j
                if d >= s:
                    continue
                if d == 0:
                    gx += kernel.data[j] * g
                else:
                    gx[:, : s - d, :] += kernel.data[j] * g[:, d:, :]
            x._accumulate(gx)
        if kernel.requires_grad:
            gk = np.zeros_like(kernel.data)
            for j in range(k):
                d = k - 1 - j
                if d >= s:
                    continue
                if d == 0:
                    gk[j] = (g * x.data).sum(axis=(0, 1))
                else:
                    gk[j] = (g[:, d:, :] * x.data[:, : s - d, :]).sum(axis=(0, 1))
            kernel._accumulate(gk)

    return _make(data, (x, kernel), bwd)


def log_softmax_lastaxis(data: np.ndarray) -> np.ndarray:
    """Stable log-softmax on a plain array (inference helper, no grad)."""
    zmax = data.max(axis=-1, keepdims=True)
    z = data - zmax
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_id: Optional[int] = None) -> Tensor:
    """Mean negative log-likelihood per non-ignored target, in nats.

    logits: [..., vocab]; targets: integer array matching the leading shape.
    """
    targets = np.asarray(targets)
    if targets.shape != logits.data.shape[:-1]:
        raise ValueError("cross_entropy: target shape must match logits[:-1]")
    vocab = logits.data.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    tgt = targets.reshape(-1)
    if ignore_id is None:
        mask = np.ones(tgt.shape, dtype=bool)
    else:
        mask = tgt != ignore_id
    count = int(mask.sum())
    if count == 0:
        raise ValueError("cross_entropy: every target position is ignored")

    zmax = flat.max(axis=-1)
    lse = zmax + np.log(np.exp(flat - zmax[:, None]).sum(axis=-1))
    safe_tgt = np.where(mask, tgt, 0)
    picked = flat[np.arange(flat.shape[0]), safe_tgt]
    losses = np.where(mask, lse - picked, 0.0)
    data = np.asarray(losses.sum() / count)

    def bwd(g):
        if logits.requires_grad:
            probs = np.exp(flat - lse[:, None])
            probs[np.arange(flat.shape[0]), safe_tgt] -= 1.0
            probs[~mask] = 0.0
            gl = (float(g) / count) * probs
            logits._accumulate(gl.reshape(logits.data.shape))

    return _make(data, (logits,), bwd)


# -- graph --------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Propagate gradients from a scalar loss through the recorded graph."""
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)
            node._backward_fn = None  # each node fires once


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(
    f: Callable[..., Tensor],
    inputs: list[Tensor],
    eps: float = 1e-5,
    floor: float = 1e-6,
    max_entries_per_input: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    ``f`` is re-evaluated with entries of ``inputs`` perturbed in place.
    Entries whose gradients are below ``floor`` in magnitude are compared
    against ``floor`` to keep finite-difference noise from dominating.
    """
    for t in inputs:
        t.zero_grad()
    out = f(*inputs)
    backward(out)
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    with no_grad():
        for t, ad in zip(inputs, analytic):
            if ad is None:
                continue
            flat = t.data.reshape(-1)
            idxs = range(flat.size)
            if max_entries_per_input is not None and flat.size > max_entries_per_input:
                gen = rng if rng is not None else np.random.default_rng(0)
                idxs = gen.choice(flat.size, size=max_entries_per_input, replace=False)
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + eps
                hi = float(f(*inputs).data)
                flat[i] = orig - eps
                lo = float(f(*inputs).data)
                flat[i] = orig
                fd = (hi - lo) / (2.0 * eps)
                adv = float(ad.reshape(-1)[i])
                denom = max(abs(adv), abs(fd), floor)
                worst = max(worst, abs(adv - fd) / denom)
    return worst
