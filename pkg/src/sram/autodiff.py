"""Dense float64 tensors with a reverse-mode gradient tape.

Every tensor is an immutable value wrapping a C-contiguous float64 numpy
array.  Operations build an implicit tape (parent links plus a backward
closure per node); ``backward`` walks the tape once in reverse topological
order, which makes gradient accumulation deterministic down to the bit.
Forward passes that do not need gradients should run inside ``no_grad()``,
which skips all tape bookkeeping.
"""

from __future__ import annotations

import hashlib
import math
from contextlib import contextmanager

import numpy as np

from .errors import NumericError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (fast inference path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Immutable dense float64 array, optionally a leaf of the tape.

    ``data`` is the value, ``shape`` its dimensions.  Nodes produced by
    operations carry ``parents`` and a backward closure; gradients are
    staged on ``grad`` only while a backward pass is running.
    """

    __slots__ = ("data", "parents", "_bw", "requires", "grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.ascontiguousarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor values must be finite")
        self.data = arr
        self.parents = ()
        self._bw = None
        self.requires = bool(requires_grad)
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires={self.requires})"

    # arithmetic sugar; the module-level functions do the work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _const(data: np.ndarray) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.parents = ()
    t._bw = None
    t.requires = False
    t.grad = None
    return t


def _node(data, parents, bw) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.parents = parents
    t._bw = bw
    t.requires = True
    t.grad = None
    return t


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return _const(np.asarray(x, dtype=np.float64))


def _tracing(*tensors) -> bool:
    if not _grad_enabled:
        return False
    for t in tensors:
        if t.requires:
            return True
    return False


def _acc(node: Tensor, g: np.ndarray) -> None:
    if not node.requires:
        return
    node.grad = g if node.grad is None else node.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and broadcast arithmetic

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data
    if not _tracing(a, b):
        return _const(out)

    def bw(g, a=a, b=b):
        if a.requires:
            _acc(a, _unbroadcast(g, a.data.shape))
        if b.requires:
            _acc(b, _unbroadcast(g, b.data.shape))

    return _node(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data
    if not _tracing(a, b):
        return _const(out)

    def bw(g, a=a, b=b):
        if a.requires:
            _acc(a, _unbroadcast(g, a.data.shape))
        if b.requires:
            _acc(b, _unbroadcast(-g, b.data.shape))

    return _node(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data
    if not _tracing(a, b):
        return _const(out)

    def bw(g, a=a, b=b):
        if a.requires:
            _acc(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires:
            _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out, (a, b), bw)


def reciprocal(a) -> Tensor:
    a = _as_tensor(a)
    out = 1.0 / a.data
    if not _tracing(a):
        return _const(out)

    def bw(g, a=a, out=out):
        _acc(a, -g * out * out)

    return _node(out, (a,), bw)


def relu(a) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)
    if not _tracing(a):
        return _const(out)

    def bw(g, a=a, mask=a.data > 0):
        _acc(a, g * mask)

    return _node(out, (a,), bw)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-a.data))
    if not _tracing(a):
        return _const(out)

    def bw(g, a=a, out=out):
        _acc(a, g * out * (1.0 - out))

    return _node(out, (a,), bw)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = np.log(a.data)
    if not _tracing(a):
        return _const(out)

    def bw(g, a=a):
        _acc(a, g / a.data)

    return _node(out, (a,), bw)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only strictly inside."""
    a = _as_tensor(a)
    out = np.clip(a.data, lo, hi)
    if not _tracing(a):
        return _const(out)

    def bw(g, a=a, mask=(a.data > lo) & (a.data < hi)):
        _acc(a, g * mask)

    return _node(out, (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra

def _check_matmul_shapes(ad, bd):
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs 2-d or stacked operands, got {ad.shape} x {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {ad.shape} x {bd.shape}")
    if ad.ndim == bd.ndim:
        if ad.shape[:-2] != bd.shape[:-2]:
            raise ShapeError(f"matmul leading dimensions differ: {ad.shape} x {bd.shape}")
    elif min(ad.ndim, bd.ndim) != 2:
        raise ShapeError(f"matmul broadcast only supports a 2-d operand: {ad.shape} x {bd.shape}")


def matmul(a, b) -> Tensor:
    """Matrix product; stacked operands multiply frame by frame."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    _check_matmul_shapes(ad, bd)
    out = np.matmul(ad, bd)
    if not _tracing(a, b):
        return _const(out)

    def bw(g, a=a, b=b):
        if a.requires:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            if ga.ndim > a.data.ndim:
                ga = ga.sum(axis=tuple(range(ga.ndim - a.data.ndim)))
            _acc(a, ga)
        if b.requires:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            if gb.ndim > b.data.ndim:
                gb = gb.sum(axis=tuple(range(gb.ndim - b.data.ndim)))
            _acc(b, gb)

    return _node(out, (a, b), bw)


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("transpose needs at least 2 dimensions")
    out = np.ascontiguousarray(np.swapaxes(a.data, -1, -2))
    if not _tracing(a):
        return _const(out)

    def bw(g, a=a):
        _acc(a, np.swapaxes(g, -1, -2))

    return _node(out, (a,), bw)


def affine(x, w, b, activation: bool = False) -> Tensor:
    """x @ w + b as a single tape node, optionally through ReLU."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    _check_matmul_shapes(x.data, w.data)
    pre = np.matmul(x.data, w.data) + b.data
    out = np.maximum(pre, 0.0) if activation else pre
    if not _tracing(x, w, b):
        return _const(out)

    def bw(g, x=x, w=w, b=b, pre=pre, activation=activation):
        if activation:
            g = g * (pre > 0)
        if x.requires:
            _acc(x, np.matmul(g, w.data.T))
        if w.requires:
            k, n = w.data.shape
            _acc(w, np.matmul(x.data.reshape(-1, k).T, g.reshape(-1, n)))
        if b.requires:
            _acc(b, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _node(out, (x, w, b), bw)


def graph_affine(gmat, x, w, b, activation: bool = True) -> Tensor:
    """(G @ x) @ w + b as a single tape node, optionally through ReLU.

    The workhorse of every graph convolution branch; fusing it keeps the
    tape short enough for desk-scale training budgets.
    """
    gmat, x, w, b = _as_tensor(gmat), _as_tensor(x), _as_tensor(w), _as_tensor(b)
    _check_matmul_shapes(gmat.data, x.data)
    mixed = np.matmul(gmat.data, x.data)
    _check_matmul_shapes(mixed, w.data)
    pre = np.matmul(mixed, w.data) + b.data
    out = np.maximum(pre, 0.0) if activation else pre
    if not _tracing(gmat, x, w, b):
        return _const(out)

    def bw(g, gmat=gmat, x=x, w=w, b=b, mixed=mixed, pre=pre, activation=activation):
        if activation:
            g = g * (pre > 0)
        k, n = w.data.shape
        if w.requires:
            _acc(w, np.matmul(mixed.reshape(-1, k).T, g.reshape(-1, n)))
        if b.requires:
            _acc(b, g.reshape(-1, n).sum(axis=0))
        if gmat.requires or x.requires:
            gmixed = np.matmul(g, w.data.T)
            if gmat.requires:
                _acc(gmat, np.matmul(gmixed, np.swapaxes(x.data, -1, -2)))
            if x.requires:
                _acc(x, np.matmul(np.swapaxes(gmat.data, -1, -2), gmixed))

    return _node(out, (gmat, x, w, b), bw)


def dual_graph_affine(ga, gp, x, wa, wp, ba, bp, activation: bool = True) -> Tensor:
    """relu(Gp x Wp + bp) + relu(Ga x Wa + ba) as one tape node.

    Every graph-convolution branch pair in the model has this shape, so
    fusing it roughly halves the tape.  ``activation=False`` drops both
    ReLUs for a linear output head.
    """
    ga, gp, x = _as_tensor(ga), _as_tensor(gp), _as_tensor(x)
    wa, wp, ba, bp = _as_tensor(wa), _as_tensor(wp), _as_tensor(ba), _as_tensor(bp)
    _check_matmul_shapes(ga.data, x.data)
    mixed_a = np.matmul(ga.data, x.data)
    mixed_p = np.matmul(gp.data, x.data)
    _check_matmul_shapes(mixed_a, wa.data)
    pre_a = np.matmul(mixed_a, wa.data) + ba.data
    pre_p = np.matmul(mixed_p, wp.data) + bp.data
    if activation:
        out = np.maximum(pre_a, 0.0) + np.maximum(pre_p, 0.0)
    else:
        out = pre_a + pre_p
    if not _tracing(ga, gp, x, wa, wp, ba, bp):
        return _const(out)

    def bw(g, ga=ga, gp=gp, x=x, wa=wa, wp=wp, ba=ba, bp=bp,
           mixed_a=mixed_a, mixed_p=mixed_p, pre_a=pre_a, pre_p=pre_p,
           activation=activation):
        g_a = g * (pre_a > 0) if activation else g
        g_p = g * (pre_p > 0) if activation else g
        k, n = wa.data.shape
        if wa.requires:
            _acc(wa, np.matmul(mixed_a.reshape(-1, k).T, g_a.reshape(-1, n)))
        if wp.requires:
            _acc(wp, np.matmul(mixed_p.reshape(-1, k).T, g_p.reshape(-1, n)))
        if ba.requires:
            _acc(ba, g_a.reshape(-1, n).sum(axis=0))
        if bp.requires:
            _acc(bp, g_p.reshape(-1, n).sum(axis=0))
        need_x = x.requires
        if ga.requires or need_x:
            gm_a = np.matmul(g_a, wa.data.T)
            if ga.requires:
                _acc(ga, np.matmul(gm_a, np.swapaxes(x.data, -1, -2)))
        if gp.requires or need_x:
            gm_p = np.matmul(g_p, wp.data.T)
            if gp.requires:
                _acc(gp, np.matmul(gm_p, np.swapaxes(x.data, -1, -2)))
        if need_x:
            dx = np.matmul(np.swapaxes(ga.data, -1, -2), gm_a)
            dx += np.matmul(np.swapaxes(gp.data, -1, -2), gm_p)
            _acc(x, dx)

    return _node(out, (ga, gp, x, wa, wp, ba, bp), bw)


def temporal_conv3(s, kernel, bias) -> Tensor:
    """Length-3 temporal convolution over the frame axis, then ReLU.

    ``s`` is [..., t, N, h] with frames on axis -3; ``kernel`` is [3, h, h]
    (previous, current, next taps); ``bias`` is [h].  Zero padding keeps
    the frame count.
    """
    s, kernel, bias = _as_tensor(s), _as_tensor(kernel), _as_tensor(bias)
    sd = s.data
    if sd.ndim < 3:
        raise ShapeError(f"temporal_conv3 input must be [..., t, N, h], got {sd.shape}")
    if kernel.data.shape != (3, sd.shape[-1], sd.shape[-1]):
        raise ShapeError(f"temporal kernel shape {kernel.data.shape} does not match input {sd.shape}")
    zeros = np.zeros_like(sd[..., :1, :, :])
    prev = np.concatenate([zeros, sd[..., :-1, :, :]], axis=-3)
    nxt = np.concatenate([sd[..., 1:, :, :], zeros], axis=-3)
    k0, k1, k2 = kernel.data
    pre = np.matmul(prev, k0) + np.matmul(sd, k1) + np.matmul(nxt, k2) + bias.data
    out = np.maximum(pre, 0.0)
    if not _tracing(s, kernel, bias):
        return _const(out)

    def bw(g, s=s, kernel=kernel, bias=bias, prev=prev, nxt=nxt, pre=pre):
        g = g * (pre > 0)
        h = pre.shape[-1]
        gf = g.reshape(-1, h)
        if kernel.requires:
            sd = s.data
            dk = np.stack([
                prev.reshape(-1, h).T @ gf,
                sd.reshape(-1, sd.shape[-1]).T @ gf,
                nxt.reshape(-1, h).T @ gf,
            ])
            _acc(kernel, dk)
        if bias.requires:
            _acc(bias, gf.sum(axis=0))
        if s.requires:
            k0, k1, k2 = kernel.data
            ds = np.matmul(g, k1.T)
            gk0 = np.matmul(g, k0.T)
            gk2 = np.matmul(g, k2.T)
            ds[..., :-1, :, :] += gk0[..., 1:, :, :]   # pre[t] used s[t-1] via k0
            ds[..., 1:, :, :] += gk2[..., :-1, :, :]   # pre[t] used s[t+1] via k2
            _acc(s, ds)

    return _node(out, (s, kernel, bias), bw)


# ---------------------------------------------------------------------------
# reductions, selection, distances

def softmax_rows(a) -> Tensor:
    """Row-wise softmax over the last axis with max subtraction."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    if not _tracing(a):
        return _const(out)

    def bw(g, a=a, out=out):
        inner = (g * out).sum(axis=-1, keepdims=True)
        _acc(a, (g - inner) * out)

    return _node(out, (a,), bw)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out = np.asarray(a.data.sum())
    if not _tracing(a):
        return _const(out)

    def bw(g, a=a):
        _acc(a, np.broadcast_to(g, a.data.shape))

    return _node(out, (a,), bw)


def row_sums(a) -> Tensor:
    """Sum over the last axis, keeping it as size 1."""
    a = _as_tensor(a)
    out = a.data.sum(axis=-1, keepdims=True)
    if not _tracing(a):
        return _const(out)

    def bw(g, a=a):
        _acc(a, np.broadcast_to(g, a.data.shape))

    return _node(out, (a,), bw)


def mean_axis(a, axis: int) -> Tensor:
    """Mean along one axis (removed from the result)."""
    a = _as_tensor(a)
    out = a.data.mean(axis=axis)
    if not _tracing(a):
        return _const(out)

    def bw(g, a=a, axis=axis):
        scaled = np.expand_dims(g / a.data.shape[axis], axis)
        _acc(a, np.broadcast_to(scaled, a.data.shape))

    return _node(out, (a,), bw)


def mean_frames(a) -> Tensor:
    """Mean over the frame axis (-3) of an [..., t, N, h] tensor."""
    return mean_axis(a, -3)


def frame(a, index: int) -> Tensor:
    """Select one frame along axis -3 of an [..., t, N, h] tensor."""
    a = _as_tensor(a)
    if a.ndim < 3:
        raise ShapeError(f"frame expects at least 3 dimensions, got {a.shape}")
    out = np.ascontiguousarray(a.data[..., index, :, :])
    if not _tracing(a):
        return _const(out)

    def bw(g, a=a, index=index):
        z = np.zeros_like(a.data)
        z[..., index, :, :] = g
        _acc(a, z)

    return _node(out, (a,), bw)


def concat0(tensors) -> Tensor:
    """Concatenate along the existing leading axis."""
    tensors = tuple(_as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=0)
    if not _tracing(*tensors):
        return _const(out)

    def bw(g, tensors=tensors):
        offset = 0
        for t in tensors:
            size = t.data.shape[0]
            if t.requires:
                _acc(t, g[offset:offset + size])
            offset += size

    return _node(out, tensors, bw)


def col_max(a) -> Tensor:
    """Column-wise max over the rows of an [N, d] matrix, kept as [1, d].

    Ties route the gradient to the lowest row index, so backward is
    deterministic.
    """
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"col_max expects a 2-d input, got {a.shape}")
    idx = np.argmax(a.data, axis=0)
    out = a.data[idx, np.arange(a.data.shape[1])][None, :]
    if not _tracing(a):
        return _const(out)

    def bw(g, a=a, idx=idx):
        z = np.zeros_like(a.data)
        z[idx, np.arange(a.data.shape[1])] = g[0]
        _acc(a, z)

    return _node(out, (a,), bw)


def stack0(tensors) -> Tensor:
    """Stack same-shaped tensors along a new leading axis."""
    tensors = tuple(_as_tensor(t) for t in tensors)
    out = np.stack([t.data for t in tensors])
    if not _tracing(*tensors):
        return _const(out)

    def bw(g, tensors=tensors):
        for i, t in enumerate(tensors):
            if t.requires:
                _acc(t, g[i])

    return _node(out, tensors, bw)


def amax(a, axis: int) -> Tensor:
    """Max along one axis (kept as size 1); ties route to the lowest index."""
    a = _as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if not _tracing(a):
        return _const(out)

    def bw(g, a=a, idx=idx, axis=axis):
        z = np.zeros_like(a.data)
        np.put_along_axis(z, np.expand_dims(idx, axis), g, axis=axis)
        _acc(a, z)

    return _node(out, (a,), bw)


def pairwise_dist(b) -> Tensor:
    """Euclidean distance matrix between the rows of [..., N, 2] points.

    The diagonal is zero; its (undefined) gradient contribution is dropped.
    """
    b = _as_tensor(b)
    diff = b.data[..., :, None, :] - b.data[..., None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    if not _tracing(b):
        return _const(dist)

    def bw(g, b=b, diff=diff, dist=dist):
        unit = diff / np.maximum(dist, 1e-12)[..., None]
        gsym = g + np.swapaxes(g, -1, -2)
        _acc(b, (gsym[..., None] * unit).sum(axis=-2))

    return _node(dist, (b,), bw)


def mse(a, b) -> Tensor:
    """Total squared difference; callers apply their own normalization."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse operands differ in shape: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = np.asarray((diff * diff).sum())
    if not _tracing(a, b):
        return _const(out)

    def bw(g, a=a, b=b, diff=diff):
        scaled = (2.0 * float(g)) * diff
        if a.requires:
            _acc(a, scaled)
        if b.requires:
            _acc(b, -scaled)

    return _node(out, (a, b), bw)


# ---------------------------------------------------------------------------
# parameters and the backward pass

class ParamStore:
    """Ordered map from name to leaf tensor; iteration is lexicographic.

    Shapes are frozen per name once registered.  ``subset`` returns a view
    sharing the same backing dict, so updates through either are seen by
    both.
    """

    def __init__(self, _backing: dict | None = None, _prefixes: tuple = ()):
        self._entries: dict[str, Tensor] = {} if _backing is None else _backing
        self._prefixes = _prefixes

    def _visible(self, name: str) -> bool:
        return not self._prefixes or name.startswith(self._prefixes)

    def add(self, name: str, values) -> Tensor:
        if name in self._entries:
            raise ShapeError(f"parameter {name!r} already registered")
        t = Tensor(values, requires_grad=True)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries and self._visible(name)

    def __len__(self) -> int:
        return len(self.names())

    def names(self) -> list[str]:
        return sorted(n for n in self._entries if self._visible(n))

    def items(self):
        return [(n, self._entries[n]) for n in self.names()]

    def set_value(self, name: str, values) -> None:
        old = self._entries[name]
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        if t.data.shape != old.data.shape:
            raise ShapeError(
                f"parameter {name!r} shape is fixed at {old.data.shape}, got {t.data.shape}"
            )
        self._entries[name] = t

    def subset(self, prefixes) -> "ParamStore":
        if isinstance(prefixes, str):
            prefixes = (prefixes,)
        return ParamStore(_backing=self._entries, _prefixes=tuple(prefixes))

    def n_coords(self) -> int:
        return sum(t.data.size for _, t in self.items())

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, t in self.items():
            h.update(name.encode())
            h.update(t.data.tobytes())
        return h.hexdigest()


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        nid = id(node)
        if nid in seen:
            continue
        seen.add(nid)
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: ParamStore) -> dict[str, Tensor]:
    """Reverse-mode gradients of a scalar loss for every store entry.

    Parameters that do not influence the loss receive zero gradients.
    """
    if not isinstance(loss, Tensor):
        raise ShapeError("loss must be a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")
    order = _topo(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._bw is not None and node.grad is not None:
            node._bw(node.grad)
    grads: dict[str, Tensor] = {}
    for name, leaf in params.items():
        if leaf.grad is None:
            grads[name] = _const(np.zeros_like(leaf.data))
        else:
            if not np.isfinite(leaf.grad).all():
                raise NumericError(f"gradient of {name!r} is not finite")
            grads[name] = _const(leaf.grad)
    for node in order:
        node.grad = None
    return grads


def finite_diff_check(f, params: ParamStore, h: float = 1e-5,
                      jitter: float = 1e-3, seed: int = 0) -> float:
    """Compare tape gradients of ``f(params)`` against central differences.

    Returns max over coordinates of |analytic - numeric| / max(1, |analytic|,
    |numeric|).  Parameters are jittered by uniform(-jitter, jitter) before
    probing so ReLU kinks are almost surely not hit exactly; central
    differences are invalid at nondifferentiable points.  Original values
    are restored afterwards.
    """
    rng = np.random.default_rng(seed)
    names = params.names()
    originals = {name: params[name].data for name in names}
    try:
        if jitter:
            for name in names:
                params.set_value(name, originals[name] + rng.uniform(-jitter, jitter, originals[name].shape))
        grads = backward(f(params), params)
        max_err = 0.0
        for name in names:
            base = params[name].data
            work = base.copy()
            ana_flat = grads[name].data.ravel()
            for i in range(work.size):
                orig = work.flat[i]
                work.flat[i] = orig + h
                params.set_value(name, work)
                with no_grad():
                    up = float(f(params).data)
                work.flat[i] = orig - h
                params.set_value(name, work)
                with no_grad():
                    down = float(f(params).data)
                work.flat[i] = orig
                numeric = (up - down) / (2.0 * h)
                analytic = ana_flat[i]
                err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
                if err > max_err:
                    max_err = err
            params.set_value(name, base)
        return max_err
    finally:
        for name in names:
            params.set_value(name, originals[name])


def xavier_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape)
