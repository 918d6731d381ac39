"""Minimal reverse-mode autodiff over numpy arrays.

Provides exactly the differentiable operations the backbone and heads
need: n-d cross-correlation (1/2/3-d) and its transposed variants, linear
layers, relu, pooling, concatenation, softmax, and soft-target cross
entropy. Forward passes never mutate inputs; gradients accumulate into
``Tensor.grad`` buffers during :meth:`Tensor.backward`.

Convolutions use channels-last layout: inputs are (B, *spatial, C_in),
kernels (*k, C_in, C_out). Transposed convolutions invert the stride-2
shape map exactly (output_padding defaults to stride - 1).
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction (forward values only) within the block."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def _unbroadcast(target_shape, g):
    """Sum gradient ``g`` down to ``target_shape`` after numpy broadcasting."""
    while g.ndim > len(target_shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(target_shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    """A numpy array plus the graph bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or (
            _grad_enabled and any(p.requires_grad for p in parents)
        )
        self._parents = parents if self.requires_grad else ()
        self._backward = backward_fn if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, gradient=None):
        """Backpropagate from this tensor (defaults to d(self)/d(self) = 1)."""
        if gradient is None:
            gradient = np.ones_like(self.data)
        self.accumulate_grad(np.asarray(gradient, dtype=self.data.dtype))
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def backward_fn(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(a.shape, g))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(b.shape, g))

        return Tensor(a.data + b.data, parents=(a, b), backward_fn=backward_fn)

    __radd__ = __add__

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def backward_fn(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(a.shape, g * b.data))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(b.shape, g * a.data))

        return Tensor(a.data * b.data, parents=(a, b), backward_fn=backward_fn)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def sum(self):
        src = self

        def backward_fn(g):
            src.accumulate_grad(np.broadcast_to(g, src.shape).astype(src.dtype))

        return Tensor(
            np.asarray(self.data.sum(), dtype=self.dtype),
            parents=(self,),
            backward_fn=backward_fn,
        )

    def item(self) -> float:
        return float(self.data)


class Parameter(Tensor):
    """Trainable tensor with persistent Adam moment buffers."""

    __slots__ = ("name", "m", "v")

    def __init__(self, data, name=""):
        super().__init__(np.array(data), requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)


def uniform_init(shape, fan_in, rng, dtype=np.float32, gain=1.0) -> np.ndarray:
    """Uniform in +-gain*sqrt(1/fan_in).

    gain=1 is the plain fan-in rule; relu stacks need gain=sqrt(6) to keep
    activation variance from collapsing with depth.
    """
    bound = float(gain * np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


RELU_GAIN = float(np.sqrt(6.0))


# -- structural ops ----------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    src_shape = x.shape

    def backward_fn(g):
        x.accumulate_grad(g.reshape(src_shape))

    return Tensor(x.data.reshape(shape), parents=(x,), backward_fn=backward_fn)


def moveaxis(x: Tensor, source, destination) -> Tensor:
    def backward_fn(g):
        x.accumulate_grad(np.moveaxis(g, destination, source))

    return Tensor(
        np.moveaxis(x.data, source, destination), parents=(x,), backward_fn=backward_fn
    )


def concat(tensors, axis=-1) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(idx)])

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        parents=tensors,
        backward_fn=backward_fn,
    )


def split(x: Tensor, sizes, axis=-1):
    """Inverse of :func:`concat`; returns one tensor per requested size."""
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split sizes {sizes} do not cover axis of {x.shape[axis]}")
    outs = []
    lo = 0
    for size in sizes:
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(lo, lo + size)
        idx = tuple(idx)

        def backward_fn(g, idx=idx):
            buf = np.zeros_like(x.data)
            buf[idx] = g
            x.accumulate_grad(buf)

        outs.append(Tensor(x.data[idx], parents=(x,), backward_fn=backward_fn))
        lo += size
    return tuple(outs)


# -- pointwise and dense ops -------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward_fn(g):
        x.accumulate_grad(g * mask)

    return Tensor(x.data * mask, parents=(x,), backward_fn=backward_fn)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w (+ b); x is (..., D_in), w is (D_in, D_out)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != weight dim {w.shape[0]}")
    y = x.data @ w.data
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward_fn(g):
        if x.requires_grad:
            x.accumulate_grad(g @ w.data.T)
        if w.requires_grad:
            xm = x.data.reshape(-1, x.shape[-1])
            gm = g.reshape(-1, g.shape[-1])
            w.accumulate_grad(xm.T @ gm)
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return Tensor(y, parents=parents, backward_fn=backward_fn)


def softmax(x: Tensor, axis=-1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        x.accumulate_grad(p * (g - dot))

    return Tensor(p, parents=(x,), backward_fn=backward_fn)


def soft_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean over rows of -sum_i target[i] * log softmax(logits)[i].

    ``target`` rows must sum to 1; it is a constant (no gradient flows
    into it). Gradient wrt logits is (softmax - target) / rows.
    """
    target = np.asarray(target, dtype=logits.dtype)
    if target.shape != logits.shape:
        raise ShapeError(
            f"target shape {target.shape} != logits shape {logits.shape}"
        )
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True)) + zmax
    rows = int(np.prod(z.shape[:-1])) if z.ndim > 1 else 1
    loss = float((target * (lse - z)).sum() / rows)

    def backward_fn(g):
        p = np.exp(z - lse)
        logits.accumulate_grad((p - target) * (g / rows))

    return Tensor(
        np.asarray(loss, dtype=logits.dtype), parents=(logits,), backward_fn=backward_fn
    )


# -- pooling -----------------------------------------------------------------


def avg_pool(x: Tensor, window) -> Tensor:
    """Non-overlapping average pooling over the spatial axes of (B, *sp, C).

    Window entries of 1 leave that axis untouched; spatial extents must be
    divisible by the window.
    """
    window = tuple(window)
    nd = len(window)
    if x.ndim != nd + 2:
        raise ShapeError(f"avg_pool window {window} needs rank {nd + 2} input")
    spatial = x.shape[1 : 1 + nd]
    for s, w in zip(spatial, window):
        if w < 1 or s % w:
            raise ShapeError(f"spatial extent {s} not divisible by window {w}")
    new_shape = [x.shape[0]]
    for s, w in zip(spatial, window):
        new_shape += [s // w, w]
    new_shape.append(x.shape[-1])
    reduce_axes = tuple(2 + 2 * i for i in range(nd))
    y = x.data.reshape(new_shape).mean(axis=reduce_axes)
    scale = 1.0 / float(np.prod(window))

    def backward_fn(g):
        ge = g
        for i, w in enumerate(window):
            ge = np.repeat(ge, w, axis=1 + i)
        x.accumulate_grad(ge * scale)

    return Tensor(y, parents=(x,), backward_fn=backward_fn)


def global_average_pool(x: Tensor) -> Tensor:
    """Mean over every axis between batch and channels: (B, *sp, C) -> (B, C)."""
    axes = tuple(range(1, x.ndim - 1))
    count = float(np.prod([x.shape[a] for a in axes]))
    y = x.data.mean(axis=axes)

    def backward_fn(g):
        shape = (x.shape[0],) + (1,) * len(axes) + (x.shape[-1],)
        x.accumulate_grad(np.broadcast_to(g.reshape(shape), x.shape) / count)

    return Tensor(y, parents=(x,), backward_fn=backward_fn)


# -- convolutions ------------------------------------------------------------


def _as_tuple(v, nd):
    if np.isscalar(v):
        return (int(v),) * nd
    v = tuple(int(i) for i in v)
    if len(v) != nd:
        raise ShapeError(f"expected {nd} entries, got {v}")
    return v


def _conv_nd(x: Tensor, w: Tensor, b: Tensor | None, stride, padding) -> Tensor:
    nd = w.ndim - 2
    ksize = w.shape[:nd]
    stride = _as_tuple(stride, nd)
    padding = _as_tuple(padding, nd)
    if x.ndim != nd + 2:
        raise ShapeError(f"conv{nd}d expects rank {nd + 2} input, got {x.shape}")
    if x.shape[-1] != w.shape[nd]:
        raise ShapeError(
            f"conv{nd}d: input channels {x.shape[-1]} != kernel channels {w.shape[nd]}"
        )
    batch = x.shape[0]
    spatial = x.shape[1 : 1 + nd]
    out_sp = []
    for s, k, st, p in zip(spatial, ksize, stride, padding):
        o = (s + 2 * p - k) // st + 1
        if o < 1:
            raise ShapeError(f"conv{nd}d: kernel {k} too large for extent {s} (pad {p})")
        out_sp.append(o)
    out_sp = tuple(out_sp)
    c_out = w.shape[-1]

    pad_spec = [(0, 0)] + [(p, p) for p in padding] + [(0, 0)]
    xp = np.pad(x.data, pad_spec)
    c_in = x.shape[-1]
    k_last = ksize[-1]
    rows = batch * int(np.prod(out_sp))

    # fold the innermost kernel dimension into the channel axis once, so the
    # remaining per-offset GEMMs contract over k_last * C_in instead of C_in;
    # on skinny channel counts this is what keeps the op BLAS-bound
    win = sliding_window_view(xp, (k_last,), axis=(nd,))
    xz = np.ascontiguousarray(np.moveaxis(win, nd + 1, nd + 2))
    lead = xz.shape[: nd + 1]  # (B, padded leading spatial..., window count)
    xz = xz.reshape(lead + (k_last * c_in,))
    wz = w.data.reshape(ksize[:-1] + (k_last * c_in, c_out))
    head_offsets = list(np.ndindex(*ksize[:-1]))

    def head_slices(off):
        sl = [slice(None)]
        for i in range(nd - 1):
            sl.append(slice(off[i], off[i] + stride[i] * out_sp[i], stride[i]))
        sl.append(slice(0, stride[-1] * out_sp[-1], stride[-1]))
        sl.append(slice(None))
        return tuple(sl)

    y = np.zeros((rows, c_out), dtype=x.dtype)
    for off in head_offsets:
        xs = xz[head_slices(off)].reshape(rows, k_last * c_in)
        np.add(y, xs @ wz[off], out=y)
    if b is not None:
        y = y + b.data
    y = y.reshape((batch,) + out_sp + (c_out,))
    parents = (x, w) if b is None else (x, w, b)

    def backward_fn(g):
        gm = np.ascontiguousarray(g.reshape(rows, c_out))
        if w.requires_grad:
            dw = np.empty(ksize[:-1] + (k_last * c_in, c_out), dtype=w.dtype)
            for off in head_offsets:
                xs = xz[head_slices(off)].reshape(rows, k_last * c_in)
                dw[off] = xs.T @ gm
            w.accumulate_grad(dw.reshape(w.shape))
        if b is not None and b.requires_grad:
            b.accumulate_grad(gm.sum(axis=0))
        if x.requires_grad:
            dxz = np.zeros(lead + (k_last * c_in,), dtype=x.dtype)
            view_shape = (batch,) + out_sp + (k_last * c_in,)
            for off in head_offsets:
                dxz[head_slices(off)] += (gm @ wz[off].T).reshape(view_shape)
            dxz = dxz.reshape(lead + (k_last, c_in))
            dxp = np.zeros_like(xp)
            window_count = lead[nd]
            base = (slice(None),) * nd
            for kz in range(k_last):
                dxp[base + (slice(kz, kz + window_count), slice(None))] += dxz[
                    ..., kz, :
                ]
            unpad = (slice(None),) + tuple(
                slice(p, p + s) for p, s in zip(padding, spatial)
            )
            x.accumulate_grad(dxp[unpad])

    return Tensor(y, parents=parents, backward_fn=backward_fn)


def conv1d(x, w, b=None, stride=1, padding=0):
    return _conv_nd(x, w, b, stride, padding)


def conv2d(x, w, b=None, stride=1, padding=0):
    return _conv_nd(x, w, b, stride, padding)


def conv3d(x, w, b=None, stride=1, padding=0):
    return _conv_nd(x, w, b, stride, padding)


def _tconv_nd(
    x: Tensor, w: Tensor, b: Tensor | None, stride, padding, output_padding
) -> Tensor:
    nd = w.ndim - 2
    ksize = w.shape[:nd]
    stride = _as_tuple(stride, nd)
    padding = _as_tuple(padding, nd)
    output_padding = _as_tuple(output_padding, nd)
    if x.ndim != nd + 2:
        raise ShapeError(f"tconv{nd}d expects rank {nd + 2} input, got {x.shape}")
    if x.shape[-1] != w.shape[nd]:
        raise ShapeError(
            f"tconv{nd}d: input channels {x.shape[-1]} != kernel channels {w.shape[nd]}"
        )
    for op, p in zip(output_padding, padding):
        if op > p:
            raise ShapeError("output_padding must not exceed padding")
    batch = x.shape[0]
    spatial = x.shape[1 : 1 + nd]
    full_sp = tuple((s - 1) * st + k for s, st, k in zip(spatial, stride, ksize))
    out_sp = tuple(
        (s - 1) * st - 2 * p + k + op
        for s, st, k, p, op in zip(spatial, stride, ksize, padding, output_padding)
    )
    if any(o < 1 for o in out_sp):
        raise ShapeError(f"tconv{nd}d: degenerate output shape {out_sp}")
    c_out = w.shape[-1]

    def scatter_slices(off):
        return (slice(None),) + tuple(
            slice(off[i], off[i] + stride[i] * spatial[i], stride[i]) for i in range(nd)
        )

    out_full = np.zeros((batch,) + full_sp + (c_out,), dtype=x.dtype)
    for off in np.ndindex(*ksize):
        out_full[scatter_slices(off)] += np.tensordot(
            x.data, w.data[off], axes=([-1], [0])
        )
    crop = (slice(None),) + tuple(slice(p, p + o) for p, o in zip(padding, out_sp))
    y = out_full[crop]
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward_fn(g):
        g_full = np.zeros((batch,) + full_sp + (c_out,), dtype=g.dtype)
        g_full[crop] = g
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            for off in np.ndindex(*ksize):
                dx += np.tensordot(g_full[scatter_slices(off)], w.data[off], axes=([-1], [1]))
            x.accumulate_grad(dx)
        if w.requires_grad:
            dw = np.zeros_like(w.data)
            axes_in = list(range(nd + 1))
            for off in np.ndindex(*ksize):
                dw[off] = np.tensordot(
                    x.data, g_full[scatter_slices(off)], axes=(axes_in, axes_in)
                )
            w.accumulate_grad(dw)
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.reshape(-1, c_out).sum(axis=0))

    return Tensor(y, parents=parents, backward_fn=backward_fn)


def transposed_conv1d(x, w, b=None, stride=2, padding=1, output_padding=1):
    return _tconv_nd(x, w, b, stride, padding, output_padding)


def transposed_conv2d(x, w, b=None, stride=2, padding=1, output_padding=1):
    return _tconv_nd(x, w, b, stride, padding, output_padding)


def separable_conv3d(x, w_spatial, w_temporal, b=None, padding=1):
    """Factorized 3-d convolution: spatial (1, k, k) then temporal (k, 1, 1).

    Cheaper alternative to a dense kernel; ``w_spatial`` is
    (1, k, k, C_in, C_mid) and ``w_temporal`` (k, 1, 1, C_mid, C_out).
    """
    if w_spatial.shape[0] != 1 or w_temporal.shape[1:3] != (1, 1):
        raise ShapeError("separable kernels must be (1,k,k,...) and (k,1,1,...)")
    mid = _conv_nd(x, w_spatial, None, stride=1, padding=(0, padding, padding))
    return _conv_nd(mid, w_temporal, b, stride=1, padding=(padding, 0, 0))


# -- gradient verification ---------------------------------------------------


@dataclass
class FDReport:
    """Outcome of a finite-difference gradient check."""

    max_rel_err: float
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def finite_difference_check(
    fn,
    tensors,
    tolerance=1e-4,
    step=1e-5,
    max_coords_per_tensor=None,
    rng=None,
) -> FDReport:
    """Compare analytic gradients of scalar-valued ``fn()`` against central
    finite differences.

    ``fn`` must rebuild its graph on every call from the live ``tensors``
    (their ``.data`` is perturbed in place between evaluations). When
    ``max_coords_per_tensor`` is set, a random coordinate subset per tensor
    is probed instead of every entry.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.zero_grad()
    out = fn()
    if out.data.size != 1:
        raise ShapeError("finite_difference_check requires a scalar output")
    out.backward()
    analytic = [
        np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors
    ]

    max_rel = 0.0
    checked = 0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(n)
        for i in coords:
            orig = flat[i]
            h = step * max(1.0, abs(orig))
            flat[i] = orig + h
            f_plus = float(fn().data)
            flat[i] = orig - h
            f_minus = float(fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(ga.reshape(-1)[i])
            denom = max(abs(a), abs(numeric), 1e-8)
            max_rel = max(max_rel, abs(a - numeric) / denom)
            checked += 1
    return FDReport(max_rel_err=max_rel, checked=checked, tolerance=tolerance)
