"""Minimal reverse-mode autodiff over numpy arrays (NHWC layout).

Covers exactly the ops the matting networks and losses need: convolution,
ReLU, sigmoid, channel concat, bilinear/nearest resize, residual add,
clamping, reductions, and edge-clamped fixed-kernel filtering.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import as_strided

# Training runs in float32 for speed; gradient-check tests switch to float64.
DTYPE = np.float32


@contextmanager
def use_dtype(dtype):
    global DTYPE
    previous = DTYPE
    DTYPE = dtype
    try:
        yield
    finally:
        DTYPE = previous


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def backward(self):
        if self.data.shape != ():
            raise ValueError("backward() requires a scalar loss")
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t.parents:
                visit(p)
            topo.append(t)

        visit(self)
        for t in topo:
            if t.requires_grad:
                t.grad = np.zeros_like(t.data)
        self.grad = np.ones_like(self.data)
        for t in reversed(topo):
            if t.backward_fn is not None and t.requires_grad and t.grad is not None:
                t.backward_fn(t.grad)


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _accum(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        t.grad += g


def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        _accum(a, g)
        _accum(b, g)
    return Tensor(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        _accum(a, g)
        _accum(b, -g)
    return Tensor(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)
    return Tensor(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    def bwd(g):
        _accum(a, g * s)
    return Tensor(a.data * s, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        _accum(a, g * mask)
    return Tensor(a.data * mask, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        _accum(a, g * out * (1.0 - out))
    return Tensor(out, (a,), bwd)


def clamp01(a: Tensor) -> Tensor:
    inside = (a.data > 0.0) & (a.data < 1.0)

    def bwd(g):
        _accum(a, g * inside)
    return Tensor(np.clip(a.data, 0.0, 1.0), (a,), bwd)


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def bwd(g):
        _accum(a, g * sign)
    return Tensor(np.abs(a.data), (a,), bwd)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def bwd(g):
        _accum(a, np.full_like(a.data, g / n))
    return Tensor(a.data.mean(), (a,), bwd)


def total(a: Tensor) -> Tensor:
    def bwd(g):
        _accum(a, np.full_like(a.data, g))
    return Tensor(a.data.sum(), (a,), bwd)


def concat_channels(tensors) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[3] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, o0, o1 in zip(tensors, offsets[:-1], offsets[1:]):
            _accum(t, g[..., o0:o1])
    return Tensor(np.concatenate([t.data for t in tensors], axis=3), tuple(tensors), bwd)


# --------------------------------------------------------------------------
# Convolution (edge-replicated padding, square stride)

def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """View of shape (N, Ho, Wo, kh, kw, C) over the padded NHWC input."""
    n, h, w, c = xp.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    sn, sh, sw, sc = xp.strides
    return as_strided(xp, (n, ho, wo, kh, kw, c),
                      (sn, sh * stride, sw * stride, sh, sw, sc), writeable=False)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 1) -> Tensor:
    """x is (N, H, W, C); weight is (O, C, kh, kw); output (N, Ho, Wo, O)."""
    o, c, kh, kw = weight.data.shape
    # Edge replication keeps constant inputs constant through the whole net.
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)), mode="edge")
    win = _windows(xp, kh, kw, stride)
    n, ho, wo = win.shape[:3]
    # im2col: (N*Ho*Wo, kh*kw*C) against kernels (kh*kw*C, O), BLAS-backed.
    cols = np.ascontiguousarray(win).reshape(n * ho * wo, kh * kw * c)
    w2d = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0)).reshape(kh * kw * c, o)
    out = (cols @ w2d).reshape(n, ho, wo, o)
    out += bias.data

    def bwd(g):
        g2d = g.reshape(n * ho * wo, o)
        if weight.requires_grad:
            weight.grad += (cols.T @ g2d).reshape(kh, kw, c, o).transpose(3, 2, 0, 1)
        if bias.requires_grad:
            bias.grad += g.sum(axis=(0, 1, 2))
        if x.requires_grad:
            dcols = (g2d @ w2d.T).reshape(n, ho, wo, kh, kw, c)
            dxp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    dxp[:, u:u + ho * stride:stride, v:v + wo * stride:stride] += \
                        dcols[:, :, :, u, v]
            h, w = x.data.shape[1], x.data.shape[2]
            # Adjoint of edge replication: fold padded borders onto edge pixels.
            rows = dxp[:, pad:pad + h]
            if pad:
                rows[:, 0] += dxp[:, :pad].sum(axis=1)
                rows[:, -1] += dxp[:, pad + h:].sum(axis=1)
            core = rows[:, :, pad:pad + w]
            if pad:
                core[:, :, 0] += rows[:, :, :pad].sum(axis=2)
                core[:, :, -1] += rows[:, :, pad + w:].sum(axis=2)
            x.grad += core
    return Tensor(out, (x, weight, bias), bwd)


# --------------------------------------------------------------------------
# Resizing

def _bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Dense (n_out, n_in) interpolation matrix: pixel centers, edge-clamped."""
    m = np.zeros((n_out, n_in))
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = np.clip(pos - i0, 0.0, 1.0)
    np.add.at(m, (np.arange(n_out), i0), 1.0 - w)
    np.add.at(m, (np.arange(n_out), i1), w)
    return m


def resize_bilinear(x: Tensor, new_h: int, new_w: int) -> Tensor:
    h, w = x.data.shape[1], x.data.shape[2]
    rows = _bilinear_matrix(new_h, h).astype(x.data.dtype)
    cols = _bilinear_matrix(new_w, w).astype(x.data.dtype)
    xt = x.data.transpose(0, 3, 1, 2)
    out = (rows @ xt @ cols.T).transpose(0, 2, 3, 1)

    def bwd(g):
        if x.requires_grad:
            gt = g.transpose(0, 3, 1, 2)
            x.grad += (rows.T @ gt @ cols).transpose(0, 2, 3, 1)
    return Tensor(out, (x,), bwd)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    out = x.data.repeat(factor, axis=1).repeat(factor, axis=2)

    def bwd(g):
        if x.requires_grad:
            n, h, w, c = x.data.shape
            x.grad += g.reshape(n, h, factor, w, factor, c).sum(axis=(2, 4))
    return Tensor(out, (x,), bwd)


# --------------------------------------------------------------------------
# Edge-clamped fixed-kernel 1-D correlation (for gradient losses)

def _valid_corr_last(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    ks = len(k)
    n = x.shape[-1] - ks + 1
    sl = x.strides[-1]
    win = as_strided(x, x.shape[:-1] + (n, ks), x.strides[:-1] + (sl, sl), writeable=False)
    return win @ k


def correlate1d_clamped(x: Tensor, kernel: np.ndarray, axis: int) -> Tensor:
    """Correlate along `axis` with a fixed kernel, edges replicated."""
    k = np.asarray(kernel, dtype=x.data.dtype)
    r = (len(k) - 1) // 2
    xm = np.moveaxis(x.data, axis, -1)
    pads = [(0, 0)] * (xm.ndim - 1) + [(r, r)]
    out = _valid_corr_last(np.pad(xm, pads, mode="edge"), k)
    out = np.moveaxis(out, -1, axis)

    def bwd(g):
        if not x.requires_grad:
            return
        gm = np.moveaxis(g, axis, -1)
        # Adjoint of valid correlation: full correlation with the flipped kernel.
        full = _valid_corr_last(np.pad(gm, [(0, 0)] * (gm.ndim - 1) + [(2 * r, 2 * r)]), k[::-1])
        core = full[..., r:full.shape[-1] - r].copy()
        if r > 0:
            core[..., 0] += full[..., :r].sum(axis=-1)
            core[..., -1] += full[..., full.shape[-1] - r:].sum(axis=-1)
        x.grad += np.moveaxis(core, -1, axis)
    return Tensor(out, (x,), bwd)
