"""Neural-net operations on taped tensors.

Convolutions use the cross-correlation convention (no kernel flip) and are
computed by lowering to matrix multiplication: patches are gathered into a
column matrix (im2col), multiplied against the flattened kernel, and the
backward pass scatters columns back (col2im). Deconvolution is defined as
the exact adjoint of the matching convolution, so its forward pass is the
convolution's backward-input pass and vice versa.
"""

from __future__ import annotations

from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ShapeError, UsageError
from .rng import Rng
from .tensor import Tensor, record

# ---------------------------------------------------------------------------
# linear


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """out[n,j] = sum_i x[n,i] * w[j,i] (+ b[j])."""
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"linear: need 2-d x and w, got {tuple(x.shape)} and {tuple(w.shape)}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: inner dims disagree, x {tuple(x.shape)} vs w {tuple(w.shape)}")
    out = x.data @ w.data.T
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError(f"linear: bias {tuple(b.shape)} does not match out dim {w.shape[0]}")
        out = out + b.data

        def rule(g):
            gx = g @ w.data if x.requires_grad else None
            gw = g.T @ x.data if w.requires_grad else None
            return gx, gw, g.sum(axis=0)

        return record((x, w, b), out, rule)

    def rule(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data if w.requires_grad else None
        return gx, gw

    return record((x, w), out, rule)


# ---------------------------------------------------------------------------
# conv2d / deconv2d

# im2col gathers every kernel-offset slice of the padded input into a
# (N, C, Kh, Kw, outH, outW) block so convolution becomes one GEMM against
# the kernel flattened to (F, C*Kh*Kw). col2im is its transpose: it
# scatter-adds columns back onto the padded canvas. The pair is used in
# both directions, which is what makes deconv2d the exact adjoint.


def _im2col2d(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im2d(cols: np.ndarray, xp_shape, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp_shape[:2]
    blocks = cols.reshape(n, c, kh, kw, oh, ow)
    xp = np.zeros(xp_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += blocks[:, :, i, j]
    return xp


def _pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _crop2d(xp: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return xp
    return xp[:, :, pad:-pad, pad:-pad]


def _conv2d_geometry(h: int, w: int, kh: int, kw: int, stride: int, pad: int):
    if stride < 1 or pad < 0:
        raise UsageError(f"conv2d: stride must be >= 1 and pad >= 0, got stride={stride} pad={pad}")
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} exceeds padded input {hp}x{wp}")
    return (hp - kh) // stride + 1, (wp - kw) // stride + 1


def conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlate (N,Cin,H,W) with kernels (Cout,Cin,Kh,Kw)."""
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d input and kernel, got {tuple(x.shape)} and {tuple(k.shape)}")
    n, cin, h, w = x.shape
    cout, kc, kh, kw = k.shape
    if kc != cin:
        raise ShapeError(f"conv2d: input channels {cin} vs kernel channels {kc} (input {tuple(x.shape)}, kernel {tuple(k.shape)})")
    oh, ow = _conv2d_geometry(h, w, kh, kw, stride, pad)
    xp = _pad2d(x.data, pad)
    cols = _im2col2d(xp, kh, kw, stride, oh, ow)  # (N, Cin*Kh*Kw, oh*ow)
    kmat = k.data.reshape(cout, cin * kh * kw)
    out = np.matmul(kmat[None], cols).reshape(n, cout, oh, ow)

    def rule(g):
        gmat = g.reshape(n, cout, oh * ow)
        gx = gk = None
        if x.requires_grad:
            gcols = np.matmul(kmat.T[None], gmat)
            gx = _crop2d(_col2im2d(gcols, xp.shape, kh, kw, stride, oh, ow), pad)
        if k.requires_grad:
            gk = np.matmul(gmat.transpose(1, 0, 2).reshape(cout, -1), cols.transpose(1, 0, 2).reshape(cin * kh * kw, -1).T).reshape(k.shape)
        return gx, gk

    return record((x, k), out, rule)


def deconv2d(x: Tensor, k: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of conv2d: scatter (N,Cin,H,W) through kernels (Cin,Cout,Kh,Kw).

    Output extent is (H-1)*stride - 2*pad + Kh, the inverse of the conv2d
    shape rule, so stride 2 / kernel 4 / pad 1 doubles each spatial extent.
    """
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"deconv2d: need 4-d input and kernel, got {tuple(x.shape)} and {tuple(k.shape)}")
    n, cin, h, w = x.shape
    kc, cout, kh, kw = k.shape
    if kc != cin:
        raise ShapeError(f"deconv2d: input channels {cin} vs kernel channels {kc} (input {tuple(x.shape)}, kernel {tuple(k.shape)})")
    if stride < 1 or pad < 0:
        raise UsageError(f"deconv2d: stride must be >= 1 and pad >= 0, got stride={stride} pad={pad}")
    oh = (h - 1) * stride - 2 * pad + kh
    ow = (w - 1) * stride - 2 * pad + kw
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"deconv2d: output extent {oh}x{ow} not positive for input {tuple(x.shape)}, kernel {tuple(k.shape)}, stride {stride}, pad {pad}")
    kmat = k.data.reshape(cin, cout * kh * kw)
    xmat = x.data.reshape(n, cin, h * w)
    cols = np.matmul(kmat.T[None], xmat)  # (N, Cout*Kh*Kw, h*w)
    padded_shape = (n, cout, oh + 2 * pad, ow + 2 * pad)
    out = _crop2d(_col2im2d(cols, padded_shape, kh, kw, stride, h, w), pad)

    def rule(g):
        gp = _pad2d(g, pad)
        gcols = _im2col2d(gp, kh, kw, stride, h, w)  # (N, Cout*Kh*Kw, h*w)
        gx = np.matmul(kmat[None], gcols).reshape(x.shape) if x.requires_grad else None
        gk = None
        if k.requires_grad:
            gk = np.matmul(xmat.transpose(1, 0, 2).reshape(cin, -1), gcols.transpose(1, 0, 2).reshape(cout * kh * kw, -1).T).reshape(k.shape)
        return gx, gk

    out = np.ascontiguousarray(out)
    return record((x, k), out, rule)


# ---------------------------------------------------------------------------
# conv3d


def _im2col3d(xp: np.ndarray, kt: int, kh: int, kw: int, stride, ot: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    st, sh, sw = stride
    cols = np.empty((n, c, kt, kh, kw, ot, oh, ow), dtype=xp.dtype)
    for a in range(kt):
        for i in range(kh):
            for j in range(kw):
                cols[:, :, a, i, j] = xp[:, :, a : a + st * ot : st, i : i + sh * oh : sh, j : j + sw * ow : sw]
    return cols.reshape(n, c * kt * kh * kw, ot * oh * ow)


def _col2im3d(cols: np.ndarray, xp_shape, kt: int, kh: int, kw: int, stride, ot: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp_shape[:2]
    st, sh, sw = stride
    blocks = cols.reshape(n, c, kt, kh, kw, ot, oh, ow)
    xp = np.zeros(xp_shape, dtype=cols.dtype)
    for a in range(kt):
        for i in range(kh):
            for j in range(kw):
                xp[:, :, a : a + st * ot : st, i : i + sh * oh : sh, j : j + sw * ow : sw] += blocks[:, :, a, i, j]
    return xp


def _triple(v) -> tuple:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(e) for e in v)
    if len(t) != 3:
        raise UsageError(f"conv3d: stride/pad must be an int or length-3, got {v!r}")
    return t


def conv3d(x: Tensor, k: Tensor, stride=1, pad=0) -> Tensor:
    """Cross-correlate (N,Cin,T,H,W) with kernels (Cout,Cin,Kt,Kh,Kw)."""
    if x.ndim != 5 or k.ndim != 5:
        raise ShapeError(f"conv3d: need 5-d input and kernel, got {tuple(x.shape)} and {tuple(k.shape)}")
    stride = _triple(stride)
    pad = _triple(pad)
    n, cin, t, h, w = x.shape
    cout, kc, kt, kh, kw = k.shape
    if kc != cin:
        raise ShapeError(f"conv3d: input channels {cin} vs kernel channels {kc} (input {tuple(x.shape)}, kernel {tuple(k.shape)})")
    if any(s < 1 for s in stride) or any(p < 0 for p in pad):
        raise UsageError(f"conv3d: stride must be >= 1 and pad >= 0, got stride={stride} pad={pad}")
    tp, hp, wp = t + 2 * pad[0], h + 2 * pad[1], w + 2 * pad[2]
    if tp < kt or hp < kh or wp < kw:
        raise ShapeError(f"conv3d: kernel {kt}x{kh}x{kw} exceeds padded input {tp}x{hp}x{wp}")
    ot = (tp - kt) // stride[0] + 1
    oh = (hp - kh) // stride[1] + 1
    ow = (wp - kw) // stride[2] + 1
    xp = x.data
    if any(pad):
        xp = np.pad(xp, ((0, 0), (0, 0), (pad[0], pad[0]), (pad[1], pad[1]), (pad[2], pad[2])))
    cols = _im2col3d(xp, kt, kh, kw, stride, ot, oh, ow)
    kmat = k.data.reshape(cout, cin * kt * kh * kw)
    out = np.matmul(kmat[None], cols).reshape(n, cout, ot, oh, ow)

    def rule(g):
        gmat = g.reshape(n, cout, ot * oh * ow)
        gxp = gk = None
        if x.requires_grad:
            gcols = np.matmul(kmat.T[None], gmat)
            gxp = _col2im3d(gcols, xp.shape, kt, kh, kw, stride, ot, oh, ow)
            if any(pad):
                gxp = gxp[:, :, pad[0] : tp - pad[0], pad[1] : hp - pad[1], pad[2] : wp - pad[2]]
        if k.requires_grad:
            gk = np.matmul(gmat.transpose(1, 0, 2).reshape(cout, -1), cols.transpose(1, 0, 2).reshape(kmat.shape[1], -1).T).reshape(k.shape)
        return gxp, gk

    return record((x, k), out, rule)


# ---------------------------------------------------------------------------
# max pooling

# Pooling windows are non-overlapping, so each input element belongs to one
# window: reshape splits every pooled axis into (blocks, window), the window
# axes are gathered last, and argmax picks the routing target. numpy argmax
# returns the first occurrence, which fixes tie-breaking deterministically.


def _maxpool(x: Tensor, window: Sequence[int], op: str) -> Tensor:
    k = len(window)
    lead = x.ndim - k
    for ax, wn in enumerate(window):
        if x.shape[lead + ax] % wn != 0:
            raise ShapeError(f"{op}: extent {x.shape[lead + ax]} of axis {lead + ax} not divisible by window {wn} (input {tuple(x.shape)})")
    split_shape = list(x.shape[:lead])
    for ax, wn in enumerate(window):
        split_shape += [x.shape[lead + ax] // wn, wn]
    blocks = x.data.reshape(split_shape)
    # move the window axes (lead+1, lead+3, ...) to the tail
    win_axes = [lead + 2 * i + 1 for i in range(k)]
    keep_axes = [a for a in range(blocks.ndim) if a not in win_axes]
    perm = keep_axes + win_axes
    moved = blocks.transpose(perm)
    wsize = int(np.prod(window))
    out_shape = moved.shape[: x.ndim]
    win = moved.reshape(out_shape + (wsize,))
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    inv_perm = np.argsort(perm)

    def rule(g):
        gwin = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gmoved = gwin.reshape(moved.shape)
        return (gmoved.transpose(inv_perm).reshape(x.shape),)

    return record((x,), np.ascontiguousarray(out), rule)


def maxpool3d(x: Tensor, window=(2, 2, 2)) -> Tensor:
    """Max over non-overlapping T/H/W windows of a (N,C,T,H,W) tensor."""
    if x.ndim != 5:
        raise ShapeError(f"maxpool3d: need 5-d input, got {tuple(x.shape)}")
    return _maxpool(x, tuple(window), "maxpool3d")


def maxpool2d(x: Tensor, window=(2, 2)) -> Tensor:
    """Max over non-overlapping H/W windows of a (N,C,H,W) tensor."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d: need 4-d input, got {tuple(x.shape)}")
    return _maxpool(x, tuple(window), "maxpool2d")


# ---------------------------------------------------------------------------
# batchnorm


class RunningStats(NamedTuple):
    """Exponential moving averages of per-channel mean and variance.

    The tensors are plain state (never differentiated); train-mode calls
    update them in place.
    """

    mean: Tensor
    var: Tensor


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: str,
    running_stats: RunningStats,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Normalize per channel (axis 1) over all other axes, then apply affine.

    Train mode normalizes by batch statistics (biased variance) and folds
    them into the running stats; eval mode normalizes by the running stats.
    """
    if x.ndim < 2:
        raise ShapeError(f"batchnorm: need at least 2 axes, got {tuple(x.shape)}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: gamma {tuple(gamma.shape)} / beta {tuple(beta.shape)} do not match channel extent {c}")
    if mode not in ("train", "eval"):
        raise UsageError(f"batchnorm: mode must be 'train' or 'eval', got {mode!r}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    count = x.size // c

    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_stats.mean.data[...] = (1 - momentum) * running_stats.mean.data + momentum * mu
        running_stats.var.data[...] = (1 - momentum) * running_stats.var.data + momentum * var
    else:
        mu = running_stats.mean.data.astype(x.dtype)
        var = running_stats.var.data.astype(x.dtype)

    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * invstd.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    if mode == "train":

        def rule(g):
            gbeta = g.sum(axis=axes)
            ggamma = (g * xhat).sum(axis=axes)
            # backward through the batch statistics themselves
            gxhat = g * gamma.data.reshape(bshape)
            sum_g = gxhat.sum(axis=axes, keepdims=True)
            sum_gx = (gxhat * xhat).sum(axis=axes, keepdims=True)
            gx = (invstd.reshape(bshape) / count) * (count * gxhat - sum_g - xhat * sum_gx)
            return gx, ggamma, gbeta

    else:

        def rule(g):
            gbeta = g.sum(axis=axes)
            ggamma = (g * xhat).sum(axis=axes)
            gx = g * (gamma.data * invstd).reshape(bshape)
            return gx, ggamma, gbeta

    return record((x, gamma, beta), out, rule)


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    # np.maximum, not where(mask, ...): maximum propagates NaN, a mask would
    # silently replace it with 0 and hide the poisoned value from isfinite.
    mask = x.data > 0
    out = np.maximum(x.data, 0)

    def rule(g):
        return (g * mask,)

    return record((x,), out, rule)


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, x.dtype.type(alpha) * x.data)

    def rule(g):
        return (np.where(mask, g, g.dtype.type(alpha) * g),)

    return record((x,), out, rule)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so the exponential never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def rule(g):
        return (g * out * (1.0 - out),)

    return record((x,), out, rule)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def rule(g):
        return (g * (1.0 - out * out),)

    return record((x,), out, rule)


def activation(x: Tensor, kind: str, alpha: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise UsageError(f"activation: unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# dropout / cross-entropy


def dropout(x: Tensor, rate: float, rng: Rng, mode: str) -> Tensor:
    """Inverted dropout: train mode zeroes entries and rescales by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise UsageError(f"dropout: rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise UsageError(f"dropout: mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return record((x,), x.data.copy(), lambda g: (g,))
    keep = (rng.uniform(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)

    def rule(g):
        return (g * keep,)

    return record((x,), x.data * keep, rule)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of (N,K) logits against integer labels."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: need 2-d logits, got {tuple(logits.shape)}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: labels {tuple(labels.shape)} do not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise UsageError(f"cross_entropy: labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    expz = np.exp(z)
    probs = expz / expz.sum(axis=1, keepdims=True)
    picked = z[np.arange(n), labels]
    loss = np.asarray((np.log(expz.sum(axis=1)) - picked).mean(), dtype=logits.dtype)

    def rule(g):
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1.0
        return (g * grad / n,)

    return record((logits,), loss, rule)


def softmax_probs(logits: Tensor) -> np.ndarray:
    """Softmax of (N,K) logits as plain data (no tape)."""
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    expz = np.exp(z)
    return expz / expz.sum(axis=1, keepdims=True)


def sample_gaussian(shape, mean: float, std: float, rng: Rng, dtype=np.float32) -> Tensor:
    """I.i.d. normal draws as an untaped tensor, deterministic per RNG state."""
    return Tensor(rng.normal(shape, mean=mean, std=std, dtype=dtype))
