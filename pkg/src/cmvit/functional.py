"""Fused differentiable kernels: convolution, normalization, softmax, pooling, loss.

Each kernel computes its own closed-form backward instead of composing
primitive tape records, which keeps the tape short and the rules auditable.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError
from .tensor import Tensor


def conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise ShapeError(
            f"extent {size} with kernel {kernel}, stride {stride}, padding {padding} "
            "does not give an integral output size"
        )
    return span // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Grouped 2-D cross-correlation of ``x`` [N,C,H,W] with ``weight`` [O,C/g,kh,kw]."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [N,C,H,W], got {list(x.shape)}")
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if c % groups or o % groups or cg != c // groups:
        raise ShapeError(f"input channels {c} incompatible with weight {list(weight.shape)}, groups {groups}")
    ho = conv_output_extent(h, kh, stride, padding)
    wo = conv_output_extent(w, kw, stride, padding)
    s, p, g = stride, padding, groups
    og = o // g

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    wd = weight.data
    if g == c and cg == 1 and og == 1:
        return _depthwise(x, weight, bias, xp, stride, padding, ho, wo)
    if g == 1:
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
        wmat = wd.reshape(o, -1)
        out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    else:
        wing = win.reshape(n, g, cg, ho, wo, kh, kw)
        wg = wd.reshape(g, og, cg, kh, kw)
        out = np.einsum("ngchwij,gocij->ngohw", wing, wg, optimize=True).reshape(n, o, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def back(gout):
        if g == 1:
            g2 = gout.transpose(0, 2, 3, 1).reshape(-1, o)
            gw = (g2.T @ cols).reshape(wd.shape)
            gwin = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        else:
            gg = gout.reshape(n, g, og, ho, wo)
            gw = np.einsum("ngohw,ngchwij->gocij", gg, wing, optimize=True).reshape(wd.shape)
            gwin = np.einsum("ngohw,gocij->ngchwij", gg, wg, optimize=True).reshape(n, c, ho, wo, kh, kw)
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += gwin[..., i, j]
        gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        gb = gout.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw.astype(x.dtype), gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, lambda gout: back(gout)[: len(parents)])


def _depthwise(x, weight, bias, xp, s, p, ho, wo):
    """groups == channels with one filter per channel: shifted multiply-adds."""
    n, c, h, w = x.shape
    _, _, kh, kw = weight.shape
    wd = weight.data

    def window(arr, i, j):
        return arr[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s]

    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += window(xp, i, j) * wd[:, 0, i, j].reshape(1, c, 1, 1)
    if bias is not None:
        out += bias.data.reshape(1, c, 1, 1)

    def back(gout):
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        gw = np.zeros_like(wd)
        for i in range(kh):
            for j in range(kw):
                window(gxp, i, j)[...] += gout * wd[:, 0, i, j].reshape(1, c, 1, 1)
                gw[:, 0, i, j] = (gout * window(xp, i, j)).sum(axis=(0, 2, 3))
        gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        gb = gout.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, lambda gout: back(gout)[: len(parents)])


def avg_pool(x: Tensor, out_size: tuple[int, int]) -> Tensor:
    """Average over exact (H/H')x(W/W') tiles; ``(1, 1)`` is global average pooling."""
    n, c, h, w = x.shape
    oh, ow = out_size
    if oh < 1 or ow < 1 or h % oh or w % ow:
        raise ShapeError(f"cannot tile {h}x{w} into {oh}x{ow} cells")
    th, tw = h // oh, w // ow
    out = x.data.reshape(n, c, oh, th, ow, tw).mean(axis=(3, 5)).astype(x.dtype)
    inv = x.dtype.type(1.0 / (th * tw))

    def back(g):
        gx = np.broadcast_to((g * inv)[:, :, :, None, :, None], (n, c, oh, th, ow, tw))
        return (gx.reshape(n, c, h, w).copy(),)

    return Tensor._from_op(out, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"norm over {d} features got gamma {list(gamma.shape)}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = (xhat * gamma.data + beta.data).astype(x.dtype)

    def back(g):
        red = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx.astype(x.dtype), ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), back)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of [N,C] or [N,C,H,W] input.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance); in eval mode the buffers are used.
    """
    if x.ndim not in (2, 4) or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batch norm over {gamma.shape[0]} channels got {list(x.shape)}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    gm = gamma.data.reshape(bshape)
    bt = beta.data.reshape(bshape)
    if not training:
        inv = (1.0 / np.sqrt(running_var + eps)).reshape(bshape)
        xhat = (x.data - running_mean.reshape(bshape)) * inv
        out = (xhat * gm + bt).astype(x.dtype)

        def back_eval(g):
            return (g * gm * inv).astype(x.dtype), (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return Tensor._from_op(out, (x, gamma, beta), back_eval)

    m = x.size // x.shape[1]
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = (xhat * gm + bt).astype(x.dtype)
    unbiased = var.reshape(-1) * (m / (m - 1) if m > 1 else 1.0)
    running_mean *= 1 - momentum
    running_mean += momentum * mu.reshape(-1)
    running_var *= 1 - momentum
    running_var += momentum * unbiased

    def back(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gh = g * gm
        gx = inv * (gh - gh.mean(axis=axes, keepdims=True) - xhat * (gh * xhat).mean(axis=axes, keepdims=True))
        return gx.astype(x.dtype), ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return Tensor._from_op(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    y = np.exp(out)
    return Tensor._from_op(out, (x,), lambda g: (g - y * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch-mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {list(logits.shape)} vs labels {list(labels.shape)}")
    n, k = logits.shape
    if n == 0:
        raise ContractError("empty batch")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    loss = np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype)

    def back(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return ((grad * (g / n)).astype(logits.dtype),)

    return Tensor._from_op(loss, (logits,), back)
