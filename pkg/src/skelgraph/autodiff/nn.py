"""Network primitives with hand-written backward passes.

All array inputs carry an explicit leading batch axis; channels sit on
axis 1 for conv2d, batch_norm and prelu.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, ParameterError
from .core import DiffArray, as_diff, make_node

COSINE_EPS = 1e-8
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def conv_output_size(size: int, k: int, padding: int, stride: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _conv2d_input_grad(g: np.ndarray, w: np.ndarray, x_shape, padding: int, stride: int) -> np.ndarray:
    n, c, h, wd = x_shape
    _, _, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    gpad = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            # (N,O,Ho,Wo) x (O,C) -> (N,Ho,Wo,C)
            contrib = np.tensordot(g, w[:, :, i, j], axes=([1], [0]))
            gpad[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += (
                contrib.transpose(0, 3, 1, 2)
            )
    return gpad[:, :, padding : padding + h, padding : padding + wd]


def conv2d(x, kernel, bias=None, padding: int = 0, stride: int = 1) -> DiffArray:
    """2-D cross-correlation. x: (N,C,H,W), kernel: (O,C,kh,kw), bias: (O,)."""
    x, kernel = as_diff(x), as_diff(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, wd = x.shape
    o, ck, kh, kw = kernel.shape
    if ck != c:
        raise DimensionError(f"conv2d kernel expects {ck} input channels, input has {c}")
    if min(kh, kw) < 1 or stride < 1 or padding < 0:
        raise ParameterError("conv2d needs k >= 1, stride >= 1, padding >= 0")
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise DimensionError(f"padded input {h + 2 * padding}x{wd + 2 * padding} smaller than kernel {kh}x{kw}")
    if bias is not None:
        bias = as_diff(bias)
        if bias.shape != (o,):
            raise DimensionError(f"conv2d bias shape {bias.shape} != ({o},)")

    ho = conv_output_size(h, kh, padding, stride)
    wo = conv_output_size(wd, kw, padding, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = _windows(xp, kh, kw, stride, ho, wo)
    out = np.tensordot(win, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    w_data, x_shape = kernel.data, x.shape

    def _back(g):
        gx = _conv2d_input_grad(g, w_data, x_shape, padding, stride) if x.requires_grad else None
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])) if kernel.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_node(out, parents, _back, "conv2d")


def batch_norm(x, gamma, beta, eps: float = BN_EPS, train: bool = True,
               running: dict | None = None, momentum: float = BN_MOMENTUM) -> DiffArray:
    """Per-channel normalization over every axis except axis 1.

    ``running`` holds ``mean`` and ``var`` arrays; train mode updates them in
    place with an exponential moving average of the biased batch statistics.
    """
    x, gamma, beta = as_diff(x), as_diff(gamma), as_diff(beta)
    if eps < 0:
        raise ParameterError(f"batch_norm eps must be non-negative, got {eps}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"gamma/beta must have shape ({c},), got {gamma.shape}, {beta.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)

    if train:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running is not None:
            running["mean"] *= 1.0 - momentum
            running["mean"] += momentum * mu
            running["var"] *= 1.0 - momentum
            running["var"] += momentum * var
    else:
        if running is None:
            raise ParameterError("batch_norm eval mode needs running statistics")
        mu, var = running["mean"], running["var"]

    with np.errstate(divide="ignore", invalid="ignore"):
        inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    m = x.size // c
    gamma_data = gamma.data

    def _back(g):
        gxhat = g * gamma_data.reshape(bshape)
        if train:
            s1 = gxhat.sum(axis=axes).reshape(bshape)
            s2 = (gxhat * xhat).sum(axis=axes).reshape(bshape)
            gx = inv_std.reshape(bshape) / m * (m * gxhat - s1 - xhat * s2)
        else:
            gx = gxhat * inv_std.reshape(bshape)
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make_node(out.astype(x.dtype, copy=False), (x, gamma, beta), _back, "batch_norm")


def prelu(x, slope) -> DiffArray:
    """x where x >= 0, slope * x elsewhere; slope is shape (1,) or (C,) on axis 1."""
    x, slope = as_diff(x), as_diff(slope)
    if slope.ndim != 1 or (slope.shape[0] != 1 and (x.ndim < 2 or slope.shape[0] != x.shape[1])):
        raise DimensionError(f"prelu slope shape {slope.shape} incompatible with input {x.shape}")
    bshape = (1, -1) + (1,) * (x.ndim - 2) if slope.shape[0] > 1 else (1,) * x.ndim
    a = slope.data.reshape(bshape)
    pos = x.data >= 0
    out = np.where(pos, x.data, a * x.data)
    xd = x.data

    def _back(g):
        gx = np.where(pos, g, a * g)
        ga = np.where(pos, 0.0, g * xd)
        if slope.shape[0] == 1:
            ga = np.array([ga.sum()])
        else:
            ga = ga.sum(axis=tuple(i for i in range(xd.ndim) if i != 1))
        return gx, ga

    return make_node(out, (x, slope), _back, "prelu")


def vector_norm(x, axis: int = -1) -> DiffArray:
    """Euclidean norm along ``axis``; the gradient at a zero vector is zero."""
    x = as_diff(x)
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=axis))

    def _back(g):
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, g / safe, 0.0)
        return (np.expand_dims(scale, axis) * xd,)

    return make_node(n, (x,), _back, "vector_norm")


def cosine_similarity(a, b, axis: int = -1, eps: float = COSINE_EPS) -> DiffArray:
    """dot(a, b) / (max(|a|, eps) * max(|b|, eps)) along ``axis``.

    Pairs where either norm falls below eps contribute a zero gradient.
    """
    a, b = as_diff(a), as_diff(b)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_similarity shape mismatch {a.shape} vs {b.shape}")
    if eps <= 0:
        raise ParameterError("cosine_similarity eps must be positive")
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(axis=axis))
    nb = np.sqrt((bd * bd).sum(axis=axis))
    dot = (ad * bd).sum(axis=axis)
    denom = np.maximum(na, eps) * np.maximum(nb, eps)
    cos = dot / denom
    valid = (na >= eps) & (nb >= eps)

    def _back(g):
        gv = np.where(valid, g, 0.0)
        inv = np.expand_dims(gv / denom, axis)
        c = np.expand_dims(cos, axis)
        na2 = np.expand_dims(np.where(valid, na * na, 1.0), axis)
        nb2 = np.expand_dims(np.where(valid, nb * nb, 1.0), axis)
        ga = inv * bd - np.expand_dims(gv, axis) * c * ad / na2
        gb = inv * ad - np.expand_dims(gv, axis) * c * bd / nb2
        return ga, gb

    return make_node(cos, (a, b), _back, "cosine_similarity")


def _pool_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    mat = np.zeros((n_out, n_in), dtype=dtype)
    for i in range(n_out):
        start = (i * n_in) // n_out
        end = -((-(i + 1) * n_in) // n_out)
        mat[i, start:end] = 1.0 / (end - start)
    return mat


def adaptive_avg_pool2d(x, output_size: tuple[int, int]) -> DiffArray:
    """Average over windows [floor(i*H/oh), ceil((i+1)*H/oh)) on each spatial axis."""
    x = as_diff(x)
    if x.ndim != 4:
        raise DimensionError(f"adaptive_avg_pool2d expects 4-D input, got {x.shape}")
    oh, ow = output_size
    ph = _pool_matrix(x.shape[2], oh, x.dtype)
    pw = _pool_matrix(x.shape[3], ow, x.dtype)
    out = np.einsum("ih,nchw,jw->ncij", ph, x.data, pw)

    def _back(g):
        return (np.einsum("ih,ncij,jw->nchw", ph, g, pw),)

    return make_node(out, (x,), _back, "adaptive_avg_pool2d")


def graph_aggregate(adjacency, x) -> DiffArray:
    """Per-timestep neighbourhood sum: out[n,t] = adjacency[n,t] @ x[n,t].

    adjacency: (N,T,J,J) or (T,J,J) shared across the batch; x: (N,T,J,F).
    """
    adjacency, x = as_diff(adjacency), as_diff(x)
    ad, xd = adjacency.data, x.data
    if ad.shape[-1] != xd.shape[-2] or ad.shape[-3] != xd.shape[-3]:
        raise DimensionError(f"adjacency {ad.shape} incompatible with features {xd.shape}")
    out = np.matmul(ad, xd)
    shared = ad.ndim == 3

    def _back(g):
        ga = np.matmul(g, np.swapaxes(xd, -1, -2))
        if shared:
            ga = ga.sum(axis=0)
        gx = np.matmul(np.swapaxes(ad, -1, -2), g)
        return ga, gx

    return make_node(out, (adjacency, x), _back, "graph_aggregate")


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    """Uniform in +-1/sqrt(fan_in), fan_in = prod(shape[1:])."""
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
