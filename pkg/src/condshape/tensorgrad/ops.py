# Copyright 2024-present The condshape Authors. All rights reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""
Differentiable ops.

Volumes are N x C x X x Y x Z. Every op returns a Tensor whose backward closure
pushes gradients to its inputs; shapes are validated by the layer wrappers in
condshape.tensorgrad.nn, ops assume valid inputs.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from condshape.errors import ShapeError
from condshape.tensorgrad.tensor import Tensor

LEAKY_SLOPE = 0.01
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
JACCARD_EPS = 1e-6
BCE_CLAMP = 1e-7

Target = Union[Tensor, np.ndarray]


def _array(t: Target, like: np.ndarray) -> np.ndarray:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.shape != like.shape:
        raise ShapeError(f"loss: prediction {like.shape} and target {arr.shape} differ")
    return arr.astype(like.dtype, copy=False)


# ----- convolution -----

def conv3d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """
    3D cross-correlation with zero padding k // 2.

    x: N x C x X x Y x Z, w: O x C x k x k x k, b: O.
    Output side per axis is (n + 2p - k) // stride + 1.
    """
    k = w.data.shape[-1]
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    out_dims = tuple((n + 2 * p - k) // stride + 1 for n in x.data.shape[2:])
    offsets = [(dx, dy, dz) for dx in range(k) for dy in range(k) for dz in range(k)]

    def window(d: Tuple[int, int, int]) -> Tuple[slice, ...]:
        return (slice(None), slice(None)) + tuple(
            slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(d, out_dims)
        )

    n_batch, n_out = x.data.shape[0], w.data.shape[0]
    out = np.zeros((n_batch,) + out_dims + (n_out,), dtype=np.result_type(x.data, w.data))
    for d in offsets:
        # (N, C, X', Y', Z') . (O, C) -> (N, X', Y', Z', O)
        out += np.tensordot(xp[window(d)], w.data[(slice(None), slice(None)) + d], axes=([1], [1]))
    out = np.moveaxis(out, -1, 1)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for d in offsets:
                gw[(slice(None), slice(None)) + d] = np.tensordot(g, xp[window(d)], axes=([0, 2, 3, 4], [0, 2, 3, 4]))
            w.accumulate(gw)
        if b is not None:
            b.accumulate(g.sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for d in offsets:
                # (N, O, X', Y', Z') . (O, C) -> (N, X', Y', Z', C)
                contrib = np.tensordot(g, w.data[(slice(None), slice(None)) + d], axes=([1], [0]))
                gxp[window(d)] += np.moveaxis(contrib, -1, 1)
            nx, ny, nz = x.data.shape[2:]
            x.accumulate(gxp[:, :, p:p + nx, p:p + ny, p:p + nz])

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x: P x I, w: O x I, b: O"""
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        x.accumulate(g @ w.data)
        w.accumulate(g.T @ x.data)
        if b is not None:
            b.accumulate(g.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, backward)


# ----- activations -----

def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope).astype(x.data.dtype)

    def backward(g):
        x.accumulate(g * scale)
    return Tensor.from_op(x.data * scale, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)

    def backward(g):
        x.accumulate(g * y * (1.0 - y))
    return Tensor.from_op(y, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            t.accumulate(g[tuple(index)])
    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# ----- normalisation -----

def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """
    Per-channel batch normalisation over N and all spatial axes.

    In training mode with N >= 2 the batch statistics normalise the input and
    the running buffers are updated in place (unbiased variance). With N < 2,
    or in eval mode, the running statistics are used: a fixed affine map.
    """
    axes = (0,) + tuple(range(2, x.data.ndim))
    shape = (1, -1) + (1,) * (x.data.ndim - 2)
    use_batch = training and x.data.shape[0] >= 2
    dtype = x.data.dtype

    if use_batch:
        n = x.data.size // x.data.shape[1]
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * (var * n / max(n - 1, 1)).astype(running_var.dtype)
    else:
        mean = running_mean.astype(dtype)
        var = running_var.astype(dtype)

    inv_std = (1.0 / np.sqrt(var + eps)).astype(dtype)
    xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(g):
        gamma.accumulate((g * xhat).sum(axis=axes))
        beta.accumulate(g.sum(axis=axes))
        if not x.requires_grad:
            return
        gxhat = g * gamma.data.reshape(shape)
        if use_batch:
            m = x.data.size // x.data.shape[1]
            s1 = gxhat.sum(axis=axes).reshape(shape)
            s2 = (gxhat * xhat).sum(axis=axes).reshape(shape)
            x.accumulate(inv_std.reshape(shape) / m * (m * gxhat - s1 - xhat * s2))
        else:
            x.accumulate(gxhat * inv_std.reshape(shape))

    return Tensor.from_op(out, (x, gamma, beta), backward)


# ----- resolution changes -----

def _windows(data: np.ndarray) -> np.ndarray:
    """N,C,X,Y,Z -> N,C,X/2,Y/2,Z/2,8 with window entries ordered (dz, dy, dx)"""
    n, c, X, Y, Z = data.shape
    v = data.reshape(n, c, X // 2, 2, Y // 2, 2, Z // 2, 2)
    # window axes dz, dy, dx: flat position follows the x-fastest linear index
    v = v.transpose(0, 1, 2, 4, 6, 7, 5, 3)
    return v.reshape(n, c, X // 2, Y // 2, Z // 2, 8)


def _unwindows(win: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    n, c, X, Y, Z = shape
    v = win.reshape(n, c, X // 2, Y // 2, Z // 2, 2, 2, 2)
    v = v.transpose(0, 1, 2, 7, 3, 6, 4, 5)
    return v.reshape(shape)


def max_downsample(x: Tensor) -> Tensor:
    """Factor-2 max pooling; ties go to the lowest linear (x-fastest) index in the window"""
    if any(n % 2 for n in x.data.shape[2:]):
        raise ShapeError(f"max_downsample: spatial dims must be even, got {x.shape[2:]}")
    win = _windows(x.data)
    arg = np.argmax(win, axis=-1)[..., None]
    out = np.take_along_axis(win, arg, axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, arg, g[..., None], axis=-1)
        x.accumulate(_unwindows(gw, x.data.shape))
    return Tensor.from_op(out, (x,), backward)


def nearest_upsample(x: Tensor) -> Tensor:
    """Factor-2 nearest-neighbour upsampling of the spatial axes"""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3).repeat(2, axis=4)

    def backward(g):
        n, c, X, Y, Z = x.data.shape
        x.accumulate(g.reshape(n, c, X, 2, Y, 2, Z, 2).sum(axis=(3, 5, 7)))
    return Tensor.from_op(out, (x,), backward)


# ----- point sampling -----

def trilinear_gather(feat: Tensor, batch_idx: np.ndarray, u: np.ndarray) -> Tensor:
    """
    Sample a feature grid at continuous voxel indices.

    feat: N x C x X x Y x Z; batch_idx: P ints selecting the sample; u: P x 3
    continuous indices (clamped replication outside [0, n-1]). Returns P x C.
    Gradients flow into feat only.
    """
    dims = np.asarray(feat.data.shape[2:])
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, dims - 1.0)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, np.maximum(dims - 2, 0))
    i1 = np.minimum(i0 + 1, dims - 1)
    t = np.clip(u - i0, 0.0, 1.0).astype(feat.data.dtype)
    b = np.asarray(batch_idx, dtype=np.int64)

    corners = []
    for cx in (0, 1):
        for cy in (0, 1):
            for cz in (0, 1):
                ix = i1[:, 0] if cx else i0[:, 0]
                iy = i1[:, 1] if cy else i0[:, 1]
                iz = i1[:, 2] if cz else i0[:, 2]
                wx = t[:, 0] if cx else 1.0 - t[:, 0]
                wy = t[:, 1] if cy else 1.0 - t[:, 1]
                wz = t[:, 2] if cz else 1.0 - t[:, 2]
                corners.append(((b, slice(None), ix, iy, iz), wx * wy * wz))

    out = np.zeros((u.shape[0], feat.data.shape[1]), dtype=feat.data.dtype)
    for index, weight in corners:
        # advanced indices around a slice put P first: P x C
        out += feat.data[index] * weight[:, None]

    def backward(g):
        gf = np.zeros_like(feat.data)
        for index, weight in corners:
            np.add.at(gf, index, g * weight[:, None])
        feat.accumulate(gf)
    return Tensor.from_op(out, (feat,), backward)


# ----- losses -----

def jaccard_loss(pred: Tensor, gt: Target) -> Tensor:
    """1 - (sum(p g) + eps) / (sum(p) + sum(g) - sum(p g) + eps)"""
    p = pred.data
    g_ = _array(gt, p)
    inter = float((p * g_).sum())
    union = float(p.sum() + g_.sum()) - inter + JACCARD_EPS
    num = inter + JACCARD_EPS
    loss = 1.0 - num / union

    def backward(g):
        # d(num/union)/dp = (g union - num (1 - g)) / union^2
        grad = -(g_ * union - num * (1.0 - g_)) / (union * union)
        pred.accumulate(g * grad)
    return Tensor.from_op(np.asarray(loss, dtype=p.dtype), (pred,), backward)


def mse_loss(pred: Tensor, gt: Target) -> Tensor:
    p = pred.data
    diff = p - _array(gt, p)

    def backward(g):
        pred.accumulate(g * 2.0 * diff / diff.size)
    return Tensor.from_op(np.asarray(np.mean(diff * diff), dtype=p.dtype), (pred,), backward)


def bce_loss(pred: Tensor, gt: Target) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]"""
    p = pred.data
    g_ = _array(gt, p)
    c = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -np.mean(g_ * np.log(c) + (1.0 - g_) * np.log(1.0 - c))
    inside = ((p >= BCE_CLAMP) & (p <= 1.0 - BCE_CLAMP)).astype(p.dtype)

    def backward(g):
        grad = -(g_ / c - (1.0 - g_) / (1.0 - c)) / p.size
        pred.accumulate(g * grad * inside)
    return Tensor.from_op(np.asarray(loss, dtype=p.dtype), (pred,), backward)
