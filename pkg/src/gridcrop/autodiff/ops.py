"""Differentiable kernels used by the crop-scoring network.

Feature maps are laid out as (batch, channel, height, width).  Every
resampling op uses half-pixel centers: output index ``i`` of an axis of
length ``n_out`` reads input coordinate ``(i + 0.5) * n_in / n_out - 0.5``,
clamped to ``[0, n_in - 1]``.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..geometry import CropRect, ImageDims
from .tensor import Tensor


class DegenerateVarianceError(ValueError):
    """A normalized channel has zero (or undefined) variance."""


# ---------------------------------------------------------------------------
# elementwise and structural ops


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in add: {a.shape} vs {b.shape}")
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def weighted_sum(x: Tensor, weights) -> Tensor:
    """Scalar ``sum(x * weights)`` for a constant weight array."""
    w = np.asarray(weights, dtype=x.dtype)
    if w.shape != x.shape:
        raise ValueError(f"weights shape {w.shape} does not match {x.shape}")
    return Tensor.from_op(np.asarray(np.sum(x.data * w)), (x,), lambda g: (g * w,), "weighted_sum")


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    old = x.shape
    return Tensor.from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def flatten(x: Tensor) -> Tensor:
    """Collapse everything but the leading batch axis."""
    return reshape(x, (x.shape[0], -1))


def channel_concat(*xs: Tensor) -> Tensor:
    if not xs:
        raise ValueError("channel_concat needs at least one tensor")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.data.ndim != len(ref) or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ValueError(f"cannot concatenate {t.shape} with {ref} along channels")
    if len(xs) == 1:
        return xs[0]
    sizes = [t.shape[1] for t in xs]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=1))

    return Tensor.from_op(np.concatenate([t.data for t in xs], axis=1), xs, backward, "concat")


def channel_split(x: Tensor, sizes: Sequence[int]) -> List[Tensor]:
    if sum(sizes) != x.shape[1]:
        raise ValueError(f"split sizes {list(sizes)} do not sum to {x.shape[1]} channels")
    out = []
    start = 0
    for sz in sizes:
        sl = slice(start, start + sz)

        def backward(g, sl=sl):
            full = np.zeros_like(x.data)
            full[:, sl] = g
            return (full,)

        out.append(Tensor.from_op(x.data[:, sl].copy(), (x,), backward, "split"))
        start += sz
    return out


# ---------------------------------------------------------------------------
# convolution


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (B,C,H,W) with ``w`` (O,C,k,k)."""
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} / padding={padding}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ValueError(f"input has {C} channels but weights expect {Cw}")
    if b is not None and b.shape != (O,):
        raise ValueError(f"bias shape {b.shape} does not match {O} output channels")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ValueError(f"input {H}x{W} too small for a {kh}x{kw} kernel")

    xp = _pad(x.data, padding)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    # (B, Ho, Wo, C, kh, kw) -> rows of the im2col matrix
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = w.data.reshape(O, -1)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (gmat.T @ cols).reshape(w.shape) if w.requires_grad else None
        gb = gmat.sum(axis=0) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(B, Ho, Wo, C, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(np.ascontiguousarray(out), parents, backward, "conv2d")


# ---------------------------------------------------------------------------
# normalization


def channel_norm(x: Tensor, gamma: Tensor, beta_shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over the spatial extent, then affine.

    Raises :class:`DegenerateVarianceError` when a channel has a single
    element or exactly zero variance.
    """
    B, C, H, W = x.shape
    if gamma.shape != (C,) or beta_shift.shape != (C,):
        raise ValueError(f"gamma/beta must have shape ({C},)")
    n = H * W
    if n < 2:
        raise DegenerateVarianceError("channel_norm needs more than one spatial element per channel")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    if np.any(var == 0):
        b_idx, c_idx = np.argwhere(var[:, :, 0, 0] == 0)[0]
        raise DegenerateVarianceError(f"channel {c_idx} of sample {b_idx} is constant")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g4 = gamma.data.reshape(1, C, 1, 1)
    out = xhat * g4 + beta_shift.data.reshape(1, C, 1, 1)

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = g * g4
        gx = inv * (gxhat - gxhat.mean(axis=(2, 3), keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=(2, 3), keepdims=True))
        return gx, ggamma, gbeta

    return Tensor.from_op(out, (x, gamma, beta_shift), backward, "channel_norm")


# ---------------------------------------------------------------------------
# bilinear resampling


def _interp_matrix(coords: np.ndarray, n_in: int) -> np.ndarray:
    """Rows of linear-interpolation weights for sample coordinates on an axis of length n_in."""
    coords = np.clip(coords, 0.0, n_in - 1)
    i0 = np.floor(coords).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = coords - i0
    mat = np.zeros(coords.shape + (n_in,), dtype=np.float64)
    flat = mat.reshape(-1, n_in)
    rows = np.arange(flat.shape[0])
    np.add.at(flat, (rows, i0.ravel()), 1.0 - frac.ravel())
    np.add.at(flat, (rows, i1.ravel()), frac.ravel())
    return mat


def resize_coords(n_in: int, n_out: int) -> np.ndarray:
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    return _interp_matrix(resize_coords(n_in, n_out), n_in)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output extent must be positive, got {out_h}x{out_w}")
    B, C, H, W = x.shape
    if (out_h, out_w) == (H, W):
        return x
    ry = resize_matrix(H, out_h).astype(x.dtype)
    rx = resize_matrix(W, out_w).astype(x.dtype)
    out = ry @ x.data @ rx.T

    def backward(g):
        return (ry.T @ g @ rx,)

    return Tensor.from_op(out, (x,), backward, "bilinear_resize")


# ---------------------------------------------------------------------------
# RoI / RoD alignment

CropArg = Union[CropRect, Sequence[CropRect]]


def _crop_list(crops: CropArg) -> List[CropRect]:
    if isinstance(crops, CropRect) or (len(crops) == 4 and all(isinstance(v, (int, np.integer)) for v in crops)):
        return [CropRect(*crops)]
    return [CropRect(*c) for c in crops]


def feature_scale(image_dims: ImageDims, feat_h: int, feat_w: int) -> Tuple[float, float]:
    """Pixel-to-feature scale per axis (1/stride when the extent divides evenly)."""
    return feat_h / image_dims.H, feat_w / image_dims.W


def align_sample_coords(crop: CropRect, image_dims: ImageDims, feat_h: int, feat_w: int,
                        s: int) -> Tuple[np.ndarray, np.ndarray]:
    """Unclamped feature-grid row/column coordinates of the s x s bin centers."""
    sh, sw = feature_scale(image_dims, feat_h, feat_w)
    i = np.arange(s) + 0.5
    rows = (crop.x1 + i * (crop.x2 - crop.x1) / s) * sh - 0.5
    cols = (crop.y1 + i * (crop.y2 - crop.y1) / s) * sw - 0.5
    return rows, cols


def _validate_crops(crops: List[CropRect], image_dims: ImageDims) -> None:
    for c in crops:
        if not c.is_valid(image_dims):
            raise ValueError(f"crop {tuple(c)} lies outside image {image_dims.H}x{image_dims.W}")


def _check_feature(F: Tensor) -> Tuple[int, int, int]:
    if F.data.ndim != 4 or F.shape[0] != 1:
        raise ValueError(f"alignment expects a single feature map of shape (1,C,H,W), got {F.shape}")
    return F.shape[1], F.shape[2], F.shape[3]


def _align(F: Tensor, ry: np.ndarray, rx: np.ndarray, mask: Optional[np.ndarray], op: str) -> Tensor:
    # ry: (K,s,Hf)  rx: (K,s,Wf)  mask: (K,Hf,Wf) or None
    # Every crop goes through matmuls of the same shape, so its result does not
    # depend on which other crops share the batch.
    # Operands are made contiguous because numpy picks BLAS or its own loop
    # from the memory layout, and the two round differently.
    f = F.data[0]
    C, Hf, Wf = f.shape
    K, s = ry.shape[0], ry.shape[1]
    ry = np.ascontiguousarray(ry)
    if mask is None:
        rows = np.matmul(ry, np.ascontiguousarray(f.transpose(1, 0, 2).reshape(Hf, C * Wf)))
    else:
        fm = (f[None] * mask[:, None]).transpose(0, 2, 1, 3).reshape(K, Hf, C * Wf)
        rows = np.matmul(ry, np.ascontiguousarray(fm))
    rows = np.ascontiguousarray(rows.reshape(K, s, C, Wf).transpose(0, 2, 1, 3).reshape(K, C * s, Wf))
    out = np.matmul(rows, np.ascontiguousarray(rx.transpose(0, 2, 1))).reshape(K, C, s, s)

    def backward(g):
        # g: (K,C,s,s) -> dF (1,C,Hf,Wf)
        gf = np.matmul(np.matmul(ry[:, None].transpose(0, 1, 3, 2), g), rx[:, None])
        if mask is not None:
            gf = gf * mask[:, None]
        return (gf.sum(axis=0)[None],)

    return Tensor.from_op(out, (F,), backward, op)


def roi_align(F: Tensor, crops: CropArg, image_dims: ImageDims, s: int = 9) -> Tensor:
    """Bilinearly sample an ``s x s`` grid of bin centers over each crop.

    ``F`` has shape (1,C,Hf,Wf); the result has shape (K,C,s,s), one slice per
    crop.  Pixel coordinates map to feature coordinates by ``Hf/H`` and ``Wf/W``.
    """
    if s < 1:
        raise ValueError(f"align size must be >= 1, got {s}")
    image_dims = ImageDims(*image_dims)
    crops = _crop_list(crops)
    _validate_crops(crops, image_dims)
    _, Hf, Wf = _check_feature(F)
    ry = np.empty((len(crops), s, Hf))
    rx = np.empty((len(crops), s, Wf))
    for k, c in enumerate(crops):
        rows, cols = align_sample_coords(c, image_dims, Hf, Wf, s)
        ry[k] = _interp_matrix(rows, Hf)
        rx[k] = _interp_matrix(cols, Wf)
    return _align(F, ry.astype(F.dtype), rx.astype(F.dtype), None, "roi_align")


def discard_mask(crop: CropRect, image_dims: ImageDims, feat_h: int, feat_w: int) -> np.ndarray:
    """1 outside the crop's feature footprint, 0 on cells whose centers fall inside it."""
    sh, sw = feature_scale(image_dims, feat_h, feat_w)
    rc = np.arange(feat_h) + 0.5
    cc = np.arange(feat_w) + 0.5
    in_r = (rc >= crop.x1 * sh) & (rc < crop.x2 * sh)
    in_c = (cc >= crop.y1 * sw) & (cc < crop.y2 * sw)
    return 1.0 - np.outer(in_r, in_c).astype(np.float64)


def rod_align(F: Tensor, crops: CropArg, image_dims: ImageDims, s: int = 9) -> Tensor:
    """Zero each crop's footprint in ``F`` and resample the whole map to ``s x s``."""
    if s < 1:
        raise ValueError(f"align size must be >= 1, got {s}")
    image_dims = ImageDims(*image_dims)
    crops = _crop_list(crops)
    _validate_crops(crops, image_dims)
    _, Hf, Wf = _check_feature(F)
    K = len(crops)
    ry = np.broadcast_to(resize_matrix(Hf, s), (K, s, Hf)).astype(F.dtype)
    rx = np.broadcast_to(resize_matrix(Wf, s), (K, s, Wf)).astype(F.dtype)
    mask = np.stack([discard_mask(c, image_dims, Hf, Wf) for c in crops]).astype(F.dtype)
    return _align(F, ry, rx, mask, "rod_align")


# ---------------------------------------------------------------------------
# dense layer and loss


FC_BLOCK = 48


def _rowwise_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` in zero-padded blocks of ``FC_BLOCK`` rows.

    BLAS rounds a row differently depending on where it lands in the
    micro-kernel tiling; fixed-size blocks make each row's result independent
    of how many rows are multiplied with it.
    """
    n = x.shape[0]
    padded = -(-n // FC_BLOCK) * FC_BLOCK
    if padded != n:
        x = np.concatenate([x, np.zeros((padded - n, x.shape[1]), dtype=x.dtype)])
    out = np.concatenate([x[i:i + FC_BLOCK] @ w for i in range(0, padded, FC_BLOCK)])
    return out[:n]


def fully_connected(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x`` (B, ...) flattened to (B, D) times ``w`` (D, out), plus optional bias."""
    B = x.shape[0]
    xf = x.data.reshape(B, -1)
    if w.data.ndim != 2 or xf.shape[1] != w.shape[0]:
        raise ValueError(f"input of length {xf.shape[1]} does not match weights {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ValueError(f"bias shape {b.shape} does not match {w.shape[1]} outputs")
    out = _rowwise_matmul(xf, w.data)
    if b is not None:
        out = out + b.data
    xshape = x.shape

    def backward(g):
        gx = (g @ w.data.T).reshape(xshape) if x.requires_grad else None
        gw = xf.T @ g if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, backward, "fully_connected")


def huber_loss(pred: Tensor, target, delta: float = 1.0) -> Tensor:
    """Mean Huber loss of the residual ``target - pred``; returns a scalar tensor."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise ValueError(f"prediction shape {pred.shape} vs target shape {t.shape}")
    e = t - pred.data
    a = np.abs(e)
    per = np.where(a <= delta, 0.5 * e * e, delta * a - 0.5 * delta * delta)
    n = e.size
    clipped = np.clip(e, -delta, delta)

    def backward(g):
        return (-g * clipped / n,)

    return Tensor.from_op(np.asarray(per.mean(), dtype=pred.dtype), (pred,), backward, "huber_loss")
