"""Dense float64 tensor primitives for sequential CNN inference.

Tensors are plain ``numpy.ndarray`` objects in float64, laid out
channels-first and row-major (C order).  Every primitive here is a pure
function of its inputs, so concurrent calls on distinct arrays are safe.
The forward primitives come with matching backward helpers used by the
reverse-mode gradient pass; only gradients with respect to layer inputs
are supported (never weights).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import NumericsError

__all__ = [
    "ConvSpec",
    "as_tensor",
    "ensure_finite",
    "conv_output_shape",
    "conv2d",
    "conv2d_backward_data",
    "relu",
    "maxpool2d",
    "maxpool2d_with_indices",
    "maxpool2d_backward",
    "linear",
    "global_avg_pool",
    "bilinear_resize",
]


def as_tensor(data, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Coerce ``data`` to a C-contiguous float64 array, optionally reshaped."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


def ensure_finite(arr: np.ndarray, context: str) -> np.ndarray:
    """Reject NaN/Inf values; every primitive output must stay finite."""
    if not np.isfinite(arr).all():
        raise NumericsError(f"non-finite values produced in {context}")
    return arr


@dataclass(frozen=True)
class ConvSpec:
    """Hyperparameters of a 2-D convolution.

    ``padding`` is the symmetric zero padding added on every side.  A value
    of ``None`` selects SAME mode, which is only meaningful for shape
    arithmetic (``conv_output_shape``); executing a convolution requires an
    explicit padding amount.
    """

    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    padding: int | None = 0
    in_channels: int | None = None
    out_channels: int | None = None

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ValueError(
                f"kernel extents must be >= 1, got {self.kernel_h}x{self.kernel_w}"
            )
        if self.stride_h < 1 or self.stride_w < 1:
            raise ValueError(
                f"strides must be >= 1, got ({self.stride_h}, {self.stride_w})"
            )
        if self.padding is not None and self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")


def conv_output_shape(h: int, w: int, spec: ConvSpec) -> tuple[int, int]:
    """Spatial output extents of a convolution.

    With explicit padding P the output height is
    ``floor((H - F_h + 2P) / S_h) + 1`` and likewise for the width.  In SAME
    mode (``spec.padding is None``) the extents are ``ceil(H / S_h)`` and
    ``ceil(W / S_w)``.
    """
    if h < 1 or w < 1:
        raise ValueError(f"input extents must be positive, got {h}x{w}")
    if spec.padding is None:
        return math.ceil(h / spec.stride_h), math.ceil(w / spec.stride_w)
    out_h = (h - spec.kernel_h + 2 * spec.padding) // spec.stride_h + 1
    out_w = (w - spec.kernel_w + 2 * spec.padding) // spec.stride_w + 1
    if out_h < 1 or out_w < 1:
        raise ValueError(
            f"convolution of {h}x{w} input with kernel "
            f"{spec.kernel_h}x{spec.kernel_w}, stride ({spec.stride_h}, {spec.stride_w}), "
            f"padding {spec.padding} yields non-positive output {out_h}x{out_w}"
        )
    return out_h, out_w


def _check_conv_args(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, spec: ConvSpec) -> None:
    if x.ndim != 3:
        raise ValueError(f"conv2d expects a C,H,W input, got shape {x.shape}")
    if weights.ndim != 4:
        raise ValueError(f"conv2d expects K,C,Fh,Fw weights, got shape {weights.shape}")
    if spec.padding is None:
        raise ValueError("conv2d requires explicit symmetric padding; SAME mode is shape arithmetic only")
    k, c_w, fh, fw = weights.shape
    if x.shape[0] != c_w:
        raise ValueError(
            f"input channel count mismatch: input shape {x.shape} vs weights shape {weights.shape}"
        )
    if (fh, fw) != (spec.kernel_h, spec.kernel_w):
        raise ValueError(
            f"kernel extent mismatch: weights shape {weights.shape} vs spec "
            f"{spec.kernel_h}x{spec.kernel_w}"
        )
    if spec.in_channels is not None and spec.in_channels != c_w:
        raise ValueError(
            f"spec declares {spec.in_channels} input channels, weights have {c_w}"
        )
    if spec.out_channels is not None and spec.out_channels != k:
        raise ValueError(
            f"spec declares {spec.out_channels} output channels, weights have {k}"
        )
    if bias.shape != (k,):
        raise ValueError(f"bias shape {bias.shape} does not match {k} output channels")


def conv2d(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Cross-correlate ``x`` (C,H,W) with ``weights`` (K,C,Fh,Fw) plus bias.

    Each output element is the bias-shifted dot product of the receptive
    field with the kernel.  Implemented as im2col plus one matmul.
    """
    _check_conv_args(x, weights, bias, spec)
    k = weights.shape[0]
    c, h, w = x.shape
    p = spec.padding
    out_h, out_w = conv_output_shape(h, w, spec)

    if p > 0:
        xp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=np.float64)
        xp[:, p:p + h, p:p + w] = x
    else:
        xp = np.ascontiguousarray(x, dtype=np.float64)

    # Strided view of all receptive fields: (C, Fh, Fw, out_h, out_w).
    sc, sh, sw = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(c, spec.kernel_h, spec.kernel_w, out_h, out_w),
        strides=(sc, sh, sw, sh * spec.stride_h, sw * spec.stride_w),
        writeable=False,
    )
    cols = windows.reshape(c * spec.kernel_h * spec.kernel_w, out_h * out_w)
    out = weights.reshape(k, -1) @ cols + bias[:, None]
    return ensure_finite(out.reshape(k, out_h, out_w), "conv2d")


def conv2d_backward_data(
    grad_out: np.ndarray, weights: np.ndarray, input_shape: tuple[int, int, int], spec: ConvSpec
) -> np.ndarray:
    """Gradient of a conv2d output with respect to its input.

    ``grad_out`` has shape (K, out_h, out_w); the result matches
    ``input_shape`` (C, H, W).  Scatter per kernel offset, which mirrors the
    strided gather in the forward pass.
    """
    c, h, w = input_shape
    k, out_h, out_w = grad_out.shape
    p = spec.padding
    grad_pad = np.zeros((c, h + 2 * p, w + 2 * p), dtype=np.float64)
    for di in range(spec.kernel_h):
        for dj in range(spec.kernel_w):
            # (K,C) x (K,out_h,out_w) -> (C,out_h,out_w)
            contrib = np.tensordot(weights[:, :, di, dj], grad_out, axes=([0], [0]))
            grad_pad[
                :,
                di:di + spec.stride_h * out_h:spec.stride_h,
                dj:dj + spec.stride_w * out_w:spec.stride_w,
            ] += contrib
    if p > 0:
        return grad_pad[:, p:p + h, p:p + w].copy()
    return grad_pad


def relu(t: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(t, 0.0)


def _pool_windows(t: np.ndarray, window: int, stride: int) -> np.ndarray:
    c, h, w = t.shape
    out_h = (h - window) // stride + 1
    out_w = (w - window) // stride + 1
    sc, sh, sw = t.strides
    return np.lib.stride_tricks.as_strided(
        t,
        shape=(c, out_h, out_w, window, window),
        strides=(sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def maxpool2d_with_indices(t: np.ndarray, window: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-window maximum plus the flat within-window argmax of each cell.

    Ties resolve to the first (row-major) occurrence, so routing is
    deterministic.  The indices feed ``maxpool2d_backward``.
    """
    if window < 1 or stride < 1:
        raise ValueError(f"window and stride must be >= 1, got {window}, {stride}")
    if t.ndim != 3:
        raise ValueError(f"maxpool2d expects a C,H,W input, got shape {t.shape}")
    c, h, w = t.shape
    if window > h or window > w:
        raise ValueError(f"pool window {window} larger than input extents {h}x{w}")
    t = np.ascontiguousarray(t, dtype=np.float64)
    windows = _pool_windows(t, window, stride)
    flat = windows.reshape(*windows.shape[:3], window * window)
    idx = flat.argmax(axis=3)
    out = np.take_along_axis(flat, idx[..., None], axis=3)[..., 0]
    return out, idx


def maxpool2d(t: np.ndarray, window: int, stride: int) -> np.ndarray:
    """Per-window maximum over each channel."""
    out, _ = maxpool2d_with_indices(t, window, stride)
    return out


def maxpool2d_backward(
    grad_out: np.ndarray, indices: np.ndarray, input_shape: tuple[int, int, int], window: int, stride: int
) -> np.ndarray:
    """Route output gradients back to the recorded argmax positions."""
    c, h, w = input_shape
    _, out_h, out_w = grad_out.shape
    grad_in = np.zeros(input_shape, dtype=np.float64)
    ch, oi, oj = np.meshgrid(
        np.arange(c), np.arange(out_h), np.arange(out_w), indexing="ij"
    )
    rows = oi * stride + indices // window
    cols = oj * stride + indices % window
    np.add.at(grad_in, (ch, rows, cols), grad_out)
    return grad_in


def linear(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map W @ x + b for a flat input vector."""
    if x.ndim != 1:
        raise ValueError(f"linear expects a flat vector, got shape {x.shape}")
    if weights.ndim != 2 or weights.shape[1] != x.shape[0]:
        raise ValueError(
            f"linear shape mismatch: weights {weights.shape} vs input {x.shape}"
        )
    if bias.shape != (weights.shape[0],):
        raise ValueError(
            f"linear bias shape {bias.shape} does not match {weights.shape[0]} outputs"
        )
    return ensure_finite(weights @ x + bias, "linear")


def global_avg_pool(t: np.ndarray) -> np.ndarray:
    """Per-channel spatial mean of a (K,H,W) tensor."""
    if t.ndim != 3:
        raise ValueError(f"global_avg_pool expects a K,H,W input, got shape {t.shape}")
    return t.mean(axis=(1, 2))


def bilinear_resize(t: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear interpolation of a (H,W) map with the align-corners-false
    convention: target sample i maps to source coordinate
    ``(i + 0.5) * H / out_h - 0.5`` clamped to the valid range.

    Constant inputs map to constant outputs, and resizing to the same
    extents reproduces the input exactly.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target extents must be >= 1, got {out_h}x{out_w}")
    if t.ndim != 2:
        raise ValueError(f"bilinear_resize expects a H,W map, got shape {t.shape}")
    h, w = t.shape
    t = np.asarray(t, dtype=np.float64)

    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]

    top = t[np.ix_(y0, x0)] * (1.0 - fx) + t[np.ix_(y0, x1)] * fx
    bot = t[np.ix_(y1, x0)] * (1.0 - fx) + t[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bot * fy
