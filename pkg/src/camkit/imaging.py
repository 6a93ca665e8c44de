"""PNG decode/encode, model-spec preprocessing, colormap and overlay.

Images are uint8 numpy arrays of shape (H, W, 3), row-major.  Only 8-bit
RGB and 8-bit grayscale PNGs are accepted; grayscale expands to RGB by
channel replication and 16-bit files are rejected outright.  Encoding uses
fixed settings so identical pixel data always produces identical bytes.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError

from .model_format import InputSpec
from .tensor_ops import bilinear_resize

__all__ = [
    "decode_png",
    "encode_png",
    "preprocess",
    "render_heatmap",
    "overlay",
    "check_rgb_image",
]

# Piecewise-linear colormap anchors at map values 0, 0.25, 0.5, 0.75, 1.
COLORMAP_ANCHORS = (
    (0.00, (0, 0, 255)),
    (0.25, (0, 255, 255)),
    (0.50, (0, 255, 0)),
    (0.75, (255, 255, 0)),
    (1.00, (255, 0, 0)),
)

_PNG_COMPRESS_LEVEL = 6


def check_rgb_image(img: np.ndarray, context: str = "image") -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(
            f"{context} must be an uint8 H,W,3 array, got shape {arr.shape} "
            f"dtype {arr.dtype}"
        )
    return arr


def decode_png(path) -> np.ndarray:
    """Read an 8-bit RGB or grayscale PNG as an (H, W, 3) uint8 array."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "I;16N"):
                raise ValueError(
                    f"unsupported bit depth in {path}: 16-bit PNGs are not supported, "
                    f"re-export as 8-bit"
                )
            if mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
                return np.repeat(arr[:, :, None], 3, axis=2)
            if mode == "RGB":
                return np.asarray(im, dtype=np.uint8)
            raise ValueError(
                f"unsupported PNG mode {mode!r} in {path}: expected 8-bit RGB or grayscale"
            )
    except UnidentifiedImageError as exc:
        raise ValueError(f"cannot decode {path}: {exc}") from exc


def encode_png(img: np.ndarray, path) -> None:
    """Write an (H, W, 3) uint8 array as RGB PNG with fixed settings."""
    arr = check_rgb_image(img)
    Image.fromarray(arr, mode="RGB").save(
        path, format="PNG", compress_level=_PNG_COMPRESS_LEVEL
    )


def preprocess(img: np.ndarray, spec: InputSpec) -> np.ndarray:
    """Image to model input: resize, scale to [0,1], normalize, channels-first.

    A 3-channel spec consumes RGB directly; a 1-channel spec averages the
    RGB planes.  Resizing is the same align-corners-false bilinear used for
    saliency upsampling.
    """
    arr = check_rgb_image(img).astype(np.float64)
    planes = [
        bilinear_resize(arr[:, :, c], spec.height, spec.width) for c in range(3)
    ]
    if spec.channels == 3:
        chans = planes
    elif spec.channels == 1:
        chans = [(planes[0] + planes[1] + planes[2]) / 3.0]
    else:
        raise ValueError(
            f"model expects {spec.channels} input channels; only 1- and 3-channel "
            f"models can be fed from RGB images"
        )
    out = np.stack(chans) / 255.0
    mean = np.asarray(spec.mean)[:, None, None]
    std = np.asarray(spec.std)[:, None, None]
    return (out - mean) / std


def render_heatmap(values: np.ndarray) -> np.ndarray:
    """Map saliency values in [0,1] through the blue-green-red colormap.

    Linear interpolation between the documented anchors; rounding to the
    nearest integer sample.  Monotone in the red channel.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.min() < 0 or v.max() > 1:
        raise ValueError(
            f"saliency values must lie in [0, 1], got range "
            f"[{v.min():.4g}, {v.max():.4g}]"
        )
    xs = np.array([a[0] for a in COLORMAP_ANCHORS])
    out = np.empty(v.shape + (3,), dtype=np.uint8)
    for c in range(3):
        ys = np.array([a[1][c] for a in COLORMAP_ANCHORS], dtype=np.float64)
        out[..., c] = np.rint(np.interp(v, xs, ys)).astype(np.uint8)
    return out


def overlay(base: np.ndarray, heat: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend ``alpha * heat + (1 - alpha) * base`` per pixel, rounded."""
    base = check_rgb_image(base, "base image")
    heat = check_rgb_image(heat, "heatmap image")
    if base.shape != heat.shape:
        raise ValueError(
            f"extent mismatch: base {base.shape[:2]} vs heatmap {heat.shape[:2]}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    mix = alpha * heat.astype(np.float64) + (1.0 - alpha) * base.astype(np.float64)
    return np.rint(mix).astype(np.uint8)
