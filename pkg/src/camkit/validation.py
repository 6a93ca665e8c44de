"""Input validation helpers shared by the estimator facade and the engine."""

from __future__ import annotations

import os

import numpy as np

from .imaging import preprocess
from .model_format import Model, load_model

__all__ = ["ensure_model", "as_model_inputs"]


def ensure_model(model) -> Model:
    """Accept a loaded model or a filesystem path to a .camf file."""
    if isinstance(model, Model):
        return model
    if isinstance(model, (str, os.PathLike)):
        return load_model(model)
    raise TypeError(
        f"model must be a camkit Model or a path to a .camf file, got {type(model).__name__}"
    )


def _single_input(x, model: Model) -> np.ndarray:
    arr = np.asarray(x)
    spec = model.input_spec
    if arr.dtype == np.uint8:
        return preprocess(arr, spec)
    expected = (spec.channels, spec.height, spec.width)
    arr = arr.astype(np.float64)
    if arr.shape != expected:
        raise ValueError(
            f"preprocessed input shape {arr.shape} does not match model input {expected}"
        )
    return arr


def as_model_inputs(X, model: Model) -> list[np.ndarray]:
    """Normalize images to a list of model-input tensors.

    Accepts a single uint8 (H, W, 3) image, a uint8 (n, H, W, 3) batch, a
    float (C, H, W) preprocessed tensor, a float (n, C, H, W) batch, or a
    sequence of any of those items.  uint8 data runs through the model's
    preprocessing spec; float data is taken as already preprocessed.
    """
    if isinstance(X, np.ndarray):
        if X.dtype == np.uint8:
            if X.ndim == 3:
                return [_single_input(X, model)]
            if X.ndim == 4:
                return [_single_input(x, model) for x in X]
        else:
            if X.ndim == 3:
                return [_single_input(X, model)]
            if X.ndim == 4:
                return [_single_input(x, model) for x in X]
        raise ValueError(f"cannot interpret array of shape {X.shape} as image input")
    if isinstance(X, (list, tuple)):
        return [_single_input(x, model) for x in X]
    raise TypeError(f"cannot interpret {type(X).__name__} as image input")
