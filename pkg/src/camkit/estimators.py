"""Scikit-learn style estimator facade over the saliency engine.

The explainers follow the estimator protocol: hyperparameters are stored
verbatim in ``__init__`` (so ``get_params``, ``set_params`` and ``clone``
work), ``fit`` binds and validates the model, and ``transform`` maps images
to input-resolution saliency arrays.  ``predict`` exposes the wrapped
model's class decisions so an explainer drops into pipelines that expect a
classifier-shaped object.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .autodiff import infer
from .engine import CamRequest, SaliencyMap, compute_saliency
from .validation import as_model_inputs, ensure_model

__all__ = ["GradCam", "GradCamPlusPlus", "SmoothGradCamPlusPlus"]


class _BaseCamExplainer(TransformerMixin, BaseEstimator):
    _method = ""

    def __init__(self, model=None, layer_name=None, class_c=None,
                 n_samples=0, std_dev=0.15, filters=None, region=False,
                 subset=None, seed=0):
        self.model = model
        self.layer_name = layer_name
        self.class_c = class_c
        self.n_samples = n_samples
        self.std_dev = std_dev
        self.filters = filters
        self.region = region
        self.subset = subset
        self.seed = seed

    def _request(self) -> CamRequest:
        return CamRequest(
            layer_name=self.layer_name,
            method=self._method,
            class_c=self.class_c,
            n_samples=self.n_samples,
            std_dev=self.std_dev,
            filters=tuple(self.filters) if self.filters is not None else None,
            region=self.region,
            subset=tuple(tuple(c) for c in self.subset) if self.subset is not None else None,
            seed=self.seed,
        )

    def fit(self, X=None, y=None):
        """Bind and validate the model and request; X and y are ignored."""
        if self.model is None:
            raise ValueError("model must be set before fit")
        if self.layer_name is None:
            raise ValueError("layer_name must be set before fit")
        model = ensure_model(self.model)
        request = self._request()
        request.validate_for(model)
        self.model_ = model
        self.request_ = request
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                f"this {type(self).__name__} instance is not fitted yet; call fit first"
            )

    def explain(self, x) -> SaliencyMap:
        """Full saliency map with provenance metadata for one image."""
        self._check_fitted()
        tensor = as_model_inputs(x, self.model_)[0]
        return compute_saliency(self.model_, tensor, self.request_)

    def transform(self, X) -> np.ndarray:
        """Saliency values for a batch; returns (n, H_in, W_in)."""
        self._check_fitted()
        tensors = as_model_inputs(X, self.model_)
        return np.stack([
            compute_saliency(self.model_, t, self.request_).values for t in tensors
        ])

    def predict(self, X) -> np.ndarray:
        """Class decisions of the wrapped model."""
        self._check_fitted()
        tensors = as_model_inputs(X, self.model_)
        return np.array([int(np.argmax(infer(self.model_, t))) for t in tensors])

    def score_samples(self, X) -> np.ndarray:
        """Logit vectors of the wrapped model, one row per image."""
        self._check_fitted()
        tensors = as_model_inputs(X, self.model_)
        return np.stack([infer(self.model_, t) for t in tensors])


class GradCam(_BaseCamExplainer):
    """Feature maps weighted by globally averaged class gradients."""

    _method = "grad-cam"


class GradCamPlusPlus(_BaseCamExplainer):
    """Location-weighted rectified gradients; sharper than plain averaging."""

    _method = "grad-cam++"


class SmoothGradCamPlusPlus(_BaseCamExplainer):
    """Gradient maps averaged over Gaussian-perturbed copies of the input."""

    _method = "smooth-grad-cam++"
