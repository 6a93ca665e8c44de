"""Grad-CAM, Grad-CAM++ and Smooth Grad-CAM++ with selection machinery.

All three methods share one pipeline: gradients of the chosen class logit
with respect to the visualized layer's activations are turned into
per-feature-map weights, the weighted activation combination is rectified,
optionally restricted to chosen feature maps or neuron subsets, then
max-normalized and bilinearly upsampled to the model's input resolution.

Numerical note on the exponential-score construction: the higher-order
derivative maps of ``exp(score)`` all carry a factor ``exp(score)`` that
cancels in the importance ratio and again in the final normalization.  The
engine therefore anchors the per-sample exponentials to the maximum
pre-bias class score across samples; the dropped common factor
``exp(bias + anchor)`` never enters the arithmetic, which makes saliency
maps exactly invariant under a constant shift of all class scores and keeps
the exponentials in (0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import (
    ForwardTrace,
    forward_to,
    grad_score_wrt_activation,
    higher_order_maps,
)
from .model_format import Model
from .tensor_ops import bilinear_resize, relu

METHODS = ("grad-cam", "grad-cam++", "smooth-grad-cam++")

DEFAULT_N_SAMPLES = 0
DEFAULT_STD_DEV = 0.15
DENOMINATOR_GUARD = 1e-12

__all__ = [
    "METHODS",
    "DEFAULT_N_SAMPLES",
    "DEFAULT_STD_DEV",
    "CamRequest",
    "MapMetadata",
    "SaliencyMap",
    "sample_noised_inputs",
    "apply_neuron_mask",
    "neuron_mask",
    "weighted_combination",
    "alpha_from_derivatives",
    "normalize_and_upsample",
    "grad_cam",
    "grad_cam_plus_plus",
    "smooth_grad_cam_pp",
    "compute_saliency",
    "per_filter_maps",
]


@dataclass(frozen=True)
class CamRequest:
    """One saliency query; defaults follow the published API."""

    layer_name: str
    method: str = "smooth-grad-cam++"
    class_c: int | None = None
    n_samples: int = DEFAULT_N_SAMPLES
    std_dev: float = DEFAULT_STD_DEV
    filters: tuple[int, ...] | None = None
    region: bool = False
    subset: tuple[tuple[int, int], ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(
                f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}"
            )
        if self.n_samples < 0:
            raise ValueError(f"n_samples must be >= 0, got {self.n_samples}")
        if self.std_dev < 0:
            raise ValueError(f"std_dev must be >= 0, got {self.std_dev}")
        if self.filters is not None:
            object.__setattr__(self, "filters", tuple(int(k) for k in self.filters))
        if self.subset is not None:
            object.__setattr__(
                self, "subset", tuple((int(i), int(j)) for i, j in self.subset)
            )
        if self.region:
            if self.subset is None or len(self.subset) != 2:
                raise ValueError(
                    "region=True requires exactly two subset coordinates as corner bounds"
                )

    def validate_for(self, model: Model) -> tuple[int, int, int]:
        """Check layer, filters and subset against the model; returns K,H,W."""
        shape = model.output_shapes[model.layers[model.layer_index(self.layer_name)].name]
        if len(shape) != 3:
            raise ValueError(
                f"layer {self.layer_name!r} has non-spatial output shape {shape}; "
                f"pick a convolutional or pooling layer"
            )
        k, h, w = shape
        if self.filters is not None:
            for f in self.filters:
                if not 0 <= f < k:
                    raise ValueError(
                        f"filter index {f} out of range: layer {self.layer_name!r} "
                        f"has {k} feature maps"
                    )
        if self.subset is not None:
            for i, j in self.subset:
                if not (0 <= i < h and 0 <= j < w):
                    raise ValueError(
                        f"subset coordinate ({i}, {j}) outside layer extent {h}x{w}"
                    )
        if self.class_c is not None and not 0 <= self.class_c < model.num_classes():
            raise ValueError(
                f"class index {self.class_c} out of range [0, {model.num_classes()})"
            )
        return k, h, w


@dataclass(frozen=True)
class MapMetadata:
    """Provenance carried by every saliency map."""

    method: str = ""
    layer_name: str = ""
    class_index: int = -1
    class_label: str = ""
    score: float = float("nan")
    n_samples: int = 0
    std_dev: float = 0.0
    seed: int = 0
    filters: tuple[int, ...] | None = None
    region: bool = False
    subset: tuple[tuple[int, int], ...] | None = None
    zero_map: bool = False


@dataclass(frozen=True)
class SaliencyMap:
    """Input-resolution map in [0, 1] plus provenance metadata.

    The maximum value is exactly 1 unless the raw combination was
    identically zero, in which case ``metadata.zero_map`` is set.
    """

    values: np.ndarray
    metadata: MapMetadata = field(default_factory=MapMetadata)


def sample_noised_inputs(img: np.ndarray, n: int, std_dev: float, seed: int) -> list[np.ndarray]:
    """Gaussian-perturbed copies of ``img``.

    The noise scale is ``std_dev`` times the input's dynamic range
    (max - min), following the SMOOTHGRAD convention.  ``n == 0`` returns
    the original input untouched.  Samples are drawn sequentially from one
    seeded generator, so the sequence is deterministic.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if std_dev < 0:
        raise ValueError(f"std_dev must be >= 0, got {std_dev}")
    img = np.asarray(img, dtype=np.float64)
    if n == 0:
        return [img]
    scale = std_dev * float(img.max() - img.min())
    rng = np.random.default_rng(seed)
    return [img + rng.normal(0.0, scale, size=img.shape) for _ in range(n)]


def neuron_mask(
    shape: tuple[int, int],
    subset: tuple[tuple[int, int], ...] | None,
    region: bool = False,
) -> np.ndarray:
    """0/1 mask over a feature-map extent for the chosen neurons.

    With ``region`` the two coordinates bound an inclusive axis-aligned
    rectangle; otherwise each listed coordinate is kept individually.  No
    subset means no masking.
    """
    h, w = shape
    if subset is None:
        return np.ones((h, w))
    for i, j in subset:
        if not (0 <= i < h and 0 <= j < w):
            raise ValueError(
                f"subset coordinate ({i}, {j}) outside layer extent {h}x{w}"
            )
    mask = np.zeros((h, w))
    if region:
        if len(subset) != 2:
            raise ValueError(
                f"region masking needs exactly two corner coordinates, got {len(subset)}"
            )
        (i0, j0), (i1, j1) = subset
        r0, r1 = min(i0, i1), max(i0, i1)
        c0, c1 = min(j0, j1), max(j0, j1)
        mask[r0:r1 + 1, c0:c1 + 1] = 1.0
    else:
        for i, j in subset:
            mask[i, j] = 1.0
    return mask


def apply_neuron_mask(
    a: np.ndarray,
    subset: tuple[tuple[int, int], ...] | None,
    region: bool = False,
) -> np.ndarray:
    """Clip a feature map to the chosen neurons; others become zero."""
    if subset is None:
        return a
    return a * neuron_mask(a.shape, subset, region)


def weighted_combination(
    activations: np.ndarray,
    weights: np.ndarray,
    filters: tuple[int, ...] | None = None,
) -> np.ndarray:
    """Pre-rectification combination ``sum_k w_k A_k`` over chosen filters."""
    if filters is None:
        return np.tensordot(weights, activations, axes=(0, 0))
    out = np.zeros(activations.shape[1:])
    for k in filters:
        out = out + weights[k] * activations[k]
    return out


def alpha_from_derivatives(
    d1: np.ndarray,
    d2: np.ndarray,
    d3: np.ndarray,
    activations: np.ndarray,
    numerator: str = "second-order",
) -> np.ndarray:
    """Per-location importance weights from averaged derivative maps.

    ``alpha = d2 / (2 d2 + sum_ab(A) * d3)`` elementwise per feature map;
    locations whose denominator magnitude falls below 1e-12 get weight 0,
    since they carry no gradient mass and would otherwise divide by zero.

    ``numerator="first-order"`` is a compatibility switch that places the
    averaged first derivative in the numerator instead.  The default keeps
    the second derivative there, matching the single-sample importance
    ratio being smoothed; see the README for why the two readings exist.
    """
    if not d1.shape == d2.shape == d3.shape == activations.shape:
        raise ValueError(
            f"derivative/activation shapes disagree: {d1.shape}, {d2.shape}, "
            f"{d3.shape}, {activations.shape}"
        )
    if numerator not in ("second-order", "first-order"):
        raise ValueError(f"unknown numerator mode {numerator!r}")
    sum_a = activations.sum(axis=(1, 2))
    denom = 2.0 * d2 + sum_a[:, None, None] * d3
    num = d2 if numerator == "second-order" else d1
    ok = np.abs(denom) >= DENOMINATOR_GUARD
    return np.divide(num, denom, out=np.zeros_like(num), where=ok)


def normalize_and_upsample(
    raw: np.ndarray,
    h_in: int,
    w_in: int,
    metadata: MapMetadata | None = None,
) -> SaliencyMap:
    """Max-normalize a nonnegative raw map, upsample, clamp to [0, 1].

    The map is renormalized after interpolation so its maximum is exactly 1
    whenever any mass survives (interpolation can shave an interior peak
    that falls between output sample points).  An identically zero raw map
    stays zero and is flagged in the metadata.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.min() < 0:
        raise ValueError("raw saliency map must be nonnegative (post-rectification)")
    peak = raw.max()
    if peak > 0:
        raw = raw / peak
    values = bilinear_resize(raw, h_in, w_in)
    peak2 = values.max()
    if peak2 > 0:
        values = values / peak2
    values = np.clip(values, 0.0, 1.0)
    meta = metadata if metadata is not None else MapMetadata()
    meta = replace(meta, zero_map=bool(peak2 == 0))
    return SaliencyMap(values=values, metadata=meta)


# ---------------------------------------------------------------------------
# Method pipelines
# ---------------------------------------------------------------------------

def _resolve_class(model: Model, trace: ForwardTrace, req: CamRequest) -> int:
    if req.class_c is not None:
        return req.class_c
    return int(np.argmax(trace.scores))


def _metadata(model: Model, req: CamRequest, class_c: int, trace: ForwardTrace) -> MapMetadata:
    labels = model.labels
    return MapMetadata(
        method=req.method,
        layer_name=req.layer_name,
        class_index=class_c,
        class_label=labels[class_c] if class_c < len(labels) else "",
        score=float(trace.scores[class_c]),
        n_samples=req.n_samples,
        std_dev=req.std_dev,
        seed=req.seed,
        filters=req.filters,
        region=req.region,
        subset=req.subset,
    )


def _finish(
    model: Model,
    req: CamRequest,
    clean: ForwardTrace,
    class_c: int,
    weights: np.ndarray,
    filters: tuple[int, ...] | None,
) -> SaliencyMap:
    activations = clean.target_activations
    masked = activations * neuron_mask(activations.shape[1:], req.subset, req.region)
    raw = relu(weighted_combination(masked, weights, filters))
    spec = model.input_spec
    meta = _metadata(model, req, class_c, clean)
    if filters != req.filters:
        meta = replace(meta, filters=filters)
    return normalize_and_upsample(raw, spec.height, spec.width, meta)


def _feature_weights_grad_cam(clean: ForwardTrace, model: Model, class_c: int) -> np.ndarray:
    g = grad_score_wrt_activation(clean, model, class_c)
    return g.mean(axis=(1, 2))


def _averaged_maps(
    model: Model, img: np.ndarray, req: CamRequest, clean: ForwardTrace, class_c: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample-averaged derivative maps of the exponential class score.

    Per-sample exponentials are anchored to the maximum pre-bias class
    score so the dropped common factor cancels exactly (see module
    docstring).  With zero samples the clean trace is the single sample.
    """
    if req.n_samples == 0:
        traces = [clean]
    else:
        noised = sample_noised_inputs(img, req.n_samples, req.std_dev, req.seed)
        traces = [forward_to(model, x, req.layer_name) for x in noised]
    grads = [grad_score_wrt_activation(t, model, class_c) for t in traces]
    anchors = [float(t.prebias_scores[class_c]) for t in traces]
    shift = max(anchors)
    maps = [higher_order_maps(g, s, shift) for g, s in zip(grads, anchors)]
    n = float(len(maps))
    d1 = sum(m.d1 for m in maps) / n
    d2 = sum(m.d2 for m in maps) / n
    d3 = sum(m.d3 for m in maps) / n
    return d1, d2, d3


def _plus_plus_weights(
    model: Model,
    img: np.ndarray,
    req: CamRequest,
    clean: ForwardTrace,
    class_c: int,
    alpha_numerator: str,
) -> np.ndarray:
    d1, d2, d3 = _averaged_maps(model, img, req, clean, class_c)
    alpha = alpha_from_derivatives(
        d1, d2, d3, clean.target_activations, numerator=alpha_numerator
    )
    return (alpha * relu(d1)).sum(axis=(1, 2))


def grad_cam(model: Model, img: np.ndarray, req: CamRequest) -> SaliencyMap:
    """Feature-map weights are the spatial mean of the class gradient."""
    if req.method != "grad-cam":
        raise ValueError(f"request method is {req.method!r}, expected 'grad-cam'")
    req.validate_for(model)
    clean = forward_to(model, img, req.layer_name)
    class_c = _resolve_class(model, clean, req)
    weights = _feature_weights_grad_cam(clean, model, class_c)
    return _finish(model, req, clean, class_c, weights, req.filters)


def grad_cam_plus_plus(
    model: Model, img: np.ndarray, req: CamRequest, alpha_numerator: str = "second-order"
) -> SaliencyMap:
    """Single-sample path: location-weighted rectified first derivatives."""
    if req.method != "grad-cam++":
        raise ValueError(f"request method is {req.method!r}, expected 'grad-cam++'")
    req.validate_for(model)
    single = replace(req, n_samples=0)
    clean = forward_to(model, img, req.layer_name)
    class_c = _resolve_class(model, clean, req)
    weights = _plus_plus_weights(model, img, single, clean, class_c, alpha_numerator)
    return _finish(model, single, clean, class_c, weights, single.filters)


def smooth_grad_cam_pp(
    model: Model, img: np.ndarray, req: CamRequest, alpha_numerator: str = "second-order"
) -> SaliencyMap:
    """Noise-averaged derivative maps fed through the Grad-CAM++ weighting.

    The activation map in the importance denominator and in the final
    combination is always the clean input's, since the map explains the
    original image.  With ``n_samples == 0`` this is exactly the
    single-sample path.
    """
    if req.method != "smooth-grad-cam++":
        raise ValueError(
            f"request method is {req.method!r}, expected 'smooth-grad-cam++'"
        )
    req.validate_for(model)
    clean = forward_to(model, img, req.layer_name)
    class_c = _resolve_class(model, clean, req)
    weights = _plus_plus_weights(model, img, req, clean, class_c, alpha_numerator)
    return _finish(model, req, clean, class_c, weights, req.filters)


_DISPATCH = {
    "grad-cam": grad_cam,
    "grad-cam++": grad_cam_plus_plus,
    "smooth-grad-cam++": smooth_grad_cam_pp,
}


def compute_saliency(model: Model, img: np.ndarray, req: CamRequest) -> SaliencyMap:
    """Run the method named in the request."""
    return _DISPATCH[req.method](model, img, req)


def per_filter_maps(model: Model, img: np.ndarray, req: CamRequest) -> list[SaliencyMap]:
    """One saliency map per requested feature map (all maps if unset).

    Weights and gradients are computed once from the full activation
    tensor; each output restricts the combination to a single k.
    """
    k, _, _ = req.validate_for(model)
    clean = forward_to(model, img, req.layer_name)
    class_c = _resolve_class(model, clean, req)
    if req.method == "grad-cam":
        weights = _feature_weights_grad_cam(clean, model, class_c)
    else:
        effective = replace(req, n_samples=0) if req.method == "grad-cam++" else req
        weights = _plus_plus_weights(
            model, img, effective, clean, class_c, "second-order"
        )
    selected = req.filters if req.filters is not None else tuple(range(k))
    return [
        _finish(model, req, clean, class_c, weights, (f,))
        for f in selected
    ]
