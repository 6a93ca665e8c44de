"""camkit: a self-contained CNN saliency engine.

Computes Grad-CAM, Grad-CAM++ and Smooth Grad-CAM++ heatmaps at layer,
feature-map and single-neuron granularity, with its own forward inference
and reverse-mode gradients over the documented .camf weight format.
"""

from .autodiff import (
    DerivativeMaps,
    ForwardTrace,
    finite_diff_exp_maps,
    finite_diff_grad,
    forward_to,
    grad_score_wrt_activation,
    higher_order_maps,
    infer,
    run_tail,
)
from .engine import (
    CamRequest,
    MapMetadata,
    SaliencyMap,
    alpha_from_derivatives,
    apply_neuron_mask,
    compute_saliency,
    grad_cam,
    grad_cam_plus_plus,
    normalize_and_upsample,
    per_filter_maps,
    sample_noised_inputs,
    smooth_grad_cam_pp,
    weighted_combination,
)
from .estimators import GradCam, GradCamPlusPlus, SmoothGradCamPlusPlus
from .exceptions import CamKitError, ModelFormatError, NumericsError
from .imaging import decode_png, encode_png, overlay, preprocess, render_heatmap
from .model_format import (
    InputSpec,
    LayerRecord,
    Model,
    ModelManifest,
    load_model,
    save_model,
    summarize,
)
from .tensor_ops import (
    ConvSpec,
    bilinear_resize,
    conv2d,
    conv_output_shape,
    global_avg_pool,
    linear,
    maxpool2d,
    relu,
)

__version__ = "0.1.0"

__all__ = [
    "CamKitError", "ModelFormatError", "NumericsError",
    "ConvSpec", "conv2d", "conv_output_shape", "relu", "maxpool2d",
    "linear", "global_avg_pool", "bilinear_resize",
    "ForwardTrace", "DerivativeMaps", "forward_to", "infer", "run_tail",
    "grad_score_wrt_activation", "higher_order_maps", "finite_diff_grad",
    "finite_diff_exp_maps",
    "InputSpec", "LayerRecord", "ModelManifest", "Model",
    "load_model", "save_model", "summarize",
    "CamRequest", "MapMetadata", "SaliencyMap", "sample_noised_inputs",
    "alpha_from_derivatives", "apply_neuron_mask", "weighted_combination",
    "normalize_and_upsample", "grad_cam", "grad_cam_plus_plus",
    "smooth_grad_cam_pp", "compute_saliency", "per_filter_maps",
    "GradCam", "GradCamPlusPlus", "SmoothGradCamPlusPlus",
    "decode_png", "encode_png", "preprocess", "render_heatmap", "overlay",
    "__version__",
]
