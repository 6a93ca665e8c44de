"""Source models and their mapping onto .camf layer records.

Two recipes ship: ``tiny`` (a small conv net for fast cross-engine checks)
and ``vgg16`` (torchvision's VGG-16 with Keras-style layer names, so the
last convolution layer is ``block5_conv3``).  Conversion walks an ordered
list of named torch modules; anything outside the six supported kinds
aborts with the offending layer name.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .writer import CamfLayer, CamfModel


class UnsupportedLayerError(ValueError):
    """A source module has no .camf equivalent."""


RECIPES = ("tiny", "vgg16")

IMAGENET_MEAN = [0.485, 0.456, 0.406]
IMAGENET_STD = [0.229, 0.224, 0.225]


def _to_pair(value) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        return int(value[0]), int(value[1])
    return int(value), int(value)


def convert_modules(named_modules: list[tuple[str, nn.Module]]) -> list[CamfLayer]:
    """Map torch modules to .camf layer records.

    Dropout is dropped (inference identity).  ``AdaptiveAvgPool2d(1)`` maps
    to a ``gap`` record and absorbs an immediately following ``Flatten``,
    since gap already yields a flat vector.
    """
    layers: list[CamfLayer] = []
    skip_next_flatten = False
    for name, module in named_modules:
        if skip_next_flatten and isinstance(module, nn.Flatten):
            skip_next_flatten = False
            continue
        skip_next_flatten = False

        if isinstance(module, nn.Conv2d):
            pad_h, pad_w = _to_pair(module.padding)
            stride_h, stride_w = _to_pair(module.stride)
            dil_h, dil_w = _to_pair(module.dilation)
            if pad_h != pad_w:
                raise UnsupportedLayerError(
                    f"layer {name!r}: asymmetric padding {module.padding} is unsupported"
                )
            if (dil_h, dil_w) != (1, 1) or module.groups != 1:
                raise UnsupportedLayerError(
                    f"layer {name!r}: dilation/groups other than 1 are unsupported"
                )
            if module.bias is None:
                raise UnsupportedLayerError(f"layer {name!r}: conv without bias is unsupported")
            weight = module.weight.detach().cpu().numpy()
            layers.append(CamfLayer(
                name=name, kind="conv",
                params={
                    "out_channels": int(module.out_channels),
                    "in_channels": int(module.in_channels),
                    "kernel": [int(module.kernel_size[0]), int(module.kernel_size[1])],
                    "stride": [stride_h, stride_w],
                    "padding": int(pad_h),
                },
                weight=weight,
                bias=module.bias.detach().cpu().numpy(),
            ))
        elif isinstance(module, nn.ReLU):
            layers.append(CamfLayer(name=name, kind="relu"))
        elif isinstance(module, nn.MaxPool2d):
            k_h, k_w = _to_pair(module.kernel_size)
            s_h, s_w = _to_pair(module.stride)
            p_h, p_w = _to_pair(module.padding)
            if k_h != k_w or s_h != s_w:
                raise UnsupportedLayerError(
                    f"layer {name!r}: non-square pooling is unsupported"
                )
            if (p_h, p_w) != (0, 0) or module.ceil_mode:
                raise UnsupportedLayerError(
                    f"layer {name!r}: padded or ceil-mode pooling is unsupported"
                )
            layers.append(CamfLayer(name=name, kind="maxpool",
                                    params={"window": k_h, "stride": s_h}))
        elif isinstance(module, nn.Flatten):
            layers.append(CamfLayer(name=name, kind="flatten"))
        elif isinstance(module, nn.Linear):
            layers.append(CamfLayer(
                name=name, kind="linear",
                params={
                    "out_features": int(module.out_features),
                    "in_features": int(module.in_features),
                },
                weight=module.weight.detach().cpu().numpy(),
                bias=module.bias.detach().cpu().numpy(),
            ))
        elif isinstance(module, nn.AdaptiveAvgPool2d):
            if _to_pair(module.output_size) != (1, 1):
                raise UnsupportedLayerError(
                    f"layer {name!r}: adaptive pooling to sizes other than 1x1 is "
                    f"unsupported (identity pools may simply be omitted)"
                )
            layers.append(CamfLayer(name=name, kind="gap"))
            skip_next_flatten = True
        elif isinstance(module, nn.Dropout):
            continue
        else:
            raise UnsupportedLayerError(
                f"layer {name!r}: unsupported layer kind {type(module).__name__}"
            )
    return layers


# ---------------------------------------------------------------------------
# tiny recipe
# ---------------------------------------------------------------------------

def build_tiny(seed: int) -> tuple[nn.Module, list[tuple[str, nn.Module]], CamfModel]:
    torch.manual_seed(seed)
    model = nn.Sequential(
        nn.Conv2d(3, 4, 3, padding=1),
        nn.ReLU(),
        nn.MaxPool2d(2, 2),
        nn.Conv2d(4, 6, 3),
        nn.ReLU(),
        nn.AdaptiveAvgPool2d(1),
        nn.Flatten(),
        nn.Linear(6, 3),
    )
    model.eval()
    names = ["conv1", "conv1_relu", "pool1", "conv2", "conv2_relu",
             "gap", "flatten", "head"]
    named = list(zip(names, model))
    layers = convert_modules(named)
    camf = CamfModel(
        channels=3, height=16, width=16,
        mean=[0.5, 0.5, 0.5], std=[0.25, 0.25, 0.25],
        layers=layers, labels=["alpha", "beta", "gamma"],
    )
    return model, named, camf


# ---------------------------------------------------------------------------
# vgg16 recipe
# ---------------------------------------------------------------------------

_VGG_BLOCKS = (2, 2, 3, 3, 3)


def _vgg_feature_names() -> list[str]:
    names = []
    for block, convs in enumerate(_VGG_BLOCKS, start=1):
        for conv in range(1, convs + 1):
            names.append(f"block{block}_conv{conv}")
            names.append(f"block{block}_conv{conv}_relu")
        names.append(f"block{block}_pool")
    return names


def build_vgg16(seed: int, weights_mode: str = "random") -> tuple[nn.Module, list[tuple[str, nn.Module]], CamfModel]:
    """torchvision VGG-16 with Keras-style layer names.

    ``weights_mode='pretrained'`` loads the ImageNet checkpoint (requires a
    cached download); ``'random'`` uses the seeded default initialization,
    which still exercises the full architecture and the logit contract.
    """
    from torchvision.models import VGG16_Weights, vgg16

    labels = list(VGG16_Weights.IMAGENET1K_V1.meta["categories"])
    torch.manual_seed(seed)
    if weights_mode == "pretrained":
        try:
            model = vgg16(weights=VGG16_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise RuntimeError(
                f"pretrained VGG-16 checkpoint unavailable ({exc}); "
                f"re-run with --weights random"
            ) from exc
    elif weights_mode == "random":
        model = vgg16(weights=None)
    else:
        raise ValueError(f"unknown weights mode {weights_mode!r}")
    model.eval()

    feature_names = _vgg_feature_names()
    named: list[tuple[str, nn.Module]] = list(zip(feature_names, model.features))
    assert len(named) == len(model.features) == 31

    # model.avgpool is AdaptiveAvgPool2d((7,7)); on the 7x7 feature maps of a
    # 224x224 input it is the identity, so it is omitted from the export.
    named.append(("flatten", nn.Flatten()))
    classifier_names = ["fc1", "fc1_relu", "drop1", "fc2", "fc2_relu", "drop2", "predictions"]
    named += list(zip(classifier_names, model.classifier))

    layers = convert_modules(named)
    camf = CamfModel(
        channels=3, height=224, width=224,
        mean=IMAGENET_MEAN, std=IMAGENET_STD,
        layers=layers, labels=labels,
    )
    return model, named, camf


def build_recipe(name: str, seed: int, weights_mode: str = "random"):
    if name == "tiny":
        return build_tiny(seed)
    if name == "vgg16":
        return build_vgg16(seed, weights_mode)
    raise ValueError(f"unknown recipe {name!r}; available: {', '.join(RECIPES)}")


def torch_reference_logits(model: nn.Module, preprocessed: np.ndarray) -> np.ndarray:
    """Run the source model in float64 on an already preprocessed tensor."""
    model = model.double().eval()
    with torch.no_grad():
        x = torch.from_numpy(np.ascontiguousarray(preprocessed, dtype=np.float64))
        return model(x.unsqueeze(0))[0].numpy()
