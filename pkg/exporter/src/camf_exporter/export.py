"""Export a recipe to .camf plus a reference bundle for cross-validation.

A bundle directory contains:

    <name>.camf            the exported model
    probe.png              deterministic probe image at the model's input size
    preprocessed.npy       float64 tensor fed to the source model
    reference_logits.json  float64 logits from the source framework
    bundle.json            recipe name, weights mode, seed, file names
    demo_dog.png, demo_bbox.json   (vgg16 only) synthetic demo scene

Reference logits are computed with the source model widened to float64
from the exact float32 values that were written to the payload, so any
disagreement with the engine isolates a conversion or inference bug rather
than precision noise.
"""

from __future__ import annotations

import json
import pathlib

import numpy as np
from PIL import Image

from .recipes import build_recipe, torch_reference_logits
from .writer import CamfModel, write_camf

PROBE_SEED = 20240615


def make_probe_image(height: int, width: int, seed: int = PROBE_SEED) -> np.ndarray:
    """Deterministic full-range RGB test pattern at the exact input size."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    base = np.stack([
        (xx * 255.0 / max(width - 1, 1)),
        (yy * 255.0 / max(height - 1, 1)),
        ((xx + yy) * 255.0 / max(height + width - 2, 1)),
    ], axis=2)
    noise = rng.uniform(-40, 40, size=base.shape)
    return np.clip(base + noise, 0, 255).astype(np.uint8)


def make_demo_dog(height: int, width: int) -> tuple[np.ndarray, dict]:
    """Synthetic dog-like figure on a textured background.

    Returns the image and the inclusive bounding box of the figure.  The
    scene is procedural because the sandbox has no way to fetch a photo;
    the box is what the qualitative regression checks against.
    """
    rng = np.random.default_rng(77)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.stack([
        120 + 60 * yy / height,
        150 + 40 * xx / width,
        180 - 60 * yy / height,
    ], axis=2)
    img += rng.uniform(-12, 12, size=img.shape)

    cy, cx = height * 0.58, width * 0.5
    body_h, body_w = height * 0.16, width * 0.26
    head_r = min(height, width) * 0.11
    hy, hx = cy - body_h * 1.1, cx + body_w * 0.75

    body = ((yy - cy) / body_h) ** 2 + ((xx - cx) / body_w) ** 2 <= 1.0
    head = (yy - hy) ** 2 + (xx - hx) ** 2 <= head_r ** 2
    ear = (yy > hy - head_r * 1.6) & (yy < hy) & (np.abs(xx - (hx - head_r * 0.6)) < head_r * 0.3)
    legs = np.zeros_like(body)
    for off in (-0.6, -0.2, 0.2, 0.6):
        lx = cx + off * body_w
        legs |= (yy > cy) & (yy < cy + body_h * 2.2) & (np.abs(xx - lx) < width * 0.02)
    figure = body | head | ear | legs

    fur = np.stack([
        np.full((height, width), 110.0),
        np.full((height, width), 75.0),
        np.full((height, width), 40.0),
    ], axis=2)
    fur += rng.uniform(-18, 18, size=fur.shape)
    img[figure] = fur[figure]

    rows = np.where(figure.any(axis=1))[0]
    cols = np.where(figure.any(axis=0))[0]
    bbox = {
        "top": int(rows.min()), "bottom": int(rows.max()),
        "left": int(cols.min()), "right": int(cols.max()),
    }
    return np.clip(img, 0, 255).astype(np.uint8), bbox


def preprocess_reference(img: np.ndarray, camf: CamfModel) -> np.ndarray:
    """The preprocessing the format documents, applied on the source side.

    The probe image is generated at the exact input size, so no resampling
    happens and both engines see bit-identical tensors.
    """
    if img.shape[:2] != (camf.height, camf.width):
        raise ValueError(
            f"probe image {img.shape[:2]} must match the input size "
            f"({camf.height}, {camf.width})"
        )
    x = img.astype(np.float64).transpose(2, 0, 1) / 255.0
    mean = np.asarray(camf.mean)[:, None, None]
    std = np.asarray(camf.std)[:, None, None]
    return (x - mean) / std


def export_model(recipe: str, out_dir, weights_mode: str = "random",
                 seed: int = 1234) -> dict:
    """Build, convert, serialize and record the reference bundle."""
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    model, _named, camf = build_recipe(recipe, seed, weights_mode)
    camf_path = out / f"{recipe}.camf"
    write_camf(camf, camf_path)

    probe = make_probe_image(camf.height, camf.width)
    Image.fromarray(probe, mode="RGB").save(out / "probe.png", format="PNG", compress_level=6)

    preprocessed = preprocess_reference(probe, camf)
    np.save(out / "preprocessed.npy", preprocessed)

    logits = torch_reference_logits(model, preprocessed)
    (out / "reference_logits.json").write_text(json.dumps({
        "logits": [repr(float(v)) for v in logits],
        "argmax": int(np.argmax(logits)),
    }, indent=2))

    bundle = {
        "recipe": recipe,
        "weights_mode": weights_mode,
        "seed": seed,
        "camf": camf_path.name,
        "probe": "probe.png",
        "preprocessed": "preprocessed.npy",
        "reference_logits": "reference_logits.json",
        "input": {"channels": camf.channels, "height": camf.height, "width": camf.width},
    }

    if recipe == "vgg16":
        demo, bbox = make_demo_dog(camf.height, camf.width)
        Image.fromarray(demo, mode="RGB").save(out / "demo_dog.png", format="PNG", compress_level=6)
        (out / "demo_bbox.json").write_text(json.dumps(bbox, indent=2))
        bundle["demo_image"] = "demo_dog.png"
        bundle["demo_bbox"] = "demo_bbox.json"

    (out / "bundle.json").write_text(json.dumps(bundle, indent=2))
    return bundle


def load_reference_logits(bundle_dir) -> np.ndarray:
    bundle_dir = pathlib.Path(bundle_dir)
    doc = json.loads((bundle_dir / "reference_logits.json").read_text())
    return np.array([float(v) for v in doc["logits"]])
