"""Command line surface: saliency runs, model inspection, gradient checks.

Exit codes: 0 success, 2 usage error, 3 model or file error, 4 numeric
failure (non-finite values or a gradcheck threshold breach).

A ``cam`` run writes, per selected feature map or once for the combined
map: the heatmap PNG, the overlay PNG, the raw map as a text grid (one row
per line, space-separated decimals) and a ``run_manifest.txt`` recording
every effective parameter as ``key: value`` lines.  Outputs contain no
timestamps, so identical flags and seed reproduce identical bytes.
"""

from __future__ import annotations

import argparse
import re
import sys

import numpy as np

from .autodiff import finite_diff_exp_maps, finite_diff_grad, forward_to, grad_score_wrt_activation, higher_order_maps
from .engine import (
    DEFAULT_N_SAMPLES,
    DEFAULT_STD_DEV,
    METHODS,
    CamRequest,
    compute_saliency,
    per_filter_maps,
)
from .exceptions import CamKitError, ModelFormatError, NumericsError
from .imaging import decode_png, encode_png, overlay, preprocess, render_heatmap
from .model_format import load_model, summarize

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MODEL = 3
EXIT_NUMERIC = 4

GRADCHECK_FIRST_ORDER_THRESHOLD = 1e-4
GRADCHECK_HIGHER_ORDER_THRESHOLD = 1e-2

_SUBSET_RE = re.compile(r"^\((\d+)\s*,\s*(\d+)\)$")


def parse_subset(text: str) -> tuple[tuple[int, int], ...]:
    """Parse the shell-safe subset syntax ``"(i,j);(i,j)"``."""
    coords = []
    for part in text.split(";"):
        part = part.strip()
        m = _SUBSET_RE.match(part)
        if not m:
            raise ValueError(
                f"cannot parse subset entry {part!r}; expected \"(i,j);(i,j)\" syntax"
            )
        coords.append((int(m.group(1)), int(m.group(2))))
    return tuple(coords)


def parse_filters(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ValueError(f"cannot parse filter list {text!r}: {exc}") from exc


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"step must be positive, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camkit",
        description="Class-discriminative saliency maps for .camf CNN models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    cam = sub.add_parser("cam", help="compute a saliency map and write artifacts")
    cam.add_argument("--model", required=True, help=".camf model file")
    cam.add_argument("--image", required=True, help="input PNG (8-bit RGB or grayscale)")
    cam.add_argument("--layer", required=True, help="layer to visualize")
    cam.add_argument("--method", choices=METHODS, default="smooth-grad-cam++")
    cam.add_argument("--class", dest="class_c", type=int, default=None,
                     help="class index (default: argmax on the clean input)")
    cam.add_argument("--nsamples", type=int, default=DEFAULT_N_SAMPLES,
                     help=f"noised samples, 0 uses the clean input (default {DEFAULT_N_SAMPLES})")
    cam.add_argument("--std-dev", dest="std_dev", type=float, default=DEFAULT_STD_DEV,
                     help=f"noise level as a fraction of the input range (default {DEFAULT_STD_DEV})")
    cam.add_argument("--filters", type=parse_filters, default=None,
                     help="comma-separated feature map indices; one map is emitted per index")
    cam.add_argument("--region", action="store_true",
                     help="treat the two subset coordinates as inclusive corner bounds")
    cam.add_argument("--subset", type=parse_subset, default=None,
                     help='neuron coordinates, e.g. "(0,10);(12,12)"')
    cam.add_argument("--seed", type=int, default=0)
    cam.add_argument("--out-dir", dest="out_dir", required=True)

    ins = sub.add_parser("inspect", help="print the model summary")
    ins.add_argument("--model", required=True)
    ins.add_argument("--image", default=None,
                     help="also run inference and print per-class logits")

    gc = sub.add_parser("gradcheck", help="compare reverse-mode and finite-difference derivatives")
    gc.add_argument("--model", required=True)
    gc.add_argument("--image", required=True)
    gc.add_argument("--layer", required=True)
    gc.add_argument("--class", dest="class_c", type=int, default=None)
    gc.add_argument("--step", type=_positive_float, default=1e-3)
    return parser


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def format_manifest(entries: list[tuple[str, object]]) -> str:
    return "\n".join(f"{key}: {_fmt(value)}" for key, value in entries) + "\n"


def parse_manifest(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(":")
        out[key.strip()] = value.strip()
    return out


def manifest_to_argv(manifest: dict[str, str], out_dir: str) -> list[str]:
    """Rebuild a ``cam`` invocation from a parsed run manifest."""
    argv = [
        "cam",
        "--model", manifest["model"],
        "--image", manifest["image"],
        "--layer", manifest["layer"],
        "--method", manifest["method"],
        "--class", manifest["class"],
        "--nsamples", manifest["nsamples"],
        "--std-dev", manifest["std_dev"],
        "--seed", manifest["seed"],
        "--out-dir", out_dir,
    ]
    if manifest["filters"] != "all":
        argv += ["--filters", manifest["filters"]]
    if manifest["subset"] != "none":
        argv += ["--subset", manifest["subset"]]
    if manifest["region"] == "true":
        argv.append("--region")
    return argv


def _subset_str(subset) -> str:
    if subset is None:
        return "none"
    return ";".join(f"({i},{j})" for i, j in subset)


def _write_map_files(out_dir, suffix, smap, base_img):
    heat = render_heatmap(smap.values)
    blended = overlay(base_img, heat, 0.5)
    encode_png(heat, out_dir / f"heatmap{suffix}.png")
    encode_png(blended, out_dir / f"overlay{suffix}.png")
    lines = [
        " ".join(repr(float(v)) for v in row) for row in smap.values
    ]
    (out_dir / f"raw_map{suffix}.txt").write_text("\n".join(lines) + "\n")
    return [f"heatmap{suffix}.png", f"overlay{suffix}.png", f"raw_map{suffix}.txt"]


def _cmd_cam(args) -> int:
    from pathlib import Path

    model = load_model(args.model)
    image = decode_png(args.image)
    tensor = preprocess(image, model.input_spec)

    req = CamRequest(
        layer_name=args.layer,
        method=args.method,
        class_c=args.class_c,
        n_samples=args.nsamples,
        std_dev=args.std_dev,
        filters=args.filters,
        region=args.region,
        subset=args.subset,
        seed=args.seed,
    )
    req.validate_for(model)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    # The overlay needs the base image at model resolution.
    spec = model.input_spec
    base = np.stack([
        np.rint(_resize_u8_plane(image[:, :, c], spec.height, spec.width))
        for c in range(3)
    ], axis=2).astype(np.uint8)

    if args.filters is not None:
        maps = per_filter_maps(model, tensor, req)
        written = []
        zero_flags = []
        for smap in maps:
            k = smap.metadata.filters[0]
            written += _write_map_files(out_dir, f"_f{k}", smap, base)
            zero_flags.append(f"f{k}={_fmt(smap.metadata.zero_map)}")
        lead = maps[0]
        zero_value = " ".join(zero_flags)
    else:
        lead = compute_saliency(model, tensor, req)
        written = _write_map_files(out_dir, "", lead, base)
        zero_value = _fmt(lead.metadata.zero_map)

    trace = forward_to(model, tensor, model.layers[-1].name)
    predicted = int(np.argmax(trace.scores))
    labels = model.labels
    entries = [
        ("model", args.model),
        ("image", args.image),
        ("layer", args.layer),
        ("method", args.method),
        ("class", lead.metadata.class_index),
        ("class_label", lead.metadata.class_label),
        ("score", lead.metadata.score),
        ("nsamples", args.nsamples),
        ("std_dev", float(args.std_dev)),
        ("filters", "all" if args.filters is None else ",".join(str(k) for k in args.filters)),
        ("region", args.region),
        ("subset", _subset_str(args.subset)),
        ("seed", args.seed),
        ("predicted_class", predicted),
        ("predicted_label", labels[predicted] if predicted < len(labels) else ""),
        ("predicted_score", float(trace.scores[predicted])),
        ("zero_map", zero_value),
        ("outputs", ";".join(written)),
    ]
    (out_dir / "run_manifest.txt").write_text(format_manifest(entries))
    print(f"wrote {len(written) + 1} files to {out_dir}")
    return EXIT_OK


def _resize_u8_plane(plane: np.ndarray, h: int, w: int) -> np.ndarray:
    from .tensor_ops import bilinear_resize

    return bilinear_resize(plane.astype(np.float64), h, w)


def _cmd_inspect(args) -> int:
    model = load_model(args.model)
    print(summarize(model))
    if args.image is not None:
        image = decode_png(args.image)
        tensor = preprocess(image, model.input_spec)
        trace = forward_to(model, tensor, model.layers[-1].name)
        labels = model.labels
        print()
        print(f"input: {args.image}")
        print("logits:")
        for i, value in enumerate(trace.scores):
            label = labels[i] if i < len(labels) else ""
            print(f"  {i} {float(value)!r} {label}")
        top = int(np.argmax(trace.scores))
        top_label = labels[top] if top < len(labels) else ""
        print(f"predicted: {top} {top_label}")
    return EXIT_OK


def _norm_rel_err(got: np.ndarray, ref: np.ndarray) -> float:
    scale = float(np.abs(ref).max())
    if scale == 0.0:
        return float(np.abs(got).max())
    return float(np.abs(got - ref).max() / scale)


def _cmd_gradcheck(args) -> int:
    model = load_model(args.model)
    image = decode_png(args.image)
    tensor = preprocess(image, model.input_spec)

    trace = forward_to(model, tensor, args.layer)
    class_c = args.class_c if args.class_c is not None else int(np.argmax(trace.scores))
    shift = float(trace.scores.max())

    g = grad_score_wrt_activation(trace, model, class_c)
    g_fd = finite_diff_grad(model, tensor, args.layer, class_c, h=args.step)
    err_g = _norm_rel_err(g, g_fd)

    maps = higher_order_maps(g, float(trace.scores[class_c]), shift)
    d2_fd, d3_fd = finite_diff_exp_maps(
        model, tensor, args.layer, class_c, h=args.step, shift=shift
    )
    err_d2 = _norm_rel_err(maps.d2, d2_fd)
    err_d3 = _norm_rel_err(maps.d3, d3_fd)

    ok = (
        err_g < GRADCHECK_FIRST_ORDER_THRESHOLD
        and err_d2 < GRADCHECK_HIGHER_ORDER_THRESHOLD
        and err_d3 < GRADCHECK_HIGHER_ORDER_THRESHOLD
    )
    print(f"layer: {args.layer}")
    print(f"class: {class_c}")
    print(f"step: {args.step!r}")
    print(f"max_rel_err_grad: {err_g:.3e} (threshold {GRADCHECK_FIRST_ORDER_THRESHOLD:g})")
    print(f"max_rel_err_d2: {err_d2:.3e} (threshold {GRADCHECK_HIGHER_ORDER_THRESHOLD:g})")
    print(f"max_rel_err_d3: {err_d3:.3e} (threshold {GRADCHECK_HIGHER_ORDER_THRESHOLD:g})")
    print(f"result: {'pass' if ok else 'fail'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    try:
        if args.command == "cam":
            return _cmd_cam(args)
        if args.command == "inspect":
            return _cmd_inspect(args)
        return _cmd_gradcheck(args)
    except (ModelFormatError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except NumericsError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, CamKitError) as exc:
        # Bad flag values, unknown layers, malformed images and the like.
        message = str(exc)
        print(f"error: {message}", file=sys.stderr)
        if "decode" in message or "bit depth" in message or "PNG mode" in message:
            return EXIT_MODEL
        return EXIT_USAGE


def run() -> None:
    raise SystemExit(main())
