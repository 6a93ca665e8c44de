"""The .camf on-disk model format: loader, writer, validator, summary.

Container layout (all integers little-endian):

    bytes 0..3    magic ``CAMF``
    bytes 4..7    u32 format version, currently 1
    bytes 8..15   u64 manifest length in bytes
    manifest      UTF-8 JSON document (see below)
    payload       raw 32-bit little-endian IEEE floats

The manifest declares the input spec (channels, height, width, per-channel
mean and std applied after scaling samples to [0,1]), an ordered list of
layer records and the class-label list.  Weight/bias locations are byte
offsets into the payload; tensors are stored row-major, conv weights as
[out_ch, in_ch, kernel_h, kernel_w] and linear weights as [out, in].
Weights are widened to float64 on load.  A full description lives in
docs/camf-format.md.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ModelFormatError
from .tensor_ops import ConvSpec, conv_output_shape

MAGIC = b"CAMF"
FORMAT_VERSION = 1
LAYER_KINDS = ("conv", "relu", "maxpool", "flatten", "linear", "gap")

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "LAYER_KINDS",
    "InputSpec",
    "LayerRecord",
    "ModelManifest",
    "Model",
    "load_model",
    "save_model",
    "summarize",
]


@dataclass(frozen=True)
class InputSpec:
    """Model input geometry and preprocessing constants."""

    channels: int
    height: int
    width: int
    mean: tuple[float, ...]
    std: tuple[float, ...]

    def validate(self) -> None:
        if self.channels < 1 or self.height < 1 or self.width < 1:
            raise ModelFormatError(
                f"input spec extents must be positive, got "
                f"{self.channels}x{self.height}x{self.width}"
            )
        if len(self.mean) != self.channels or len(self.std) != self.channels:
            raise ModelFormatError(
                f"input spec mean/std must have {self.channels} entries, got "
                f"{len(self.mean)}/{len(self.std)}"
            )
        if any(s == 0 for s in self.std):
            raise ModelFormatError("input spec std contains a zero entry")


@dataclass(frozen=True)
class LayerRecord:
    """One manifest layer entry; ``params`` holds the kind-specific fields."""

    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def conv_spec(self) -> ConvSpec:
        return ConvSpec(
            kernel_h=self.params["kernel"][0],
            kernel_w=self.params["kernel"][1],
            stride_h=self.params["stride"][0],
            stride_w=self.params["stride"][1],
            padding=self.params["padding"],
            in_channels=self.params["in_channels"],
            out_channels=self.params["out_channels"],
        )


@dataclass
class ModelManifest:
    format_version: int
    input_spec: InputSpec
    layers: list[LayerRecord]
    labels: list[str]

    def layer_names(self) -> list[str]:
        return [rec.name for rec in self.layers]


@dataclass
class Model:
    """A validated manifest plus materialized float64 weight tensors.

    ``weights[name]`` maps a conv or linear layer name to a ``(W, b)`` pair.
    Instances are immutable by convention and safe to share across threads.
    """

    manifest: ModelManifest
    weights: dict[str, tuple[np.ndarray, np.ndarray]]
    output_shapes: dict[str, tuple[int, ...]]

    @property
    def input_spec(self) -> InputSpec:
        return self.manifest.input_spec

    @property
    def layers(self) -> list[LayerRecord]:
        return self.manifest.layers

    @property
    def labels(self) -> list[str]:
        return self.manifest.labels

    def layer_index(self, name: str) -> int:
        for i, rec in enumerate(self.layers):
            if rec.name == name:
                return i
        raise ValueError(
            f"unknown layer {name!r}; valid names: {', '.join(self.manifest.layer_names())}"
        )

    def num_classes(self) -> int:
        last = self.layers[-1]
        shape = self.output_shapes[last.name]
        return shape[0]


# ---------------------------------------------------------------------------
# Manifest parsing and validation
# ---------------------------------------------------------------------------

_WEIGHTED_KINDS = {"conv", "linear"}

_REQUIRED_PARAMS = {
    "conv": ("out_channels", "in_channels", "kernel", "stride", "padding",
             "weight_offset", "bias_offset"),
    "linear": ("out_features", "in_features", "weight_offset", "bias_offset"),
    "maxpool": ("window", "stride"),
    "relu": (),
    "flatten": (),
    "gap": (),
}


def _parse_manifest(raw: bytes) -> ModelManifest:
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"manifest is not valid UTF-8 JSON: {exc}") from exc

    try:
        version = doc["format_version"]
        ins = doc["input"]
        spec = InputSpec(
            channels=int(ins["channels"]),
            height=int(ins["height"]),
            width=int(ins["width"]),
            mean=tuple(float(v) for v in ins["mean"]),
            std=tuple(float(v) for v in ins["std"]),
        )
        layers = [
            LayerRecord(
                name=str(rec["name"]),
                kind=str(rec["kind"]),
                params={k: v for k, v in rec.items() if k not in ("name", "kind")},
            )
            for rec in doc["layers"]
        ]
        labels = [str(v) for v in doc.get("labels", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"manifest field missing or malformed: {exc}") from exc

    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"manifest format_version {version} does not match container version "
            f"{FORMAT_VERSION}"
        )
    spec.validate()
    if not layers:
        raise ModelFormatError("manifest declares no layers")

    seen = set()
    for rec in layers:
        if rec.kind not in LAYER_KINDS:
            raise ModelFormatError(
                f"layer {rec.name!r} has unsupported kind {rec.kind!r}; "
                f"supported kinds: {', '.join(LAYER_KINDS)}"
            )
        if rec.name in seen:
            raise ModelFormatError(f"duplicate layer name {rec.name!r}")
        seen.add(rec.name)
        missing = [p for p in _REQUIRED_PARAMS[rec.kind] if p not in rec.params]
        if missing:
            raise ModelFormatError(
                f"layer {rec.name!r} ({rec.kind}) is missing parameters: {missing}"
            )
    return ModelManifest(version, spec, layers, labels)


def propagate_shapes(manifest: ModelManifest) -> dict[str, tuple[int, ...]]:
    """Symbolically chain layer shapes; raises on any incompatibility."""
    spec = manifest.input_spec
    shape: tuple[int, ...] = (spec.channels, spec.height, spec.width)
    prev_name = "<input>"
    shapes: dict[str, tuple[int, ...]] = {}
    for rec in manifest.layers:
        if rec.kind == "conv":
            if len(shape) != 3:
                raise ModelFormatError(
                    f"shape chain break between {prev_name!r} and {rec.name!r}: "
                    f"conv needs a C,H,W input, got {shape}"
                )
            cspec = rec.conv_spec()
            if shape[0] != cspec.in_channels:
                raise ModelFormatError(
                    f"shape chain break between {prev_name!r} and {rec.name!r}: "
                    f"{prev_name!r} outputs {shape[0]} channels but {rec.name!r} "
                    f"expects {cspec.in_channels}"
                )
            try:
                out_h, out_w = conv_output_shape(shape[1], shape[2], cspec)
            except ValueError as exc:
                raise ModelFormatError(
                    f"shape chain break at {rec.name!r}: {exc}"
                ) from exc
            shape = (cspec.out_channels, out_h, out_w)
        elif rec.kind == "relu":
            pass
        elif rec.kind == "maxpool":
            if len(shape) != 3:
                raise ModelFormatError(
                    f"shape chain break between {prev_name!r} and {rec.name!r}: "
                    f"maxpool needs a C,H,W input, got {shape}"
                )
            window, stride = rec.params["window"], rec.params["stride"]
            if window > shape[1] or window > shape[2]:
                raise ModelFormatError(
                    f"shape chain break at {rec.name!r}: pool window {window} larger "
                    f"than input extents {shape[1]}x{shape[2]}"
                )
            shape = (
                shape[0],
                (shape[1] - window) // stride + 1,
                (shape[2] - window) // stride + 1,
            )
        elif rec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif rec.kind == "linear":
            if len(shape) != 1:
                raise ModelFormatError(
                    f"shape chain break between {prev_name!r} and {rec.name!r}: "
                    f"linear needs a flat input, got {shape} (missing flatten?)"
                )
            if shape[0] != rec.params["in_features"]:
                raise ModelFormatError(
                    f"shape chain break between {prev_name!r} and {rec.name!r}: "
                    f"{prev_name!r} outputs {shape[0]} features but {rec.name!r} "
                    f"expects {rec.params['in_features']}"
                )
            shape = (rec.params["out_features"],)
        elif rec.kind == "gap":
            if len(shape) != 3:
                raise ModelFormatError(
                    f"shape chain break between {prev_name!r} and {rec.name!r}: "
                    f"gap needs a C,H,W input, got {shape}"
                )
            shape = (shape[0],)
        shapes[rec.name] = shape
        prev_name = rec.name
    last = manifest.layers[-1]
    if len(shapes[last.name]) != 1:
        raise ModelFormatError(
            f"final layer {last.name!r} must produce a flat class-score vector, "
            f"got shape {shapes[last.name]}"
        )
    if manifest.labels and len(manifest.labels) != shapes[last.name][0]:
        raise ModelFormatError(
            f"{len(manifest.labels)} class labels declared but final layer "
            f"{last.name!r} outputs {shapes[last.name][0]} scores"
        )
    return shapes


def _tensor_shapes(rec: LayerRecord) -> tuple[tuple[int, ...], tuple[int, ...]]:
    p = rec.params
    if rec.kind == "conv":
        w_shape = (p["out_channels"], p["in_channels"], p["kernel"][0], p["kernel"][1])
        return w_shape, (p["out_channels"],)
    w_shape = (p["out_features"], p["in_features"])
    return w_shape, (p["out_features"],)


def _payload_ranges(manifest: ModelManifest, payload_size: int) -> list[tuple[int, int, str]]:
    """Byte ranges (start, end, owner) for every declared tensor, validated."""
    ranges = []
    for rec in manifest.layers:
        if rec.kind not in _WEIGHTED_KINDS:
            continue
        w_shape, b_shape = _tensor_shapes(rec)
        for which, offset, shape in (
            ("weight", rec.params["weight_offset"], w_shape),
            ("bias", rec.params["bias_offset"], b_shape),
        ):
            nbytes = int(np.prod(shape)) * 4
            if offset < 0 or offset + nbytes > payload_size:
                raise ModelFormatError(
                    f"truncated payload: layer {rec.name!r} {which} needs bytes "
                    f"[{offset}, {offset + nbytes}) but payload has {payload_size} bytes"
                )
            ranges.append((offset, offset + nbytes, f"{rec.name}.{which}"))
    ranges.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(ranges, ranges[1:]):
        if s1 < e0:
            raise ModelFormatError(
                f"payload ranges overlap: {n0} [{s0}, {e0}) and {n1} [{s1}, {e1})"
            )
    return ranges


def _materialize_weights(
    manifest: ModelManifest, payload: bytes
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    weights = {}
    for rec in manifest.layers:
        if rec.kind not in _WEIGHTED_KINDS:
            continue
        w_shape, b_shape = _tensor_shapes(rec)
        pair = []
        for offset, shape in (
            (rec.params["weight_offset"], w_shape),
            (rec.params["bias_offset"], b_shape),
        ):
            count = int(np.prod(shape))
            flat = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
            if not np.isfinite(flat).all():
                raise ModelFormatError(
                    f"layer {rec.name!r} contains non-finite weight values"
                )
            pair.append(flat.astype(np.float64).reshape(shape))
        weights[rec.name] = (pair[0], pair[1])
    return weights


def load_model(path) -> Model:
    """Load and fully validate a .camf file.

    Loading is bit-deterministic: the same file always yields bitwise
    identical weight tensors.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise ModelFormatError(
            f"bad magic in {path}: expected {MAGIC!r}, got {blob[:4]!r}"
        )
    version, manifest_len = struct.unpack_from("<IQ", blob, 4)
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format version {version} in {path}; this reader "
            f"understands version {FORMAT_VERSION}"
        )
    if 16 + manifest_len > len(blob):
        raise ModelFormatError(
            f"truncated payload: header declares a {manifest_len}-byte manifest "
            f"but only {len(blob) - 16} bytes follow"
        )
    manifest = _parse_manifest(blob[16:16 + manifest_len])
    payload = blob[16 + manifest_len:]
    _payload_ranges(manifest, len(payload))
    shapes = propagate_shapes(manifest)
    weights = _materialize_weights(manifest, payload)
    return Model(manifest=manifest, weights=weights, output_shapes=shapes)


def save_model(
    path,
    input_spec: InputSpec,
    layers: list[LayerRecord],
    tensors: dict[str, tuple[np.ndarray, np.ndarray]],
    labels: list[str],
) -> None:
    """Write a .camf file; offsets are assigned in layer order.

    ``layers`` may omit weight/bias offsets for conv and linear records;
    they are filled in here.  Weights are stored as little-endian float32.
    """
    chunks: list[bytes] = []
    offset = 0
    out_layers = []
    for rec in layers:
        params = dict(rec.params)
        if rec.kind in _WEIGHTED_KINDS:
            w, b = tensors[rec.name]
            params["weight_offset"] = offset
            wb = np.ascontiguousarray(w, dtype="<f4").tobytes()
            chunks.append(wb)
            offset += len(wb)
            params["bias_offset"] = offset
            bb = np.ascontiguousarray(b, dtype="<f4").tobytes()
            chunks.append(bb)
            offset += len(bb)
        out_layers.append({"name": rec.name, "kind": rec.kind, **params})

    doc = {
        "format_version": FORMAT_VERSION,
        "input": {
            "channels": input_spec.channels,
            "height": input_spec.height,
            "width": input_spec.width,
            "mean": list(input_spec.mean),
            "std": list(input_spec.std),
        },
        "layers": out_layers,
        "labels": list(labels),
    }
    manifest_bytes = json.dumps(doc, indent=2).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(manifest_bytes)))
        fh.write(manifest_bytes)
        for chunk in chunks:
            fh.write(chunk)


def _param_count(rec: LayerRecord) -> int:
    if rec.kind not in _WEIGHTED_KINDS:
        return 0
    w_shape, b_shape = _tensor_shapes(rec)
    return int(np.prod(w_shape)) + int(np.prod(b_shape))


def summarize(model: Model) -> str:
    """One line per layer: name, kind, output shape, parameter count."""
    lines = []
    for rec in model.layers:
        shape = model.output_shapes[rec.name]
        shape_str = "x".join(str(d) for d in shape)
        lines.append(
            f"{rec.name:<24} {rec.kind:<8} {shape_str:<16} params={_param_count(rec)}"
        )
    return "\n".join(lines)
