"""Standalone .camf serializer.

Implements the container layout documented in the engine repository's
docs/camf-format.md: ``CAMF`` magic, u32 LE version, u64 LE manifest
length, UTF-8 JSON manifest, then a payload of little-endian float32
values.  This module deliberately does not import the engine package; the
byte format is the only contract between the two sides.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"CAMF"
FORMAT_VERSION = 1


@dataclass
class CamfLayer:
    """One manifest layer record plus its weight tensors, if any."""

    name: str
    kind: str
    params: dict = field(default_factory=dict)
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None


@dataclass
class CamfModel:
    channels: int
    height: int
    width: int
    mean: list[float]
    std: list[float]
    layers: list[CamfLayer]
    labels: list[str]


def write_camf(model: CamfModel, path) -> None:
    """Serialize; weight/bias byte offsets are assigned in layer order."""
    payload = bytearray()
    records = []
    for layer in model.layers:
        rec = {"name": layer.name, "kind": layer.kind, **layer.params}
        if layer.kind in ("conv", "linear"):
            if layer.weight is None or layer.bias is None:
                raise ValueError(f"layer {layer.name!r} ({layer.kind}) needs weight and bias")
            rec["weight_offset"] = len(payload)
            payload += np.ascontiguousarray(layer.weight, dtype="<f4").tobytes()
            rec["bias_offset"] = len(payload)
            payload += np.ascontiguousarray(layer.bias, dtype="<f4").tobytes()
        records.append(rec)

    manifest = {
        "format_version": FORMAT_VERSION,
        "input": {
            "channels": model.channels,
            "height": model.height,
            "width": model.width,
            "mean": list(model.mean),
            "std": list(model.std),
        },
        "layers": records,
        "labels": list(model.labels),
    }
    blob = json.dumps(manifest, indent=2).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def read_camf_raw(path) -> tuple[dict, bytes]:
    """Parse a .camf file back into (manifest, payload).

    Used by tests and the lossless re-import check; intentionally a second,
    independent reading of the format document.
    """
    blob = open(path, "rb").read()
    if blob[:4] != MAGIC:
        raise ValueError(f"not a .camf file: bad magic {blob[:4]!r}")
    version, manifest_len = struct.unpack_from("<IQ", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported .camf version {version}")
    manifest = json.loads(blob[16:16 + manifest_len].decode("utf-8"))
    return manifest, blob[16 + manifest_len:]


def tensor_from_payload(payload: bytes, offset: int, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape))
    return np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
