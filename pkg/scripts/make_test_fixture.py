#!/usr/bin/env python3
"""Generate the bundled tiny model in tests/data.

Writes tinynet.camf plus a probe input and expected logits.  The logits are
computed here with plain scalar loops, independent of the package's forward
primitives, so the bundled numbers act as an oracle for the engine.
"""

import json
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from camkit.model_format import InputSpec, LayerRecord, save_model  # noqa: E402

OUT_DIR = pathlib.Path(__file__).resolve().parents[1] / "tests" / "data"


def conv_loop(x, w, b, stride, padding):
    k, c, fh, fw = w.shape
    _, h, wd = x.shape
    oh = (h - fh + 2 * padding) // stride + 1
    ow = (wd - fw + 2 * padding) // stride + 1
    out = np.zeros((k, oh, ow))
    for ko in range(k):
        for oi in range(oh):
            for oj in range(ow):
                acc = 0.0
                for ci in range(c):
                    for di in range(fh):
                        for dj in range(fw):
                            ii = oi * stride + di - padding
                            jj = oj * stride + dj - padding
                            if 0 <= ii < h and 0 <= jj < wd:
                                acc += x[ci, ii, jj] * w[ko, ci, di, dj]
                out[ko, oi, oj] = acc + b[ko]
    return out


def maxpool_loop(x, window, stride):
    c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.zeros((c, oh, ow))
    for ci in range(c):
        for oi in range(oh):
            for oj in range(ow):
                out[ci, oi, oj] = x[ci, oi * stride:oi * stride + window,
                                    oj * stride:oj * stride + window].max()
    return out


def main():
    rng = np.random.default_rng(7070)
    input_spec = InputSpec(1, 10, 10, mean=(0.5,), std=(0.25,))
    conv_w = rng.uniform(-0.5, 0.5, size=(2, 1, 3, 3)).astype(np.float32).astype(np.float64)
    conv_b = rng.uniform(0.1, 0.4, size=2).astype(np.float32).astype(np.float64)
    lin_w = rng.uniform(-0.5, 0.5, size=(2, 32)).astype(np.float32).astype(np.float64)
    lin_b = rng.uniform(-0.1, 0.1, size=2).astype(np.float32).astype(np.float64)

    layers = [
        LayerRecord("conv1", "conv", {"out_channels": 2, "in_channels": 1,
                                      "kernel": [3, 3], "stride": [1, 1], "padding": 0}),
        LayerRecord("relu1", "relu"),
        LayerRecord("pool1", "maxpool", {"window": 2, "stride": 2}),
        LayerRecord("flat", "flatten"),
        LayerRecord("head", "linear", {"out_features": 2, "in_features": 32}),
    ]
    tensors = {"conv1": (conv_w, conv_b), "head": (lin_w, lin_b)}

    OUT_DIR.mkdir(parents=True, exist_ok=True)
    save_model(OUT_DIR / "tinynet.camf", input_spec, layers, tensors, ["neg", "pos"])

    probe = rng.uniform(-1.0, 1.0, size=(1, 10, 10))

    # Oracle forward pass, scalar loops only.
    act = conv_loop(probe, conv_w, conv_b, stride=1, padding=0)
    act = np.maximum(act, 0.0)
    act = maxpool_loop(act, 2, 2)
    flat = act.reshape(-1)
    logits = np.array([float((lin_w[m] * flat).sum() + lin_b[m]) for m in range(2)])

    np.save(OUT_DIR / "tinynet_probe.npy", probe)
    with open(OUT_DIR / "tinynet_expected.json", "w") as fh:
        json.dump({"logits": logits.tolist()}, fh, indent=2)
    print("wrote", OUT_DIR / "tinynet.camf", "logits", logits)


if __name__ == "__main__":
    main()
