#!/usr/bin/env python3
"""Regenerate the golden saliency map for the VGG-16 demo regression.

Exports VGG-16 with the pinned seed, runs the engine CLI on the bundled
demo scene with the headline configuration (smooth-grad-cam++, 5 samples,
sigma 0.3), and freezes the resulting raw map under tests/golden/.

Run from the exporter directory:  python3 scripts/make_golden.py
"""

import json
import pathlib
import shutil
import subprocess
import sys
import tempfile

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from camf_exporter.export import export_model  # noqa: E402

GOLDEN_DIR = pathlib.Path(__file__).resolve().parents[1] / "tests" / "golden"
EXPORT_SEED = 1234
CAM_ARGS = ["--layer", "block5_conv3", "--method", "smooth-grad-cam++",
            "--nsamples", "5", "--std-dev", "0.3", "--seed", "0"]


def main():
    engine = shutil.which("camkit")
    if engine is None:
        raise SystemExit("camkit CLI not found; install the engine package first")

    with tempfile.TemporaryDirectory() as tmp:
        bundle_dir = pathlib.Path(tmp) / "bundle"
        out_dir = pathlib.Path(tmp) / "out"
        export_model("vgg16", bundle_dir, weights_mode="random", seed=EXPORT_SEED)
        subprocess.run(
            [engine, "cam", "--model", str(bundle_dir / "vgg16.camf"),
             "--image", str(bundle_dir / "demo_dog.png"),
             *CAM_ARGS, "--out-dir", str(out_dir)],
            check=True,
        )
        rows = (out_dir / "raw_map.txt").read_text().strip().splitlines()
        values = np.array([[float(v) for v in row.split()] for row in rows])
        manifest = (out_dir / "run_manifest.txt").read_text()

    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    np.save(GOLDEN_DIR / "vgg16_demo_map.npy", values.astype(np.float32))
    meta = {
        "export_seed": EXPORT_SEED,
        "cam_args": CAM_ARGS,
        "weights_mode": "random",
        "map_shape": list(values.shape),
        "map_max": float(values.max()),
        "top10_threshold": float(np.quantile(values, 0.9)),
    }
    for line in manifest.splitlines():
        if line.startswith(("class:", "class_label:", "predicted_class:")):
            key, _, value = line.partition(":")
            meta[key.strip()] = value.strip()
    (GOLDEN_DIR / "vgg16_demo_meta.json").write_text(json.dumps(meta, indent=2))
    print("golden written:", GOLDEN_DIR / "vgg16_demo_map.npy")
    print(json.dumps(meta, indent=2))


if __name__ == "__main__":
    main()
