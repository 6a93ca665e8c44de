"""VGG-16 export: structure, cross-engine logits, golden demo regression.

These tests export the full 553 MB model and run several engine forward
passes; expect a couple of minutes end to end.
"""

import json
import pathlib
import subprocess

import numpy as np
import pytest

from camf_exporter.export import export_model
from camf_exporter.verify import find_engine, verify_bundle
from camf_exporter.writer import read_camf_raw

GOLDEN_DIR = pathlib.Path(__file__).parent / "golden"
EXPORT_SEED = 1234  # must match scripts/make_golden.py

pytestmark = pytest.mark.skipif(
    find_engine() is None, reason="camkit CLI not installed"
)


@pytest.fixture(scope="module")
def vgg_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("vgg16")
    export_model("vgg16", out, weights_mode="random", seed=EXPORT_SEED)
    return out


class TestStructure:
    def test_manifest_has_block5_conv3_with_512_maps(self, vgg_bundle):
        manifest, _ = read_camf_raw(vgg_bundle / "vgg16.camf")
        by_name = {rec["name"]: rec for rec in manifest["layers"]}
        rec = by_name["block5_conv3"]
        assert rec["kind"] == "conv"
        assert rec["out_channels"] == 512
        assert manifest["layers"][-1]["name"] == "predictions"
        assert manifest["layers"][-1]["out_features"] == 1000
        assert len(manifest["labels"]) == 1000

    def test_engine_inspect_lists_block5_conv3(self, vgg_bundle):
        proc = subprocess.run(
            find_engine() + ["inspect", "--model", str(vgg_bundle / "vgg16.camf")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        line = next(l for l in proc.stdout.splitlines() if l.startswith("block5_conv3"))
        assert "conv" in line and "512x14x14" in line


class TestExportFidelity:
    def test_engine_logits_match_source_within_1e_4(self, vgg_bundle):
        result = verify_bundle(vgg_bundle)
        assert result.status == "pass", result.message
        assert result.max_abs_diff < 1e-4


class TestDemoRegression:
    def _run_headline_cam(self, vgg_bundle, out_dir):
        meta = json.loads((GOLDEN_DIR / "vgg16_demo_meta.json").read_text())
        argv = find_engine() + [
            "cam", "--model", str(vgg_bundle / "vgg16.camf"),
            "--image", str(vgg_bundle / "demo_dog.png"),
            *meta["cam_args"], "--out-dir", str(out_dir),
        ]
        proc = subprocess.run(argv, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        rows = (out_dir / "raw_map.txt").read_text().strip().splitlines()
        return np.array([[float(v) for v in row.split()] for row in rows]), meta

    def test_headline_configuration_matches_golden(self, vgg_bundle, tmp_path):
        got, meta = self._run_headline_cam(vgg_bundle, tmp_path / "out")
        golden = np.load(GOLDEN_DIR / "vgg16_demo_map.npy").astype(np.float64)
        assert got.shape == tuple(meta["map_shape"])
        np.testing.assert_allclose(got, golden, atol=1e-6)

        # The top-decile saliency region is the quantity the qualitative
        # check cares about; require near-perfect overlap with the golden.
        thr_got = np.quantile(got, 0.9)
        thr_gold = np.quantile(golden, 0.9)
        region_got = got >= thr_got
        region_gold = golden >= thr_gold
        iou = (region_got & region_gold).sum() / (region_got | region_gold).sum()
        assert iou > 0.99

    def test_neuron_pair_on_feature_map_3(self, vgg_bundle, tmp_path):
        """Keeping neurons (2,8) and (5,3) of feature map 3 confines the map
        to the bilinear footprints of those two source pixels."""
        out = tmp_path / "neurons"
        argv = find_engine() + [
            "cam", "--model", str(vgg_bundle / "vgg16.camf"),
            "--image", str(vgg_bundle / "demo_dog.png"),
            "--layer", "block5_conv3", "--method", "smooth-grad-cam++",
            "--nsamples", "5", "--std-dev", "0.3",
            "--filters", "3", "--subset", "(2,8);(5,3)",
            "--out-dir", str(out),
        ]
        proc = subprocess.run(argv, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        rows = (out / "raw_map_f3.txt").read_text().strip().splitlines()
        got = np.array([[float(v) for v in row.split()] for row in rows])

        # Destination pixel i samples source coordinate (i+0.5)*14/224 - 0.5;
        # a kept source pixel p only reaches coordinates in (p-1, p+1).
        coords = np.clip((np.arange(224) + 0.5) * (14 / 224) - 0.5, 0.0, 13.0)
        allowed = np.zeros((224, 224), dtype=bool)
        for (pi, pj) in ((2, 8), (5, 3)):
            ri = np.abs(coords - pi) < 1.0
            rj = np.abs(coords - pj) < 1.0
            allowed |= ri[:, None] & rj[None, :]
        assert (got[~allowed] == 0).all()
        assert got.max() > 0  # at least one kept neuron carries saliency

    def test_top_decile_inside_bbox_with_pretrained_weights(self, vgg_bundle, tmp_path):
        bundle = json.loads((vgg_bundle / "bundle.json").read_text())
        if bundle["weights_mode"] != "pretrained":
            pytest.skip(
                "pretrained VGG-16 weights are not downloadable in this environment; "
                "object localization is meaningless for random weights, so the demo "
                "is pinned by the golden-map regression instead"
            )
        got, _ = self._run_headline_cam(vgg_bundle, tmp_path / "out")
        bbox = json.loads((vgg_bundle / "demo_bbox.json").read_text())
        region = got >= np.quantile(got, 0.9)
        ys, xs = np.where(region)
        assert ys.min() >= bbox["top"] and ys.max() <= bbox["bottom"]
        assert xs.min() >= bbox["left"] and xs.max() <= bbox["right"]
