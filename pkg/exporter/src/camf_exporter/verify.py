"""Cross-engine verification: source-framework logits vs engine logits.

The engine is consumed strictly through its command line (``camkit inspect
--image`` prints per-class logits), never imported, so a pass here means
the byte format, the loader, the preprocessing contract and the forward
pass all agree end to end.
"""

from __future__ import annotations

import json
import pathlib
import shutil
import subprocess
from dataclasses import dataclass

import numpy as np

from .export import load_reference_logits

LOGIT_TOLERANCE = 1e-4

PREPROCESSING_HINT = (
    "hint: if the model loads but logits diverge, check the manifest's "
    "input mean/std against the source framework's preprocessing"
)


def find_engine() -> list[str] | None:
    """Locate the saliency engine CLI; None when not installed."""
    exe = shutil.which("camkit")
    if exe:
        return [exe]
    return None


def engine_logits(engine_cmd: list[str], camf_path, image_path) -> np.ndarray:
    """Run ``inspect --image`` and parse the printed logit lines."""
    proc = subprocess.run(
        engine_cmd + ["inspect", "--model", str(camf_path), "--image", str(image_path)],
        capture_output=True, text=True,
    )
    if proc.returncode != 0:
        raise RuntimeError(
            f"engine inspect failed with exit code {proc.returncode}: "
            f"{proc.stderr.strip()}"
        )
    lines = proc.stdout.splitlines()
    try:
        start = next(i for i, l in enumerate(lines) if l.strip() == "logits:")
    except StopIteration:
        raise RuntimeError("engine output contains no logits section") from None
    values = {}
    for line in lines[start + 1:]:
        if not line.startswith("  "):
            break
        parts = line.split()
        values[int(parts[0])] = float(parts[1])
    return np.array([values[i] for i in range(len(values))])


@dataclass
class VerifyResult:
    status: str  # "pass", "fail" or "skip"
    max_abs_diff: float | None
    message: str

    @property
    def exit_code(self) -> int:
        return 1 if self.status == "fail" else 0


def verify_bundle(bundle_dir, tolerance: float = LOGIT_TOLERANCE) -> VerifyResult:
    bundle_dir = pathlib.Path(bundle_dir)
    bundle = json.loads((bundle_dir / "bundle.json").read_text())
    camf_path = bundle_dir / bundle["camf"]
    probe_path = bundle_dir / bundle["probe"]

    engine = find_engine()
    if engine is None:
        return VerifyResult(
            "skip", None,
            "engine not found on PATH (install the camkit package); verification skipped",
        )

    reference = load_reference_logits(bundle_dir)
    try:
        got = engine_logits(engine, camf_path, probe_path)
    except RuntimeError as exc:
        return VerifyResult("fail", None, f"engine run failed: {exc}\n{PREPROCESSING_HINT}")

    if got.shape != reference.shape:
        return VerifyResult(
            "fail", None,
            f"logit count mismatch: engine {got.shape[0]} vs reference "
            f"{reference.shape[0]}\n{PREPROCESSING_HINT}",
        )
    diff = float(np.abs(got - reference).max())
    if diff < tolerance:
        return VerifyResult("pass", diff,
                            f"max absolute logit difference {diff:.3e} < {tolerance:g}")
    return VerifyResult(
        "fail", diff,
        f"max absolute logit difference {diff:.3e} exceeds {tolerance:g}\n"
        f"{PREPROCESSING_HINT}",
    )
