"""Shared fixtures: a stub OCR engine binary, tiny corpus builders, and one
session-scoped end-to-end run of the synthetic benchmark pipeline."""
from __future__ import annotations

import os
import stat
import time
from dataclasses import dataclass
from pathlib import Path

import pytest
from PIL import Image

from leafclass.cli import main as cli_main
from leafclass.corpus import CorpusManifest, ImageRecord, load_manifest, write_manifest
from leafclass.evaluation import EvaluationReport, evaluate
from leafclass.fusion import read_predictions
from leafclass.synthetic import SYNTHETIC_ENGINE_VERSION

# Deterministic fake engine: --version prints a fixed banner; an extraction
# call prints a token stream derived from the image bytes and the psm, so
# different preprocessing variants yield different (but stable) text.
_STUB_ENGINE_SRC = """\
#!/usr/bin/env python3
import hashlib, sys

args = sys.argv[1:]
if "--version" in args:
    print("stub-ocr 9.9.1")
    print("built without native deps")
    sys.exit(0)
image_path = args[0]
psm = args[args.index("--psm") + 1]
digest = hashlib.sha256(open(image_path, "rb").read()).hexdigest()[:8]
print(f"stub text psm{psm} {digest}")
"""


def write_executable(path: Path, source: str) -> Path:
    path.write_text(source, encoding="utf-8")
    path.chmod(path.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return path


@pytest.fixture
def stub_engine(tmp_path: Path) -> Path:
    """Path to an executable that mimics the OCR engine's CLI contract."""
    return write_executable(tmp_path / "stub-ocr", _STUB_ENGINE_SRC)


# Solid per-class colors make the tiny corpora trivially separable for the
# image branch when a test needs that.
_CLASS_COLORS = (
    (200, 40, 40), (40, 120, 210), (50, 170, 70), (230, 170, 40),
    (140, 70, 180), (60, 60, 60), (240, 130, 170), (90, 160, 160),
)


@pytest.fixture
def corpus_builder(tmp_path: Path):
    """Factory for small on-disk corpora.

    rows: (image_id, class_id, split, retailer_id) tuples. Images are solid
    color per class at a size that satisfies the resolution rules.
    """

    def build(rows, classes, size=(120, 160), root: Path | None = None) -> CorpusManifest:
        root = tmp_path / "corpus" if root is None else root
        (root / "images").mkdir(parents=True, exist_ok=True)
        records = []
        for image_id, class_id, split, retailer_id in rows:
            rel = f"images/{image_id}.png"
            color = _CLASS_COLORS[class_id % len(_CLASS_COLORS)]
            Image.new("RGB", size, color).save(root / rel)
            records.append(ImageRecord(
                image_id=image_id, class_id=class_id, split=split,
                retailer_id=retailer_id, path=rel, width=size[0], height=size[1],
            ))
        manifest = CorpusManifest(classes=list(classes), records=records, root=root)
        write_manifest(manifest, root / "manifest.jsonl")
        return manifest

    return build


@dataclass
class PipelineRun:
    root: Path
    manifest_path: Path
    cache_path: Path
    text_model_path: Path
    image_model_path: Path
    predictions_path: Path
    report: EvaluationReport
    image_accuracy: float
    text_accuracy: float
    elapsed_s: float


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory) -> PipelineRun:
    """Full benchmark pipeline, once per session: render the synthetic corpus
    (20 classes, 30 train + 10 test each), train both branches, predict the
    test split, and score it. Roughly 40 seconds."""
    root = tmp_path_factory.mktemp("benchmark")
    manifest_path = root / "manifest.jsonl"
    cache_path = root / "ocr-cache.jsonl"
    text_model_path = root / "text-model.json"
    image_model_path = root / "image-model.json"
    predictions_path = root / "predictions.jsonl"

    started = time.monotonic()
    assert cli_main(["make-synthetic", "--out", str(root),
                     "--train", "30", "--test", "10", "--seed", "0"]) == 0
    cached = ["--manifest", str(manifest_path), "--cache", str(cache_path),
              "--engine-version", SYNTHETIC_ENGINE_VERSION]
    assert cli_main(["train-text", *cached, "--out", str(text_model_path)]) == 0
    assert cli_main(["train-image", "--manifest", str(manifest_path),
                     "--out", str(image_model_path)]) == 0
    assert cli_main(["predict", *cached,
                     "--text-model", str(text_model_path),
                     "--image-model", str(image_model_path),
                     "--split", "test", "--out", str(predictions_path)]) == 0
    elapsed = time.monotonic() - started

    preds = read_predictions(predictions_path)
    truth = load_manifest(manifest_path).truth()
    report = evaluate(preds, truth)
    image_accuracy = sum(p.argmax_image == truth[p.image_id] for p in preds) / len(preds)
    text_accuracy = sum(p.argmax_text == truth[p.image_id] for p in preds) / len(preds)

    return PipelineRun(
        root=root,
        manifest_path=manifest_path,
        cache_path=cache_path,
        text_model_path=text_model_path,
        image_model_path=image_model_path,
        predictions_path=predictions_path,
        report=report,
        image_accuracy=image_accuracy,
        text_accuracy=text_accuracy,
        elapsed_s=elapsed,
    )


@pytest.fixture(autouse=True)
def _no_ambient_config(monkeypatch):
    """Strip LEAFLET_* variables so the host environment cannot leak into
    config resolution mid-test."""
    for key in list(os.environ):
        if key.startswith("LEAFLET_"):
            monkeypatch.delenv(key)
