"""Command wiring, exit codes, and cross-stage flows through the CLI."""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
import pytest

from leafclass.cli import main
from leafclass.corpus import load_manifest
from leafclass.extraction import ExtractionCache
from leafclass.fusion import read_predictions
from leafclass.queue_store import ReviewQueueStore
from leafclass.synthetic import SYNTHETIC_ENGINE_VERSION


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory):
    """A small corpus plus trained models, built once through the CLI."""
    root = tmp_path_factory.mktemp("cli-corpus")
    assert main(["make-synthetic", "--out", str(root),
                 "--train", "2", "--test", "1", "--seed", "5"]) == 0
    paths = {
        "root": root,
        "manifest": root / "manifest.jsonl",
        "cache": root / "ocr-cache.jsonl",
        "text_model": root / "text-model.json",
        "image_model": root / "image-model.json",
    }
    cached = ["--manifest", str(paths["manifest"]), "--cache", str(paths["cache"]),
              "--engine-version", SYNTHETIC_ENGINE_VERSION]
    assert main(["train-text", *cached, "--out", str(paths["text_model"])]) == 0
    assert main(["train-image", "--manifest", str(paths["manifest"]),
                 "--augment", "0", "--out", str(paths["image_model"])]) == 0
    paths["cached_flags"] = cached
    return paths


def predict_args(mini_run, out, extra=()):
    return ["predict", *mini_run["cached_flags"],
            "--text-model", str(mini_run["text_model"]),
            "--image-model", str(mini_run["image_model"]),
            "--out", str(out), *extra]


# -- exit code contract ----------------------------------------------------

def test_make_synthetic_writes_valid_corpus(mini_run, capsys):
    # The fixture already ran it; rerunning into the same tree must also work
    # (idempotent renders, append-safe cache).
    out = mini_run["root"]
    assert main(["make-synthetic", "--out", str(out),
                 "--train", "2", "--test", "1", "--seed", "5"]) == 0
    captured = capsys.readouterr().out
    assert "wrote 60 images across 20 classes" in captured
    assert "ok: no violations" in captured
    manifest = load_manifest(mini_run["manifest"])
    assert len(manifest.records) == 60


def test_validate_reports_violations_with_exit_1(mini_run, capsys):
    # Expecting different per-class counts turns the clean corpus into a
    # finding, which is exit 1, not a crash.
    assert main(["validate", "--manifest", str(mini_run["manifest"]),
                 "--train", "3", "--test", "1"]) == 1
    assert "split_counts" in capsys.readouterr().out


def test_fatal_errors_exit_2(mini_run, tmp_path, capsys):
    missing = tmp_path / "nope.jsonl"
    assert main(["evaluate", "--manifest", str(mini_run["manifest"]),
                 "--predictions", str(missing)]) == 2
    assert "error:" in capsys.readouterr().err

    assert main(predict_args(mini_run, tmp_path / "p.jsonl",
                             extra=["--external-scores", str(tmp_path / "x.jsonl")])) == 2
    assert "mutually exclusive" in capsys.readouterr().err


def test_missing_engine_without_cache_header_exits_2(tmp_path, corpus_builder, capsys):
    corpus_builder([("img-0", 0, "train", "r1")], classes=["a"])
    manifest = tmp_path / "corpus" / "manifest.jsonl"
    assert main(["extract-text", "--manifest", str(manifest),
                 "--cache", str(tmp_path / "fresh-cache.jsonl"),
                 "--engine", "definitely-not-installed-ocr"]) == 2
    err = capsys.readouterr().err
    assert "no OCR engine installed" in err


def test_bad_config_value_exits_2(mini_run, tmp_path, capsys):
    assert main(predict_args(mini_run, tmp_path / "p.jsonl",
                             extra=["--text-weight", "0"])) == 2
    assert "text_weight must be > 0" in capsys.readouterr().err


# -- prediction and evaluation flow ----------------------------------------

def test_predict_evaluate_queue_flow(mini_run, tmp_path, capsys):
    preds_path = tmp_path / "preds.jsonl"
    assert main(predict_args(mini_run, preds_path)) == 0
    stdout = capsys.readouterr().out
    assert re.search(r"wrote 20 predictions", stdout)

    preds = read_predictions(preds_path)
    assert len(preds) == 20  # one per test image
    assert all(len(p.top_k) == 3 for p in preds)

    report_json = tmp_path / "report.json"
    confusion_csv = tmp_path / "confusions.csv"
    assert main(["evaluate", "--manifest", str(mini_run["manifest"]),
                 "--predictions", str(preds_path),
                 "--json", str(report_json),
                 "--confusion-csv", str(confusion_csv)]) == 0
    assert "accuracy" in capsys.readouterr().out
    report = json.loads(report_json.read_text())
    assert report["n"] == 20
    assert confusion_csv.exists()

    queue_dir = tmp_path / "queue"
    assert main(["queue", *mini_run["cached_flags"],
                 "--predictions", str(preds_path),
                 "--queue-dir", str(queue_dir)]) == 0
    store = ReviewQueueStore(queue_dir)
    n_low = sum(1 for p in preds if p.confidence == "low")
    assert len(store.state.pending()) == n_low
    # Queue items carry absolute image paths so the service can serve them
    # from any working directory.
    for pending in store.state.pending():
        assert Path(pending.image_path).is_absolute()
        assert Path(pending.image_path).exists()
        assert pending.document  # extracted text rides along for the reviewer


def test_queue_stores_absolute_paths_given_relative_manifest(mini_run, tmp_path, monkeypatch):
    # The service resolves stored paths against the queue dir, not the cwd of
    # whoever ran `queue`, so enqueue must absolutize even when the manifest
    # was given relative.
    preds_path = tmp_path / "preds.jsonl"
    assert main(predict_args(mini_run, preds_path)) == 0
    monkeypatch.chdir(mini_run["root"].parent)
    rel = mini_run["root"].name
    queue_dir = tmp_path / "relqueue"
    assert main(["queue", "--manifest", f"{rel}/manifest.jsonl",
                 "--cache", f"{rel}/ocr-cache.jsonl",
                 "--engine-version", SYNTHETIC_ENGINE_VERSION,
                 "--predictions", str(preds_path),
                 "--queue-dir", str(queue_dir)]) == 0
    pending = ReviewQueueStore(queue_dir).state.pending()
    assert pending
    for item in pending:
        assert Path(item.image_path).is_absolute()
        assert Path(item.image_path).exists()


def test_predict_no_probs_flag(mini_run, tmp_path):
    out = tmp_path / "lean.jsonl"
    assert main(predict_args(mini_run, out, extra=["--no-probs"])) == 0
    assert all(p.p_combined is None for p in read_predictions(out))


def test_predict_split_all(mini_run, tmp_path, capsys):
    out = tmp_path / "all.jsonl"
    assert main(predict_args(mini_run, out, extra=["--split", "all"])) == 0
    assert "wrote 60 predictions" in capsys.readouterr().out


def test_predict_flag_beats_environment(mini_run, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LEAFLET_TEXT_WEIGHT", "7.0")
    out = tmp_path / "env.jsonl"
    assert main(predict_args(mini_run, out)) == 0
    assert "w_text=7.0" in capsys.readouterr().out  # env applies without flag
    assert main(predict_args(mini_run, out, extra=["--text-weight", "9.0"])) == 0
    assert "w_text=9.0" in capsys.readouterr().out  # flag wins over env


def test_queue_respects_existing_lock(mini_run, tmp_path, capsys):
    preds_path = tmp_path / "preds.jsonl"
    assert main(predict_args(mini_run, preds_path)) == 0
    queue_dir = tmp_path / "queue"
    holder = ReviewQueueStore(queue_dir, take_lock=True)
    try:
        assert main(["queue", *mini_run["cached_flags"],
                     "--predictions", str(preds_path),
                     "--queue-dir", str(queue_dir)]) == 2
        assert "locked by another writer" in capsys.readouterr().err
    finally:
        holder.release_lock()


# -- external scores path --------------------------------------------------

def test_predict_with_external_scores(mini_run, tmp_path, capsys):
    manifest = load_manifest(mini_run["manifest"])
    test_records = manifest.by_split("test")
    rng = np.random.default_rng(0)
    scores_path = tmp_path / "external.jsonl"
    with scores_path.open("w") as fh:
        fh.write(json.dumps({"type": "header", "classes": manifest.classes,
                             "source": "external-cnn"}) + "\n")
        for rec in test_records:
            row = {"type": "scores", "image_id": rec.image_id,
                   "scores": rng.normal(size=len(manifest.classes)).tolist()}
            fh.write(json.dumps(row) + "\n")
    out = tmp_path / "ext-preds.jsonl"
    assert main(["predict", *mini_run["cached_flags"],
                 "--text-model", str(mini_run["text_model"]),
                 "--external-scores", str(scores_path),
                 "--out", str(out)]) == 0
    assert len(read_predictions(out)) == 20


def test_predict_external_scores_missing_image(mini_run, tmp_path, capsys):
    manifest = load_manifest(mini_run["manifest"])
    scores_path = tmp_path / "partial.jsonl"
    scores_path.write_text(json.dumps({"type": "header", "classes": manifest.classes,
                                       "source": "x"}) + "\n")
    assert main(["predict", *mini_run["cached_flags"],
                 "--text-model", str(mini_run["text_model"]),
                 "--external-scores", str(scores_path),
                 "--out", str(tmp_path / "p.jsonl")]) == 2
    assert "external scores missing image" in capsys.readouterr().err


# -- extraction through the CLI --------------------------------------------

def test_extract_text_with_stub_engine(tmp_path, corpus_builder, stub_engine, capsys):
    rows = [(f"img-{i}", i % 2, "train", "r1") for i in range(4)]
    corpus_builder(rows, classes=["a", "b"])
    manifest = tmp_path / "corpus" / "manifest.jsonl"
    cache_path = tmp_path / "stub-cache.jsonl"
    args = ["extract-text", "--manifest", str(manifest), "--cache", str(cache_path),
            "--engine", str(stub_engine), "--workers", "2"]
    assert main(args) == 0
    assert "extracted 4 image(s), 0 already cached" in capsys.readouterr().out
    cache = ExtractionCache(cache_path, engine_version="stub-ocr 9.9.1")
    assert len(cache) == 4
    assert main(args) == 0
    assert "extracted 0 image(s), 4 already cached" in capsys.readouterr().out


# -- weight sweep ----------------------------------------------------------

def test_sweep_weight_reports_selection(mini_run, capsys):
    assert main(["sweep-weight", *mini_run["cached_flags"],
                 "--text-model", str(mini_run["text_model"]),
                 "--image-model", str(mini_run["image_model"]),
                 "--weights", "0.5,2,4"]) == 0
    out = capsys.readouterr().out
    rows = re.findall(r"^\s*(\d+\.\d{2})\s+(\d\.\d{4})$", out, flags=re.M)
    assert [w for w, _ in rows] == ["0.50", "2.00", "4.00"]
    selected = re.search(r"selected w_text = (\d+(\.\d+)?)", out).group(1)
    best = max(rows, key=lambda pair: (float(pair[1]), -float(pair[0])))
    assert float(selected) == float(best[0])


def test_sweep_weight_rejects_empty_weights(mini_run, capsys):
    assert main(["sweep-weight", *mini_run["cached_flags"],
                 "--text-model", str(mini_run["text_model"]),
                 "--image-model", str(mini_run["image_model"]),
                 "--weights", " , "]) == 2
    assert "no weights given" in capsys.readouterr().err
