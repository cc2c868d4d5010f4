"""Command-line entry point wiring the pipeline stages together.

Exit codes: 0 success, 1 validation findings, 2 fatal errors (bad flags,
missing inputs, format mismatches).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .config import ConfigError, PipelineConfig, load_config
from .corpus import ManifestError, load_image, load_manifest, validate_corpus
from .evaluation import (
    EvaluationError,
    evaluate,
    render_report,
    write_confusion_csv,
    write_report_json,
)
from .extraction import (
    CacheError,
    EngineConfig,
    EngineNotFoundError,
    ExtractionCache,
    extract_corpus,
    probe_engine_version,
)
from .fusion import PredictionRecord, predict_record, read_predictions, write_predictions
from .image_model import (
    ExternalScoresError,
    ImageHyperparams,
    predict_image_scores,
    jitter_saturation,
    load_external_scores,
    load_image_model,
    save_image_model,
    train_image_model,
)
from .image_model import CLASSIFICATION_EDGE, image_features
from .queue_store import QueueError, ReviewQueueStore, queue_low_confidence
from .synthetic import generate_corpus
from .text_model import (
    TextHyperparams,
    fit_vectorizer,
    load_text_model,
    predict_text_scores,
    save_text_model,
    train_text_model,
    vectorize,
)

_FATAL = (ConfigError, ManifestError, CacheError, EngineNotFoundError, QueueError,
          ExternalScoresError, EvaluationError, FileNotFoundError, ValueError)


def _config_from(args: argparse.Namespace) -> PipelineConfig:
    overrides = {}
    for name in ("manifest", "cache", "text_model", "image_model", "text_weight",
                 "top_k", "workers", "engine", "languages", "seed", "queue_dir",
                 "host", "port", "static_dir"):
        if hasattr(args, name):
            overrides[name] = getattr(args, name)
    return load_config(getattr(args, "config", None), overrides=overrides)


def _resolve_engine_version(cache_path: str | Path, flag_version: str | None,
                            engine: EngineConfig) -> str:
    """Which engine version a cache handle should be opened under: explicit
    flag, else the installed engine, else whatever wrote the existing cache."""
    if flag_version:
        return flag_version
    try:
        return probe_engine_version(engine)
    except EngineNotFoundError:
        pass
    header = ExtractionCache.read_header_versions(cache_path)
    if header is not None:
        return header[0]
    raise EngineNotFoundError(
        f"no OCR engine installed, no --engine-version given, and no existing "
        f"cache header at {cache_path} to take the version from"
    )


def _open_cache(config: PipelineConfig, flag_version: str | None) -> ExtractionCache:
    engine = EngineConfig(binary=config.engine, languages=config.languages)
    version = _resolve_engine_version(config.cache, flag_version, engine)
    return ExtractionCache(config.cache, engine_version=version)


def _documents(manifest, cache: ExtractionCache, records) -> list[str]:
    docs = []
    for rec in records:
        doc = cache.get(rec.image_id)
        if doc is None:
            raise CacheError(
                f"no cached document for image {rec.image_id!r} under engine version "
                f"{cache.engine_version!r}; run extract-text first"
            )
        docs.append(doc.document)
    return docs


# -- subcommands -----------------------------------------------------------

def cmd_make_synthetic(args: argparse.Namespace) -> int:
    manifest, cache_path = generate_corpus(args.out, n_train=args.train,
                                           n_test=args.test, seed=args.seed)
    report = validate_corpus(manifest, expected_train=args.train, expected_test=args.test)
    print(f"wrote {len(manifest.records)} images across {len(manifest.classes)} classes "
          f"to {args.out}")
    print(f"extraction cache: {cache_path}")
    print(report.render())
    return 0 if report.ok else 1


def cmd_validate(args: argparse.Namespace) -> int:
    config = _config_from(args)
    manifest = load_manifest(config.manifest)
    report = validate_corpus(manifest, expected_train=args.train, expected_test=args.test)
    print(report.render())
    return 0 if report.ok else 1


def cmd_extract_text(args: argparse.Namespace) -> int:
    config = _config_from(args)
    manifest = load_manifest(config.manifest)
    engine = EngineConfig(binary=config.engine, languages=config.languages)
    cache = _open_cache(config, args.engine_version)
    records = manifest.records if args.split == "all" else manifest.by_split(args.split)
    extracted, hits = extract_corpus(manifest, cache, config=engine,
                                     workers=config.workers, records=records)
    print(f"extracted {extracted} image(s), {hits} already cached "
          f"(engine {cache.engine_version!r})")
    return 0


def cmd_train_text(args: argparse.Namespace) -> int:
    config = _config_from(args)
    manifest = load_manifest(config.manifest)
    cache = _open_cache(config, args.engine_version)
    train = manifest.by_split("train")
    docs = _documents(manifest, cache, train)
    vocab = fit_vectorizer(docs)
    X = [vectorize(d, vocab) for d in docs]
    y = [r.class_id for r in train]
    model = train_text_model(X, y, TextHyperparams(seed=config.seed),
                             vocabulary=vocab, classes=range(len(manifest.classes)))
    save_text_model(model, args.out)
    print(f"trained text model on {len(train)} documents "
          f"({vocab.size} vocabulary terms) -> {args.out}")
    return 0


def cmd_train_image(args: argparse.Namespace) -> int:
    config = _config_from(args)
    manifest = load_manifest(config.manifest)
    train = manifest.by_split("train")
    rng = np.random.default_rng(config.seed)
    feats, y = [], []
    for rec in train:
        img = corpus_mod.resize_longest_edge(load_image(manifest.resolve_path(rec)),
                                             CLASSIFICATION_EDGE)
        feats.append(image_features(img))
        y.append(rec.class_id)
        for _ in range(args.augment):
            feats.append(image_features(jitter_saturation(img, (0.5, 1.5), rng)))
            y.append(rec.class_id)
    model = train_image_model(np.asarray(feats), y, ImageHyperparams(seed=config.seed),
                              classes=range(len(manifest.classes)))
    save_image_model(model, args.out)
    print(f"trained image model on {len(y)} samples "
          f"({len(train)} images, augment={args.augment}) -> {args.out}")
    return 0


def _branch_scores(config: PipelineConfig, manifest, records, cache: ExtractionCache,
                   external_path: str | None):
    """Per-record (image_scores, text_scores) pairs for the combination step."""
    text_model = load_text_model(config.text_model)
    docs = _documents(manifest, cache, records)
    text_scores = [predict_text_scores(text_model, d) for d in docs]
    if external_path:
        ext = load_external_scores(external_path, manifest.classes)
        image_scores = []
        for rec in records:
            if rec.image_id not in ext.scores:
                raise ExternalScoresError(f"external scores missing image {rec.image_id!r}")
            image_scores.append(ext.scores[rec.image_id])
    else:
        image_model = load_image_model(config.image_model)
        image_scores = [predict_image_scores(image_model, load_image(manifest.resolve_path(rec)))
                        for rec in records]
    return image_scores, text_scores


def cmd_predict(args: argparse.Namespace) -> int:
    if args.external_scores and args.image_model:
        raise ValueError("--image-model and --external-scores are mutually exclusive")
    config = _config_from(args)
    manifest = load_manifest(config.manifest)
    cache = _open_cache(config, args.engine_version)
    records = manifest.records if args.split == "all" else manifest.by_split(args.split)
    image_scores, text_scores = _branch_scores(config, manifest, records, cache,
                                               args.external_scores)
    preds = [predict_record(rec.image_id, si, st, w_text=config.text_weight, k=config.top_k)
             for rec, si, st in zip(records, image_scores, text_scores)]
    write_predictions(preds, args.out, n_classes=len(manifest.classes),
                      include_probs=not args.no_probs)
    n_low = sum(1 for p in preds if p.confidence == "low")
    print(f"wrote {len(preds)} predictions to {args.out} "
          f"({n_low} low-confidence, w_text={config.text_weight})")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _config_from(args)
    manifest = load_manifest(config.manifest)
    preds = read_predictions(args.predictions)
    report = evaluate(preds, manifest.truth())
    print(render_report(report, class_names=manifest.classes))
    if args.json:
        write_report_json(report, args.json)
    if args.confusion_csv:
        write_confusion_csv(report.confusion_pairs, args.confusion_csv,
                            class_names=manifest.classes)
    return 0


def cmd_sweep_weight(args: argparse.Namespace) -> int:
    config = _config_from(args)
    manifest = load_manifest(config.manifest)
    cache = _open_cache(config, args.engine_version)
    train = manifest.by_split("train")
    if not train:
        raise EvaluationError("sweep-weight needs a train split to hold out from")
    # Held-out slice of the train split; test stays untouched for tuning.
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(train))
    n_hold = max(1, int(round(len(train) * args.holdout_fraction)))
    holdout = [train[i] for i in sorted(order[:n_hold])]
    image_scores, text_scores = _branch_scores(config, manifest, holdout, cache,
                                               args.external_scores)
    truth = manifest.truth()
    weights = [float(w) for w in args.weights.split(",") if w.strip()]
    if not weights:
        raise ValueError("no weights given")
    best_w, best_acc = None, -1.0
    print(f"{'w_text':>8}  {'accuracy':>8}   (holdout n={len(holdout)})")
    for w in weights:
        hits = 0
        for rec, si, st in zip(holdout, image_scores, text_scores):
            pred = predict_record(rec.image_id, si, st, w_text=w, k=1)
            hits += pred.predicted_class == truth[rec.image_id]
        acc = hits / len(holdout)
        print(f"{w:>8.2f}  {acc:>8.4f}")
        if acc > best_acc or (acc == best_acc and best_w is not None and w < best_w):
            best_w, best_acc = w, acc
    print(f"selected w_text = {best_w}")
    return 0


def cmd_queue(args: argparse.Namespace) -> int:
    config = _config_from(args)
    manifest = load_manifest(config.manifest)
    cache = _open_cache(config, args.engine_version)
    preds = read_predictions(args.predictions)
    documents = {rec.image_id: doc.document
                 for rec in manifest.records
                 if (doc := cache.get(rec.image_id)) is not None}
    # Items carry absolute image paths so the service can run from any cwd.
    abs_manifest = corpus_mod.CorpusManifest(
        classes=manifest.classes,
        records=[
            corpus_mod.ImageRecord(
                image_id=r.image_id, class_id=r.class_id, split=r.split,
                retailer_id=r.retailer_id, path=str(manifest.resolve_path(r).resolve()),
                width=r.width, height=r.height)
            for r in manifest.records
        ],
        version=manifest.version,
        root=manifest.root,
    )
    store = ReviewQueueStore(config.queue_dir)
    n = queue_low_confidence(preds, abs_manifest, documents, store)
    stats = store.stats()
    print(f"enqueued {n} new item(s); {stats['pending']} pending, "
          f"{stats['resolved']} resolved")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    config = _config_from(args)
    from .service import serve
    print(f"serving review queue {config.queue_dir} on http://{config.host}:{config.port}")
    serve(config.queue_dir, config.host, config.port, static_dir=config.static_dir)
    return 0


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leafclass",
        description="Fine-grained promotion classification: image + extracted-text "
                    "branches fused by weighted probability stacking, with a "
                    "human review queue for low-confidence predictions.",
    )
    parser.add_argument("--config", default=None, help="JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        p.add_argument("--config", default=None, help="JSON config file")
        return p

    p = add("make-synthetic", cmd_make_synthetic, "render the synthetic benchmark corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=30, help="train images per class")
    p.add_argument("--test", type=int, default=10, help="test images per class")
    p.add_argument("--seed", type=int, default=0)

    p = add("validate", cmd_validate, "check manifest structural invariants")
    p.add_argument("--manifest", default=None)
    p.add_argument("--train", type=int, default=corpus_mod.DEFAULT_TRAIN_PER_CLASS,
                   help="expected train images per class")
    p.add_argument("--test", type=int, default=corpus_mod.DEFAULT_TEST_PER_CLASS,
                   help="expected test images per class")

    p = add("extract-text", cmd_extract_text, "run the OCR ensemble into the cache")
    p.add_argument("--manifest", default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--engine", default=None, help="OCR engine binary")
    p.add_argument("--languages", default=None)
    p.add_argument("--engine-version", default=None,
                   help="override the cache engine version tag")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--split", choices=("train", "test", "all"), default="all")

    p = add("train-text", cmd_train_text, "fit the extracted-text classifier")
    p.add_argument("--manifest", default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--engine-version", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("train-image", cmd_train_image, "fit the native image classifier")
    p.add_argument("--manifest", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--augment", type=int, default=1,
                   help="extra saturation-jittered copies per train image")
    p.add_argument("--out", required=True)

    p = add("predict", cmd_predict, "combine both branches into predictions")
    p.add_argument("--manifest", default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--engine-version", default=None)
    p.add_argument("--text-model", dest="text_model", default=None)
    p.add_argument("--image-model", dest="image_model", default=None)
    p.add_argument("--external-scores", default=None,
                   help="JSONL score file substituting the image branch")
    p.add_argument("--text-weight", dest="text_weight", type=float, default=None)
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--no-probs", action="store_true",
                   help="omit per-class probability vectors from the output")
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "score a prediction file against the manifest")
    p.add_argument("--manifest", default=None)
    p.add_argument("--predictions", required=True)
    p.add_argument("--json", default=None, help="also write the report as JSON")
    p.add_argument("--confusion-csv", default=None)

    p = add("sweep-weight", cmd_sweep_weight, "grid-search w_text on held-out train data")
    p.add_argument("--manifest", default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--engine-version", default=None)
    p.add_argument("--text-model", dest="text_model", default=None)
    p.add_argument("--image-model", dest="image_model", default=None)
    p.add_argument("--external-scores", default=None)
    p.add_argument("--weights", default="0.5,1,2,3,5")
    p.add_argument("--holdout-fraction", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=None)

    p = add("queue", cmd_queue, "enqueue low-confidence predictions for review")
    p.add_argument("--manifest", default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--engine-version", default=None)
    p.add_argument("--predictions", required=True)
    p.add_argument("--queue-dir", dest="queue_dir", default=None)

    p = add("serve", cmd_serve, "run the review-queue HTTP service")
    p.add_argument("--queue-dir", dest="queue_dir", default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--static-dir", dest="static_dir", default=None,
                   help="review UI bundle directory")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _FATAL as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
