"""Image branch: a compact native classifier over fixed image features, plus
ingestion of externally produced per-class score files.

The native model keeps the whole pipeline self-contained and testable at desk
scale: multinomial logistic regression over a 3,120-dim feature vector
(32x32x3 bilinear downsample + three 16-bin channel histograms). Production
deployments are expected to swap in scores from a fine-tuned CNN through the
external-scores file; EXTERNAL_SCORES_RECIPE documents the reference training
recipe such a model should follow.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .corpus import resize_longest_edge

FEATURE_DOWNSAMPLE = 32
FEATURE_HIST_BINS = 16
FEATURE_LEN = FEATURE_DOWNSAMPLE * FEATURE_DOWNSAMPLE * 3 + 3 * FEATURE_HIST_BINS  # 3120

# Longer-edge size the classification branch operates on (extraction uses 512).
CLASSIFICATION_EDGE = 256

#: Reference recipe for producing an external-scores file with a deep-learning
#: stack: ImageNet-pretrained ResNet50, final FC replaced by Linear 2048->1024,
#: ReLU, Linear 1024->n_classes; batch size 16, SGD momentum 0.95, lr 0.001,
#: 30 epochs of fine-tuning; color jitter augmentation with saturation 0.5;
#: inputs at 256 longer edge. Emit raw logits per test image (fusion applies
#: its own softmax).
EXTERNAL_SCORES_RECIPE = {
    "backbone": "resnet50-imagenet",
    "head": ["linear 2048->1024", "relu", "linear 1024->n_classes"],
    "batch_size": 16,
    "momentum": 0.95,
    "learning_rate": 0.001,
    "epochs": 30,
    "augmentation": "saturation jitter 0.5",
    "input_longer_edge": CLASSIFICATION_EDGE,
    "scores": "raw logits",
}


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Float RGB [0,1] HxWx3 -> HSV [0,1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    delta = maxc - minc
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(maxc > 0, delta / maxc, 0.0)
        dr = np.where(delta > 0, (maxc - r) / delta, 0.0)
        dg = np.where(delta > 0, (maxc - g) / delta, 0.0)
        db = np.where(delta > 0, (maxc - b) / delta, 0.0)
    h = np.where(maxc == r, db - dg, np.where(maxc == g, 2.0 + dr - db, 4.0 + dg - dr))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Float HSV [0,1] HxWx3 -> RGB [0,1]."""
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0).astype(np.int64) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def image_features(img: Image.Image) -> np.ndarray:
    """3,120-dim feature vector: 32x32 bilinear RGB downsample in [0,1]
    (row-major, channel-last), then one normalized 16-bin histogram per
    channel computed over the full-resolution image."""
    rgb = img.convert("RGB")
    w, h = rgb.size
    if w == 0 or h == 0:
        raise ValueError("cannot featurize zero-dimension image")
    small = rgb.resize((FEATURE_DOWNSAMPLE, FEATURE_DOWNSAMPLE), Image.Resampling.BILINEAR)
    dense = np.asarray(small, dtype=np.float64).reshape(-1) / 255.0
    full = np.asarray(rgb, dtype=np.uint8)
    hists = []
    for c in range(3):
        hist, _ = np.histogram(full[..., c], bins=FEATURE_HIST_BINS, range=(0, 255))
        hists.append(hist / hist.sum())
    return np.concatenate([dense, np.concatenate(hists)])


def jitter_saturation(img: Image.Image, factor_range: tuple[float, float],
                      rng: np.random.Generator) -> Image.Image:
    """Scale the HSV saturation channel by a factor drawn uniformly from
    factor_range, clamped to [0,1]. Grayscale pixels (S=0) are fixed points."""
    lo, hi = factor_range
    if lo < 0:
        raise ValueError(f"factor range lower bound must be >= 0, got {lo}")
    factor = float(rng.uniform(lo, hi))
    rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    hsv = rgb_to_hsv(rgb)
    hsv[..., 1] = np.clip(hsv[..., 1] * factor, 0.0, 1.0)
    out = np.clip(hsv_to_rgb(hsv) * 255.0, 0.0, 255.0)
    return Image.fromarray(np.floor(out + 0.5).astype(np.uint8), mode="RGB")


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class ImageHyperparams:
    lr: float = 0.001
    momentum: float = 0.95
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0


@dataclass
class ImageModel:
    weights: np.ndarray  # [n_classes, FEATURE_LEN]
    bias: np.ndarray
    classes: list[int]
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    hyperparams: ImageHyperparams

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def train_image_model(
    features: np.ndarray,
    y: Sequence[int],
    hp: ImageHyperparams = ImageHyperparams(),
    classes: Sequence[int] | None = None,
) -> ImageModel:
    """Multinomial logistic regression (softmax cross-entropy) by mini-batch
    SGD with momentum. Features are standardized with training-set statistics
    stored on the model. Deterministic per seed."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be a 2-D array [n_samples, n_features]")
    n, n_features = features.shape
    if n_features != FEATURE_LEN:
        raise ValueError(f"expected {FEATURE_LEN} features, got {n_features}")
    if len(y) != n:
        raise ValueError(f"features and labels differ in length: {n} vs {len(y)}")
    if classes is None:
        classes = sorted(set(y))
    classes = list(classes)
    if len(classes) < 2:
        raise ValueError("training needs at least 2 distinct classes")
    class_pos = {c: i for i, c in enumerate(classes)}
    unknown = sorted(set(y) - set(classes))
    if unknown:
        raise ValueError(f"labels not in class table: {unknown}")
    y_idx = np.array([class_pos[label] for label in y], dtype=np.int64)
    n_classes = len(classes)

    mean = features.mean(axis=0)
    scale = features.std(axis=0)
    scale[scale < 1e-12] = 1.0
    X = (features - mean) / scale

    W = np.zeros((n_classes, FEATURE_LEN))
    b = np.zeros(n_classes)
    vW = np.zeros_like(W)
    vb = np.zeros_like(b)
    onehot = np.eye(n_classes)[y_idx]

    rng = np.random.default_rng(hp.seed)
    for _ in range(hp.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            batch = perm[start:start + hp.batch_size]
            Xb = X[batch]
            probs = softmax_rows(Xb @ W.T + b)
            grad = (probs - onehot[batch]) / len(batch)
            gW = grad.T @ Xb
            gb = grad.sum(axis=0)
            vW = hp.momentum * vW - hp.lr * gW
            vb = hp.momentum * vb - hp.lr * gb
            W += vW
            b += vb

    return ImageModel(weights=W, bias=b, classes=classes, feature_mean=mean,
                      feature_scale=scale, hyperparams=hp)


def logits_from_features(model: ImageModel, feats: np.ndarray) -> np.ndarray:
    x = (np.asarray(feats, dtype=np.float64) - model.feature_mean) / model.feature_scale
    return model.weights @ x + model.bias


def predict_image_scores(model: ImageModel, img: Image.Image) -> np.ndarray:
    """Softmax class probabilities for one image."""
    feats = image_features(resize_longest_edge(img, CLASSIFICATION_EDGE))
    return predict_from_features(model, feats)


def predict_from_features(model: ImageModel, feats: np.ndarray) -> np.ndarray:
    return softmax_rows(logits_from_features(model, feats))


IMAGE_MODEL_FORMAT = "image-model/1"


def save_image_model(model: ImageModel, path: str | Path) -> None:
    payload = {
        "format": IMAGE_MODEL_FORMAT,
        "classes": model.classes,
        "feature_mean": model.feature_mean.tolist(),
        "feature_scale": model.feature_scale.tolist(),
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
        "hyperparams": {
            "lr": model.hyperparams.lr,
            "momentum": model.hyperparams.momentum,
            "batch_size": model.hyperparams.batch_size,
            "epochs": model.hyperparams.epochs,
            "seed": model.hyperparams.seed,
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload), encoding="utf-8")


def load_image_model(path: str | Path) -> ImageModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != IMAGE_MODEL_FORMAT:
        raise ValueError(f"unsupported image model format {payload.get('format')!r}")
    return ImageModel(
        weights=np.array(payload["weights"], dtype=np.float64),
        bias=np.array(payload["bias"], dtype=np.float64),
        classes=[int(c) for c in payload["classes"]],
        feature_mean=np.array(payload["feature_mean"], dtype=np.float64),
        feature_scale=np.array(payload["feature_scale"], dtype=np.float64),
        hyperparams=ImageHyperparams(**payload["hyperparams"]),
    )


@dataclass
class ExternalScores:
    """Per-image raw score vectors produced outside this pipeline (typically
    logits from a fine-tuned CNN). The class table must match the corpus
    class table exactly, names and order."""
    classes: list[str]
    source: str
    scores: dict[str, np.ndarray]


class ExternalScoresError(Exception):
    pass


def load_external_scores(path: str | Path, expected_classes: Sequence[str]) -> ExternalScores:
    path = Path(path)
    expected = list(expected_classes)
    classes: list[str] | None = None
    source = ""
    scores: dict[str, np.ndarray] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ExternalScoresError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            kind = obj.get("type")
            if kind == "header":
                classes = [str(c) for c in obj.get("classes", [])]
                source = str(obj.get("source", ""))
                if classes != expected:
                    for i, (got, want) in enumerate(zip(classes, expected)):
                        if got != want:
                            raise ExternalScoresError(
                                f"class table mismatch at index {i}: file has {got!r}, "
                                f"corpus has {want!r}"
                            )
                    raise ExternalScoresError(
                        f"class table length mismatch: file has {len(classes)}, "
                        f"corpus has {len(expected)}"
                    )
            elif kind == "scores":
                if classes is None:
                    raise ExternalScoresError(f"{path}:{lineno}: scores row before header")
                image_id = str(obj.get("image_id"))
                if image_id in scores:
                    raise ExternalScoresError(f"duplicate image_id {image_id!r}")
                arr = np.array(obj.get("scores", []), dtype=np.float64)
                if arr.shape != (len(expected),):
                    raise ExternalScoresError(
                        f"score array for image {image_id!r} has length {arr.size}, "
                        f"expected {len(expected)}"
                    )
                if not np.all(np.isfinite(arr)):
                    raise ExternalScoresError(f"non-finite score for image {image_id!r}")
                scores[image_id] = arr
            else:
                raise ExternalScoresError(f"{path}:{lineno}: unknown record type {kind!r}")
    if classes is None:
        raise ExternalScoresError(f"{path}: missing header line")
    return ExternalScores(classes=classes, source=source, scores=scores)
