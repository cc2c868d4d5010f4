"""Text branch: TF-IDF encoding of the extracted documents and a one-vs-rest
linear classifier trained with modified-huber loss under an adaptive
learning-rate schedule.

Tokenization is deliberately minimal (lowercase, alphanumeric runs of length
>= 2, no stopword or special-sign removal): serving-size strings like "250g"
must survive, and OCR noise is left for the idf weighting to damp.
"""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

TOKEN_RE = re.compile(r"[^\W_]{2,}", re.UNICODE)

ETA_DIVISOR = 5.0
MIN_ETA = 1e-6


def tokenize(text: str) -> list[str]:
    """Lowercased maximal runs of alphanumeric characters, length >= 2."""
    return TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class TfidfVocabulary:
    token_to_index: dict[str, int]
    idf: np.ndarray
    document_count: int

    @property
    def size(self) -> int:
        return len(self.token_to_index)


@dataclass(frozen=True)
class SparseVec:
    """Sorted-index sparse row over a fixed-size feature space."""
    indices: np.ndarray
    values: np.ndarray
    size: int

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.size)
        out[self.indices] = self.values
        return out


def fit_vectorizer(docs: Sequence[str]) -> TfidfVocabulary:
    """Build the vocabulary (sorted lexicographically for determinism) and
    smoothed idf weights: idf(t) = ln((1 + N) / (1 + df(t))) + 1."""
    if not docs:
        raise ValueError("cannot fit vectorizer on zero documents")
    df: Counter[str] = Counter()
    for doc in docs:
        df.update(set(tokenize(doc)))
    if not df:
        raise ValueError("empty vocabulary: no token of length >= 2 in any document")
    tokens = sorted(df)
    n = len(docs)
    idf = np.array([np.log((1.0 + n) / (1.0 + df[t])) + 1.0 for t in tokens])
    return TfidfVocabulary(token_to_index={t: i for i, t in enumerate(tokens)},
                           idf=idf, document_count=n)


def vectorize(doc: str, vocab: TfidfVocabulary) -> SparseVec:
    """Term counts weighted by idf, then L2-normalized. Unknown tokens are
    ignored; a document with no known tokens yields the zero vector."""
    counts: Counter[int] = Counter()
    for tok in tokenize(doc):
        idx = vocab.token_to_index.get(tok)
        if idx is not None:
            counts[idx] += 1
    if not counts:
        return SparseVec(np.empty(0, dtype=np.int64), np.empty(0), vocab.size)
    indices = np.array(sorted(counts), dtype=np.int64)
    values = np.array([counts[i] for i in indices], dtype=np.float64) * vocab.idf[indices]
    norm = np.sqrt(np.dot(values, values))
    if norm > 0:
        values = values / norm
    return SparseVec(indices, values, vocab.size)


def modified_huber(margin):
    """Loss and d(loss)/d(margin) at z = margin:
    z >= 1 -> (0, 0); -1 <= z < 1 -> ((1-z)^2, -2(1-z)); z < -1 -> (-4z, -4).

    Accepts a scalar or an ndarray; returns matching shapes.
    """
    z = np.asarray(margin, dtype=np.float64)
    loss = np.where(z >= 1.0, 0.0, np.where(z >= -1.0, (1.0 - z) ** 2, -4.0 * z))
    dloss = np.where(z >= 1.0, 0.0, np.where(z >= -1.0, -2.0 * (1.0 - z), -4.0))
    if np.isscalar(margin) or np.ndim(margin) == 0:
        return float(loss), float(dloss)
    return loss, dloss


@dataclass(frozen=True)
class TextHyperparams:
    eta0: float = 0.1
    tolerance: float = 1e-3
    patience: int = 5
    max_epochs: int = 1000
    seed: int = 0
    l2: float = 1e-3


@dataclass
class TextModel:
    vocabulary: TfidfVocabulary
    weights: np.ndarray  # [n_classes, n_features]
    bias: np.ndarray  # [n_classes]
    classes: list[int]
    hyperparams: TextHyperparams

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def train_text_model(
    X: Sequence[SparseVec],
    y: Sequence[int],
    hp: TextHyperparams = TextHyperparams(),
    vocabulary: TfidfVocabulary | None = None,
    classes: Sequence[int] | None = None,
) -> TextModel:
    """One-vs-rest SGD with modified-huber loss.

    Each class is a binary problem with targets +/-1. The per-epoch sample
    order is a seeded permutation shared across classes, so the joint pass
    below is identical to fitting every class independently. Each class keeps
    its own learning rate: starting at eta0, eta is divided by 5 whenever the
    best epoch loss fails to improve by `tolerance` for `patience`
    consecutive epochs, and the class stops once eta drops below 1e-6 (or at
    max_epochs).
    """
    if len(X) != len(y):
        raise ValueError(f"X and y lengths differ: {len(X)} vs {len(y)}")
    if len(X) == 0:
        raise ValueError("no training samples")
    n_features = X[0].size
    for v in X:
        if v.size != n_features:
            raise ValueError(f"inconsistent feature dimension: {v.size} vs {n_features}")
    if classes is None:
        classes = sorted(set(y))
    classes = list(classes)
    class_pos = {c: i for i, c in enumerate(classes)}
    if len(classes) < 2:
        raise ValueError("training needs at least 2 distinct classes")
    unknown = sorted(set(y) - set(classes))
    if unknown:
        raise ValueError(f"labels not in class table: {unknown}")

    n = len(X)
    n_classes = len(classes)
    y_row = np.array([class_pos[label] for label in y], dtype=np.int64)

    W = np.zeros((n_classes, n_features))
    b = np.zeros(n_classes)
    eta = np.full(n_classes, hp.eta0)
    best = np.full(n_classes, np.inf)
    bad_epochs = np.zeros(n_classes, dtype=np.int64)
    active = np.ones(n_classes, dtype=bool)

    rng = np.random.default_rng(hp.seed)
    for _ in range(hp.max_epochs):
        if not active.any():
            break
        perm = rng.permutation(n)
        epoch_loss = np.zeros(n_classes)
        for i in perm:
            idx, vals = X[i].indices, X[i].values
            margins = (W[:, idx] @ vals if idx.size else np.zeros(n_classes)) + b
            targets = np.where(np.arange(n_classes) == y_row[i], 1.0, -1.0)
            z = targets * margins
            loss, dloss = modified_huber(z)
            epoch_loss += loss
            step = eta * dloss * targets * active
            if hp.l2 > 0.0:
                W[active] *= 1.0 - eta[active, None] * hp.l2
            if idx.size:
                W[:, idx] -= step[:, None] * vals[None, :]
            b -= step
        epoch_loss /= n
        improved = epoch_loss < best - hp.tolerance
        best = np.minimum(best, epoch_loss)
        bad_epochs = np.where(improved, 0, bad_epochs + 1)
        plateau = active & (bad_epochs >= hp.patience)
        eta[plateau] /= ETA_DIVISOR
        bad_epochs[plateau] = 0
        active &= eta >= MIN_ETA

    if vocabulary is None:
        vocabulary = TfidfVocabulary(token_to_index={}, idf=np.empty(0), document_count=0)
    return TextModel(vocabulary=vocabulary, weights=W, bias=b, classes=classes, hyperparams=hp)


def text_margins(model: TextModel, vec: SparseVec) -> np.ndarray:
    if vec.indices.size:
        return model.weights[:, vec.indices] @ vec.values + model.bias
    return model.bias.copy()


def calibrate_margins(margins: np.ndarray) -> np.ndarray:
    """Per-class probability from a raw margin: clamp((f+1)/2, 0, 1),
    normalized across classes; all-zero falls back to uniform."""
    p = np.clip((margins + 1.0) / 2.0, 0.0, 1.0)
    total = p.sum()
    if total == 0.0:
        return np.full(p.shape, 1.0 / p.size)
    return p / total


def predict_text_scores(model: TextModel, doc: str) -> np.ndarray:
    """Calibrated class probabilities for one document (sums to 1)."""
    vec = vectorize(doc, model.vocabulary)
    return calibrate_margins(text_margins(model, vec))


TEXT_MODEL_FORMAT = "text-model/1"


def save_text_model(model: TextModel, path: str | Path) -> None:
    tokens = [""] * model.vocabulary.size
    for tok, i in model.vocabulary.token_to_index.items():
        tokens[i] = tok
    payload = {
        "format": TEXT_MODEL_FORMAT,
        "classes": model.classes,
        "vocabulary": {
            "tokens": tokens,
            "idf": model.vocabulary.idf.tolist(),
            "document_count": model.vocabulary.document_count,
        },
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
        "hyperparams": {
            "eta0": model.hyperparams.eta0,
            "tolerance": model.hyperparams.tolerance,
            "patience": model.hyperparams.patience,
            "max_epochs": model.hyperparams.max_epochs,
            "seed": model.hyperparams.seed,
            "l2": model.hyperparams.l2,
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload), encoding="utf-8")


def load_text_model(path: str | Path) -> TextModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != TEXT_MODEL_FORMAT:
        raise ValueError(f"unsupported text model format {payload.get('format')!r}")
    vocab_obj = payload["vocabulary"]
    vocabulary = TfidfVocabulary(
        token_to_index={t: i for i, t in enumerate(vocab_obj["tokens"])},
        idf=np.array(vocab_obj["idf"], dtype=np.float64),
        document_count=int(vocab_obj["document_count"]),
    )
    hp = TextHyperparams(**payload["hyperparams"])
    return TextModel(
        vocabulary=vocabulary,
        weights=np.array(payload["weights"], dtype=np.float64).reshape(len(payload["classes"]), -1),
        bias=np.array(payload["bias"], dtype=np.float64),
        classes=[int(c) for c in payload["classes"]],
        hyperparams=hp,
    )
