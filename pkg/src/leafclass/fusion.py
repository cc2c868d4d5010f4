"""Late fusion of the two branches: softmax each branch's emitted scores,
stack them with a text-side weight, and label confidence by argmax agreement.

The text branch's calibrated probabilities are deliberately softmaxed again
before stacking; this compresses their range, which is exactly what the text
weight compensates for. Ties break toward the lowest class index everywhere,
so outputs are deterministic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_TEXT_WEIGHT = 2.0
DEFAULT_TOP_K = 3

CONFIDENCE_HIGH = "high"
CONFIDENCE_LOW = "low"


def softmax(scores: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max-subtracted)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("softmax of empty vector")
    if not np.all(np.isfinite(scores)):
        raise ValueError("softmax input must be finite")
    shifted = scores - scores.max()
    e = np.exp(shifted)
    return e / e.sum()


def fuse(p_image: np.ndarray, p_text: np.ndarray, w_text: float) -> np.ndarray:
    """(p_image + w_text * p_text) / (1 + w_text); stays a probability
    vector for normalized inputs."""
    p_image = np.asarray(p_image, dtype=np.float64)
    p_text = np.asarray(p_text, dtype=np.float64)
    if p_image.shape != p_text.shape:
        raise ValueError(f"branch vector lengths differ: {p_image.shape} vs {p_text.shape}")
    if w_text <= 0:
        raise ValueError(f"text weight must be > 0, got {w_text}")
    return (p_image + w_text * p_text) / (1.0 + w_text)


def label_confidence(p_image: np.ndarray, p_text: np.ndarray) -> str:
    """"high" iff the branch argmaxes agree (ties resolve to the lowest
    index on each side before comparison)."""
    p_image = np.asarray(p_image)
    p_text = np.asarray(p_text)
    if p_image.shape != p_text.shape:
        raise ValueError(f"branch vector lengths differ: {p_image.shape} vs {p_text.shape}")
    return CONFIDENCE_HIGH if int(np.argmax(p_image)) == int(np.argmax(p_text)) else CONFIDENCE_LOW


def top_k(p: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top-k (class_id, probability) pairs, descending by probability, ties
    ascending by class_id."""
    p = np.asarray(p, dtype=np.float64)
    if not 1 <= k <= p.size:
        raise ValueError(f"k must be in 1..{p.size}, got {k}")
    order = np.argsort(-p, kind="stable")  # stable: equal probs keep ascending index order
    return [(int(i), float(p[i])) for i in order[:k]]


@dataclass
class PredictionRecord:
    image_id: str
    predicted_class: int
    argmax_image: int
    argmax_text: int
    confidence: str
    top_k: list[tuple[int, float]]
    text_weight: float
    p_image: np.ndarray | None = None
    p_text: np.ndarray | None = None
    p_combined: np.ndarray | None = None


def predict_record(
    image_id: str,
    image_scores: np.ndarray,
    text_scores: np.ndarray,
    w_text: float = DEFAULT_TEXT_WEIGHT,
    k: int = DEFAULT_TOP_K,
) -> PredictionRecord:
    """Run one image through the combination step: softmax each branch's
    emitted scores, fuse, rank."""
    p_image = softmax(image_scores)
    p_text = softmax(text_scores)
    p_combined = fuse(p_image, p_text, w_text)
    ranked = top_k(p_combined, k)
    return PredictionRecord(
        image_id=image_id,
        predicted_class=ranked[0][0],
        argmax_image=int(np.argmax(p_image)),
        argmax_text=int(np.argmax(p_text)),
        confidence=label_confidence(p_image, p_text),
        top_k=ranked,
        text_weight=w_text,
        p_image=p_image,
        p_text=p_text,
        p_combined=p_combined,
    )


PREDICTIONS_FORMAT = "predictions/1"


def write_predictions(
    records: Iterable[PredictionRecord],
    path: str | Path,
    n_classes: int,
    include_probs: bool = True,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"type": "header", "format": PREDICTIONS_FORMAT,
                             "n_classes": n_classes}) + "\n")
        for rec in records:
            row = {
                "type": "prediction",
                "image_id": rec.image_id,
                "predicted_class": rec.predicted_class,
                "argmax_image": rec.argmax_image,
                "argmax_text": rec.argmax_text,
                "confidence": rec.confidence,
                "top_k": [[c, p] for c, p in rec.top_k],
                "text_weight": rec.text_weight,
            }
            if include_probs and rec.p_combined is not None:
                row["p_image"] = rec.p_image.tolist()
                row["p_text"] = rec.p_text.tolist()
                row["p_combined"] = rec.p_combined.tolist()
            fh.write(json.dumps(row) + "\n")


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    path = Path(path)
    records: list[PredictionRecord] = []
    saw_header = False
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            kind = obj.get("type")
            if kind == "header":
                if obj.get("format") != PREDICTIONS_FORMAT:
                    raise ValueError(f"unsupported predictions format {obj.get('format')!r}")
                saw_header = True
            elif kind == "prediction":
                records.append(PredictionRecord(
                    image_id=str(obj["image_id"]),
                    predicted_class=int(obj["predicted_class"]),
                    argmax_image=int(obj["argmax_image"]),
                    argmax_text=int(obj["argmax_text"]),
                    confidence=str(obj["confidence"]),
                    top_k=[(int(c), float(p)) for c, p in obj["top_k"]],
                    text_weight=float(obj["text_weight"]),
                    p_image=np.array(obj["p_image"]) if "p_image" in obj else None,
                    p_text=np.array(obj["p_text"]) if "p_text" in obj else None,
                    p_combined=np.array(obj["p_combined"]) if "p_combined" in obj else None,
                ))
            else:
                raise ValueError(f"{path}:{lineno}: unknown record type {kind!r}")
    if not saw_header:
        raise ValueError(f"{path}: missing header line")
    return records
