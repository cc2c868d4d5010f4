"""Accuracy, Top-k, per-confidence breakdowns, the union-oracle ceiling, and
confusion reporting over prediction files."""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .fusion import CONFIDENCE_HIGH, PredictionRecord


class EvaluationError(Exception):
    pass


@dataclass
class EvaluationReport:
    n: int
    accuracy: float
    top3: float | None
    top5: float | None
    accuracy_high_conf: float | None
    accuracy_low_conf: float | None
    n_high: int
    n_low: int
    oracle_union: float | None
    confusion_pairs: list[tuple[int, int, int]]


def _topk_hit(rec: PredictionRecord, truth_class: int, k: int) -> bool:
    return any(c == truth_class for c, _ in rec.top_k[:k])


def evaluate(
    preds: Sequence[PredictionRecord],
    truth: Mapping[str, int],
) -> EvaluationReport:
    """Score a prediction set against ground truth.

    Top-3/Top-5 use the stored top_k ranking and are reported as absent when
    the ranking is too short; so are subset accuracies over empty subsets
    (0/0 is absent, not 0). The union oracle counts an image correct when
    either branch argmax matches. confusion_pairs is complete (its counts sum
    to the number of misclassified items); use confusion_report for a
    truncated view.
    """
    for rec in preds:
        if rec.image_id not in truth:
            raise EvaluationError(f"no truth entry for image {rec.image_id!r}")
    n = len(preds)
    if n == 0:
        return EvaluationReport(0, 0.0, None, None, None, None, 0, 0, None, [])

    correct = 0
    top3_hits = 0
    top5_hits = 0
    top3_ok = all(len(r.top_k) >= 3 for r in preds)
    top5_ok = all(len(r.top_k) >= 5 for r in preds)
    high = [0, 0]  # [n, correct]
    low = [0, 0]
    union_hits = 0
    confusions: Counter[tuple[int, int]] = Counter()

    for rec in preds:
        t = truth[rec.image_id]
        hit = rec.predicted_class == t
        correct += hit
        if not hit:
            confusions[(t, rec.predicted_class)] += 1
        if top3_ok and _topk_hit(rec, t, 3):
            top3_hits += 1
        if top5_ok and _topk_hit(rec, t, 5):
            top5_hits += 1
        bucket = high if rec.confidence == CONFIDENCE_HIGH else low
        bucket[0] += 1
        bucket[1] += hit
        union_hits += (rec.argmax_image == t) or (rec.argmax_text == t)

    pairs = sorted(confusions.items(), key=lambda kv: (-kv[1], kv[0]))
    return EvaluationReport(
        n=n,
        accuracy=correct / n,
        top3=top3_hits / n if top3_ok else None,
        top5=top5_hits / n if top5_ok else None,
        accuracy_high_conf=high[1] / high[0] if high[0] else None,
        accuracy_low_conf=low[1] / low[0] if low[0] else None,
        n_high=high[0],
        n_low=low[0],
        oracle_union=union_hits / n,
        confusion_pairs=[(t, p, c) for (t, p), c in pairs],
    )


def oracle_union(
    image_argmax: Mapping[str, int],
    text_argmax: Mapping[str, int],
    truth: Mapping[str, int],
) -> float:
    """Fraction of images where either branch's argmax equals the truth:
    the accuracy ceiling any combination of the two branches could reach."""
    ids = set(image_argmax)
    if ids != set(text_argmax):
        raise EvaluationError("image and text prediction id sets differ")
    if ids != set(truth):
        raise EvaluationError("prediction and truth id sets differ")
    if not ids:
        return 0.0
    hits = sum((image_argmax[i] == truth[i]) or (text_argmax[i] == truth[i]) for i in ids)
    return hits / len(ids)


def confusion_report(
    preds: Sequence[PredictionRecord],
    truth: Mapping[str, int],
    limit: int = 20,
) -> list[tuple[int, int, int]]:
    """Misclassifications grouped by (true, predicted), descending count,
    ties ascending by the pair; truncated to limit."""
    confusions: Counter[tuple[int, int]] = Counter()
    for rec in preds:
        t = truth.get(rec.image_id)
        if t is not None and rec.predicted_class != t:
            confusions[(t, rec.predicted_class)] += 1
    pairs = sorted(confusions.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(t, p, c) for (t, p), c in pairs[:limit]]


def _fmt(x: float | None) -> str:
    return f"{x:.4f}" if x is not None else "  n/a"


def render_report(report: EvaluationReport, class_names: Sequence[str] | None = None) -> str:
    lines = [
        f"{'n':<18}{report.n}",
        f"{'accuracy':<18}{_fmt(report.accuracy)}",
        f"{'top-3':<18}{_fmt(report.top3)}",
        f"{'top-5':<18}{_fmt(report.top5)}",
        f"{'high-conf acc':<18}{_fmt(report.accuracy_high_conf)}  (n={report.n_high})",
        f"{'low-conf acc':<18}{_fmt(report.accuracy_low_conf)}  (n={report.n_low})",
        f"{'union oracle':<18}{_fmt(report.oracle_union)}",
    ]
    if report.confusion_pairs:
        lines.append("top confusions (true -> predicted: count):")
        for t, p, c in report.confusion_pairs:
            tn = class_names[t] if class_names and 0 <= t < len(class_names) else str(t)
            pn = class_names[p] if class_names and 0 <= p < len(class_names) else str(p)
            lines.append(f"  {tn} -> {pn}: {c}")
    return "\n".join(lines)


def report_to_json(report: EvaluationReport) -> dict:
    return {
        "n": report.n,
        "accuracy": report.accuracy,
        "top3": report.top3,
        "top5": report.top5,
        "accuracy_high_conf": report.accuracy_high_conf,
        "accuracy_low_conf": report.accuracy_low_conf,
        "n_high": report.n_high,
        "n_low": report.n_low,
        "oracle_union": report.oracle_union,
        "confusion_pairs": [[t, p, c] for t, p, c in report.confusion_pairs],
    }


def write_report_json(report: EvaluationReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report_to_json(report), indent=2) + "\n", encoding="utf-8")


def write_confusion_csv(pairs: Sequence[tuple[int, int, int]], path: str | Path,
                        class_names: Sequence[str] | None = None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true_class", "predicted_class", "count", "true_name", "predicted_name"])
        for t, p, c in pairs:
            tn = class_names[t] if class_names and 0 <= t < len(class_names) else ""
            pn = class_names[p] if class_names and 0 <= p < len(class_names) else ""
            writer.writerow([t, p, c, tn, pn])
