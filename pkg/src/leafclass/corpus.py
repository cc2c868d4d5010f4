"""Dataset manifest: loading, structural validation, and image sizing.

The corpus is described by an explicit JSON Lines manifest (header line with
the class table, then one line per image) so split membership and retailer
provenance stay auditable. Validation never fails fast: every violated rule
is collected into a report.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

MANIFEST_VERSION = "1"
MIN_WIDTH = 92
MIN_HEIGHT = 138
MAX_LONGER_EDGE = 512
DEFAULT_TRAIN_PER_CLASS = 40
DEFAULT_TEST_PER_CLASS = 10

SPLITS = ("train", "test")

# Retailer id that opts a record out of the per-class disjointness rule
# (used when provenance is not known for a source).
UNKNOWN_RETAILER = "unknown"


class ManifestError(Exception):
    """Raised when a manifest file cannot be parsed; carries the line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    class_id: int
    split: str
    retailer_id: str
    path: str
    width: int
    height: int


@dataclass
class CorpusManifest:
    classes: list[str]
    records: list[ImageRecord]
    version: str = MANIFEST_VERSION
    root: Path = field(default_factory=Path)

    def resolve_path(self, record: ImageRecord) -> Path:
        return self.root / record.path

    def by_split(self, split: str) -> list[ImageRecord]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [r for r in self.records if r.split == split]

    def truth(self) -> dict[str, int]:
        return {r.image_id: r.class_id for r in self.records}


@dataclass(frozen=True)
class Violation:
    rule_id: str
    subject: str  # image_id for record-level rules, class id as str otherwise
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def render(self) -> str:
        if self.ok:
            return "ok: no violations"
        lines = [f"{len(self.violations)} violation(s):"]
        for v in self.violations:
            lines.append(f"  [{v.rule_id}] {v.subject}: {v.message}")
        return "\n".join(lines)


_RECORD_FIELDS = ("image_id", "class_id", "split", "retailer_id", "path", "width", "height")


def load_manifest(path: str | Path) -> CorpusManifest:
    """Parse a JSON Lines manifest. Structural semantics are NOT checked here;
    use validate_corpus for that."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    classes: list[str] | None = None
    version = MANIFEST_VERSION
    records: list[ImageRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON ({exc.msg})", lineno) from exc
            kind = obj.get("type")
            if kind == "header":
                if classes is not None:
                    raise ManifestError("duplicate header line", lineno)
                if "classes" not in obj:
                    raise ManifestError("header missing 'classes'", lineno)
                classes = [str(c) for c in obj["classes"]]
                version = str(obj.get("version", MANIFEST_VERSION))
            elif kind == "image":
                if classes is None:
                    raise ManifestError("image record before header", lineno)
                missing = [k for k in _RECORD_FIELDS if k not in obj]
                if missing:
                    raise ManifestError(f"missing required field(s): {', '.join(missing)}", lineno)
                split = obj["split"]
                if split not in SPLITS:
                    raise ManifestError(f"unknown split value {split!r}", lineno)
                records.append(
                    ImageRecord(
                        image_id=str(obj["image_id"]),
                        class_id=int(obj["class_id"]),
                        split=split,
                        retailer_id=str(obj["retailer_id"]),
                        path=str(obj["path"]),
                        width=int(obj["width"]),
                        height=int(obj["height"]),
                    )
                )
            else:
                raise ManifestError(f"unknown record type {kind!r}", lineno)
    if classes is None:
        raise ManifestError("manifest has no header line")
    return CorpusManifest(classes=classes, records=records, version=version, root=path.parent)


def write_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"type": "header", "version": manifest.version, "classes": manifest.classes}) + "\n")
        for r in manifest.records:
            fh.write(
                json.dumps(
                    {
                        "type": "image",
                        "image_id": r.image_id,
                        "class_id": r.class_id,
                        "split": r.split,
                        "retailer_id": r.retailer_id,
                        "path": r.path,
                        "width": r.width,
                        "height": r.height,
                    }
                )
                + "\n"
            )


def validate_corpus(
    manifest: CorpusManifest,
    expected_train: int = DEFAULT_TRAIN_PER_CLASS,
    expected_test: int = DEFAULT_TEST_PER_CLASS,
) -> ValidationReport:
    """Check every structural invariant and report all violations.

    Rules: unknown_class, duplicate_image_id, min_resolution, max_edge,
    split_counts, retailer_disjoint. Ordering is deterministic: by class id,
    then image id (class-level rules sort before that class's records).
    """
    violations: list[tuple[int, str, Violation]] = []
    n_classes = len(manifest.classes)

    seen_ids: dict[str, ImageRecord] = {}
    for r in manifest.records:
        if r.class_id < 0 or r.class_id >= n_classes:
            violations.append(
                (r.class_id, r.image_id,
                 Violation("unknown_class", r.image_id,
                           f"class_id {r.class_id} not in class table of size {n_classes}"))
            )
        if r.image_id in seen_ids:
            violations.append(
                (r.class_id, r.image_id,
                 Violation("duplicate_image_id", r.image_id, "image_id occurs more than once"))
            )
        else:
            seen_ids[r.image_id] = r
        if r.width < MIN_WIDTH or r.height < MIN_HEIGHT:
            violations.append(
                (r.class_id, r.image_id,
                 Violation("min_resolution", r.image_id,
                           f"{r.width}x{r.height} below minimum {MIN_WIDTH}x{MIN_HEIGHT}"))
            )
        if max(r.width, r.height) > MAX_LONGER_EDGE:
            violations.append(
                (r.class_id, r.image_id,
                 Violation("max_edge", r.image_id,
                           f"longer edge {max(r.width, r.height)} exceeds {MAX_LONGER_EDGE}"))
            )

    by_class: dict[int, list[ImageRecord]] = {}
    for r in manifest.records:
        by_class.setdefault(r.class_id, []).append(r)

    for class_id in range(n_classes):
        recs = by_class.get(class_id, [])
        counts = {"train": 0, "test": 0}
        retailers: dict[str, set[str]] = {"train": set(), "test": set()}
        for r in recs:
            counts[r.split] += 1
            retailers[r.split].add(r.retailer_id)
        for split, expected in (("train", expected_train), ("test", expected_test)):
            if counts[split] != expected:
                violations.append(
                    (class_id, "",
                     Violation("split_counts", str(class_id),
                               f"{split} has {counts[split]} records, expected {expected}"))
                )
        overlap = sorted((retailers["train"] & retailers["test"]) - {UNKNOWN_RETAILER})
        if overlap:
            violations.append(
                (class_id, "",
                 Violation("retailer_disjoint", str(class_id),
                           f"retailer(s) {', '.join(overlap)} appear in both train and test"))
            )

    violations.sort(key=lambda t: (t[0], t[1], t[2].rule_id))
    return ValidationReport(violations=[v for _, _, v in violations])


def load_image(path: str | Path) -> Image.Image:
    """Decode a PNG/JPEG into an RGB image."""
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"cannot decode image {path}: {exc}") from exc


def resize_longest_edge(img: Image.Image, target: int) -> Image.Image:
    """Scale so the longer edge equals `target` (bilinear, aspect preserved).

    Idempotent: an image whose longer edge already equals `target` is
    returned unchanged.
    """
    if target <= 0:
        raise ValueError(f"target must be positive, got {target}")
    w, h = img.size
    if w == 0 or h == 0:
        raise ValueError("cannot resize zero-dimension image")
    longer = max(w, h)
    if longer == target:
        return img
    scale = target / longer
    if w >= h:
        new_w, new_h = target, max(1, math.floor(h * scale + 0.5))
    else:
        new_w, new_h = max(1, math.floor(w * scale + 0.5)), target
    return img.resize((new_w, new_h), Image.Resampling.BILINEAR)
