"""Text extraction ensemble: eight preprocessing/PSM method variants run
through an external OCR engine, concatenated into one document per image.

The engine is invoked as a subprocess per (image, method) so the core stays
free of native bindings and the adapter can be replaced (tests use a stub
executable). Extraction is expensive at corpus scale, so results are cached
in an append-only JSON Lines file keyed by (image_id, engine_version,
methods_version); rows written under other versions are ignored on read.
"""
from __future__ import annotations

import json
import logging
import subprocess
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .corpus import CorpusManifest, load_image, resize_longest_edge

log = logging.getLogger(__name__)

VALID_PSMS = (3, 6, 11, 12)

# Version tag for the canonical method table below; bump when the table changes.
METHODS_VERSION = "m8.1"

# Longer-edge size extraction runs at (text legibility beats feature size here;
# the classification branch uses the 256 variant instead).
EXTRACTION_EDGE = 512

DEFAULT_LANGUAGES = "deu+eng"
DEFAULT_TIMEOUT_S = 30.0


@dataclass(frozen=True)
class ExtractionMethodSpec:
    method_id: int
    grayscale: bool
    upscale_factor: int
    otsu_binarize: bool
    psm: int

    def __post_init__(self):
        if self.upscale_factor not in (1, 4):
            raise ValueError(f"upscale_factor must be 1 or 4, got {self.upscale_factor}")
        if self.otsu_binarize and not self.grayscale:
            raise ValueError("otsu_binarize requires grayscale")
        if self.psm not in VALID_PSMS:
            raise ValueError(f"psm must be one of {VALID_PSMS}, got {self.psm}")


#: The canonical eight-method ensemble, in method_id order: four raw passes
#: over different page segmentation modes, a grayscale pass, two grayscale
#: 4x-upscaled passes, and a grayscale 4x-upscaled Otsu-binarized pass.
CANONICAL_METHODS: tuple[ExtractionMethodSpec, ...] = (
    ExtractionMethodSpec(1, grayscale=False, upscale_factor=1, otsu_binarize=False, psm=3),
    ExtractionMethodSpec(2, grayscale=False, upscale_factor=1, otsu_binarize=False, psm=6),
    ExtractionMethodSpec(3, grayscale=False, upscale_factor=1, otsu_binarize=False, psm=11),
    ExtractionMethodSpec(4, grayscale=False, upscale_factor=1, otsu_binarize=False, psm=12),
    ExtractionMethodSpec(5, grayscale=True, upscale_factor=1, otsu_binarize=False, psm=3),
    ExtractionMethodSpec(6, grayscale=True, upscale_factor=4, otsu_binarize=False, psm=6),
    ExtractionMethodSpec(7, grayscale=True, upscale_factor=4, otsu_binarize=False, psm=11),
    ExtractionMethodSpec(8, grayscale=True, upscale_factor=4, otsu_binarize=True, psm=11),
)


class EngineNotFoundError(Exception):
    """The OCR engine binary is missing; fatal with an install hint."""


class CacheError(Exception):
    pass


def join_method_texts(method_texts: Sequence[str]) -> str:
    """Single-space join of the non-empty method outputs, in method order.
    Duplicate text across methods is deliberately preserved."""
    return " ".join(t for t in method_texts if t)


@dataclass(frozen=True)
class ExtractedDocument:
    image_id: str
    method_texts: tuple[str, ...]
    document: str
    engine_version: str
    methods_version: str

    @classmethod
    def build(cls, image_id: str, method_texts: Sequence[str], engine_version: str,
              methods_version: str = METHODS_VERSION) -> "ExtractedDocument":
        texts = tuple(method_texts)
        return cls(image_id=image_id, method_texts=texts,
                   document=join_method_texts(texts),
                   engine_version=engine_version, methods_version=methods_version)


def otsu_threshold(gray: np.ndarray) -> int:
    """Global threshold maximizing inter-class variance over the 0..255 histogram."""
    hist = np.bincount(gray.reshape(-1), minlength=256).astype(np.float64)
    total = hist.sum()
    if total == 0:
        raise ValueError("empty image")
    w0 = np.cumsum(hist)
    w1 = total - w0
    moments = np.cumsum(hist * np.arange(256))
    total_moment = moments[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = moments / w0
        mu1 = (total_moment - moments) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0
    return int(np.argmax(between))


def preprocess(img: Image.Image, spec: ExtractionMethodSpec) -> Image.Image:
    """Apply the spec's steps in order: grayscale, 4x bilinear upscale, Otsu
    binarization (output values 0/255). All flags off is the identity."""
    w, h = img.size
    if w == 0 or h == 0:
        raise ValueError("cannot preprocess zero-dimension image")
    out = img
    if spec.grayscale:
        out = out.convert("L")
    if spec.upscale_factor != 1:
        out = out.resize((out.width * spec.upscale_factor, out.height * spec.upscale_factor),
                         Image.Resampling.BILINEAR)
    if spec.otsu_binarize:
        arr = np.asarray(out, dtype=np.uint8)
        t = otsu_threshold(arr)
        out = Image.fromarray(((arr > t).astype(np.uint8) * 255), mode="L")
    return out


@dataclass(frozen=True)
class EngineConfig:
    binary: str = "tesseract"
    languages: str = DEFAULT_LANGUAGES
    timeout_s: float = DEFAULT_TIMEOUT_S


_version_cache: dict[str, str] = {}


def probe_engine_version(config: EngineConfig) -> str:
    """First line of the engine's --version output; raises EngineNotFoundError
    when the binary is not installed."""
    if config.binary in _version_cache:
        return _version_cache[config.binary]
    try:
        proc = subprocess.run(
            [config.binary, "--version"], capture_output=True, text=True, timeout=10.0
        )
    except FileNotFoundError as exc:
        raise EngineNotFoundError(
            f"OCR engine {config.binary!r} not found; install tesseract-ocr "
            f"(e.g. apt install tesseract-ocr tesseract-ocr-deu) or point "
            f"--engine at a compatible binary"
        ) from exc
    out = (proc.stdout or proc.stderr).strip().splitlines()
    version = out[0].strip() if out else config.binary
    _version_cache[config.binary] = version
    return version


def normalize_engine_text(text: str) -> str:
    """Collapse the engine's line breaks and whitespace runs to single spaces."""
    return " ".join(text.split())


def ocr_extract(img: Image.Image, psm: int, config: EngineConfig = EngineConfig()) -> str:
    """Run the engine over one preprocessed image with the given page
    segmentation mode. Engine failures on a single image are recoverable and
    yield an empty string; a missing binary is fatal."""
    if psm not in VALID_PSMS:
        raise ValueError(f"psm must be one of {VALID_PSMS}, got {psm}")
    with tempfile.NamedTemporaryFile(suffix=".png", delete=False) as tmp:
        tmp_path = Path(tmp.name)
    try:
        img.save(tmp_path, format="PNG")
        cmd = [config.binary, str(tmp_path), "stdout", "--psm", str(psm), "-l", config.languages]
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=config.timeout_s)
        except FileNotFoundError as exc:
            raise EngineNotFoundError(
                f"OCR engine {config.binary!r} not found; install tesseract-ocr "
                f"or point --engine at a compatible binary"
            ) from exc
        except subprocess.TimeoutExpired:
            log.warning("OCR timed out after %.0fs (psm=%d); treating as empty", config.timeout_s, psm)
            return ""
        if proc.returncode != 0:
            log.warning("OCR engine exited %d (psm=%d): %s", proc.returncode, psm,
                        proc.stderr.strip()[:200])
            return ""
        return normalize_engine_text(proc.stdout)
    finally:
        tmp_path.unlink(missing_ok=True)


class ExtractionCache:
    """Append-only JSON Lines cache of ExtractedDocument rows.

    A header line records the writer's engine/methods versions for
    reproducibility; each row carries its own versions and rows that do not
    match the versions this handle was opened with are ignored on read.
    Appends are serialized through a single lock so concurrent workers can
    hand results to one writer.
    """

    def __init__(self, path: str | Path, engine_version: str,
                 methods_version: str = METHODS_VERSION):
        self.path = Path(path)
        self.engine_version = engine_version
        self.methods_version = methods_version
        self._lock = threading.Lock()
        self._docs: dict[str, ExtractedDocument] = {}
        self._header_written = False
        if self.path.exists():
            self._load()

    @staticmethod
    def read_header_versions(path: str | Path) -> tuple[str, str] | None:
        """(engine_version, methods_version) of the last header line, if any."""
        path = Path(path)
        if not path.exists():
            return None
        found = None
        with path.open("r", encoding="utf-8") as fh:
            for raw in fh:
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError:
                    continue
                if obj.get("type") == "header":
                    found = (str(obj.get("engine_version", "")), str(obj.get("methods_version", "")))
        return found

    def _load(self) -> None:
        with self.path.open("r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise CacheError(f"{self.path}:{lineno}: corrupt cache line ({exc.msg})") from exc
                kind = obj.get("type")
                if kind == "header":
                    if (obj.get("engine_version") == self.engine_version
                            and obj.get("methods_version") == self.methods_version):
                        self._header_written = True
                    continue
                if kind != "doc":
                    raise CacheError(f"{self.path}:{lineno}: unknown record type {kind!r}")
                if (obj.get("engine_version") != self.engine_version
                        or obj.get("methods_version") != self.methods_version):
                    continue  # stale version, ignore
                doc = ExtractedDocument(
                    image_id=str(obj["image_id"]),
                    method_texts=tuple(obj["method_texts"]),
                    document=str(obj["document"]),
                    engine_version=str(obj["engine_version"]),
                    methods_version=str(obj["methods_version"]),
                )
                if doc.document != join_method_texts(doc.method_texts):
                    raise CacheError(
                        f"{self.path}:{lineno}: document does not match joined method_texts "
                        f"for image {doc.image_id!r}"
                    )
                self._docs[doc.image_id] = doc  # duplicates: last wins

    def get(self, image_id: str) -> ExtractedDocument | None:
        return self._docs.get(image_id)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._docs

    def __len__(self) -> int:
        return len(self._docs)

    def image_ids(self) -> list[str]:
        return sorted(self._docs)

    def documents(self) -> dict[str, ExtractedDocument]:
        return dict(self._docs)

    def append(self, doc: ExtractedDocument) -> None:
        if doc.engine_version != self.engine_version or doc.methods_version != self.methods_version:
            raise CacheError("document versions do not match this cache handle")
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                if not self._header_written:
                    fh.write(json.dumps({
                        "type": "header", "format": "ocr-cache/1",
                        "engine_version": self.engine_version,
                        "methods_version": self.methods_version,
                    }) + "\n")
                    self._header_written = True
                fh.write(json.dumps({
                    "type": "doc",
                    "image_id": doc.image_id,
                    "method_texts": list(doc.method_texts),
                    "document": doc.document,
                    "engine_version": doc.engine_version,
                    "methods_version": doc.methods_version,
                }) + "\n")
            self._docs[doc.image_id] = doc


def extract_document(
    img_path: str | Path,
    specs: Sequence[ExtractionMethodSpec] = CANONICAL_METHODS,
    cache: ExtractionCache | None = None,
    config: EngineConfig = EngineConfig(),
    image_id: str | None = None,
    longest_edge: int | None = EXTRACTION_EDGE,
) -> ExtractedDocument:
    """Produce the concatenated document for one image: each method's
    preprocess + engine pass, joined in method order. A cache hit returns
    the stored document without touching the engine."""
    img_path = Path(img_path)
    if image_id is None:
        image_id = img_path.stem
    if cache is not None:
        hit = cache.get(image_id)
        if hit is not None:
            return hit
    img = load_image(img_path)
    if longest_edge is not None:
        img = resize_longest_edge(img, longest_edge)
    engine_version = cache.engine_version if cache is not None else probe_engine_version(config)
    texts = [ocr_extract(preprocess(img, spec), spec.psm, config) for spec in specs]
    doc = ExtractedDocument.build(image_id, texts, engine_version,
                                  cache.methods_version if cache is not None else METHODS_VERSION)
    if cache is not None:
        cache.append(doc)
    return doc


def extract_corpus(
    manifest: CorpusManifest,
    cache: ExtractionCache,
    specs: Sequence[ExtractionMethodSpec] = CANONICAL_METHODS,
    config: EngineConfig = EngineConfig(),
    workers: int = 4,
    records: Iterable | None = None,
) -> tuple[int, int]:
    """Extract every manifest image not already cached, in parallel across a
    bounded worker pool. Results are appended in image_id order so the cache
    contents are deterministic regardless of worker count.

    Returns (n_extracted, n_cache_hits).
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    recs = sorted(records if records is not None else manifest.records, key=lambda r: r.image_id)
    missing = [r for r in recs if r.image_id not in cache]
    hits = len(recs) - len(missing)
    if not missing:
        return 0, hits

    def run_one(rec):
        img = resize_longest_edge(load_image(manifest.resolve_path(rec)), EXTRACTION_EDGE)
        texts = [ocr_extract(preprocess(img, spec), spec.psm, config) for spec in specs]
        return ExtractedDocument.build(rec.image_id, texts, cache.engine_version,
                                       cache.methods_version)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_one, rec) for rec in missing]
        for fut in futures:  # submission order == image_id order
            cache.append(fut.result())
    return len(missing), hits
