"""Deterministic synthetic promotion-card corpus for end-to-end checks.

Twenty product classes are laid out so the two branches fail in opposite,
controlled ways: eight class pairs share identical card visuals and differ
only in the small printed serving size (image branch blind, text branch
sees it), four class pairs share the printed text and differ only in pack
color (text branch blind, image branch sees it), and four control classes
are unambiguous for both. Per-image extraction output is simulated with
per-method noise profiles and written to a standard extraction cache, so
the full pipeline runs without an OCR engine installed.
"""
from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .corpus import CorpusManifest, ImageRecord, write_manifest
from .extraction import METHODS_VERSION, ExtractedDocument, ExtractionCache

SYNTHETIC_ENGINE_VERSION = "synthetic-ocr/1"

CARD_W, CARD_H = 240, 360

# Ink level of the fixed-position serving line. Light enough that the
# downsampled image branch reads it only unreliably, dark enough that it
# reads it sometimes; the extraction pass always gets it after upscaling.
SERVING_INK = (105, 105, 110)

DEFAULT_TRAIN_PER_CLASS = 30
DEFAULT_TEST_PER_CLASS = 10

# Retailer provenance pools; train and test draw from disjoint pools so the
# per-class disjointness rule holds by construction.
TRAIN_RETAILERS = ("r1", "r2", "r3", "r4", "r5", "r6")
TEST_RETAILERS = ("r7", "r8")

# Price euros span 0-3 and cents the full 00-99 range. The cent part is the
# only piece long enough to tokenize, so a narrow cent pool would hand the
# text branch spurious price-to-class correlations on a corpus this small.
PRICE_EURO_MAX = 3
PRICE_CENT_MAX = 99


@dataclass(frozen=True)
class SyntheticClass:
    class_id: int
    name: str
    product: str
    serving: str
    color: tuple[int, int, int]
    visual_twin: int | None  # same visuals, different serving text
    text_twin: int | None  # same text, different color


# Serving strings within a group are distinct; within a visual pair they have
# equal glyph counts so ink-mass histograms cannot separate the pair.
_GROUPS = (
    ("Joghurt Mild", ("250g", "500g", "150g")),
    ("Kaffee Crema", ("500g", "250g", "750g")),
    ("Apfelsaft Klar", ("750ml", "500ml", "330ml")),
    ("Schoko Keks", ("200g", "300g", "240g")),
)

_GROUP_COLORS = (
    ((196, 60, 54), "rot"),
    ((58, 100, 190), "blau"),
    ((70, 160, 80), "gruen"),
    ((235, 160, 50), "orange"),
    ((140, 80, 170), "lila"),
    ((50, 165, 165), "tuerkis"),
    ((150, 105, 60), "braun"),
    ((225, 120, 160), "rosa"),
)

_CONTROLS = (
    ("Butter Stück", "250g", (90, 90, 95), "grau"),
    ("Vollkorn Brot", "500g + 50g", (100, 130, 60), "oliv"),
    ("Bio Eier", "10er", (40, 60, 110), "navy"),
    ("Mineral Wasser", "12x1l", (200, 200, 70), "gelb"),
)

# Class-independent promo words scattered over the lower band of each card;
# pure nuisance signal for both branches.
_CLUTTER = ("Aktion", "Angebot", "Knüller", "Woche", "Markt", "frisch",
            "Tiefpreis", "Rabatt", "Vorteil", "günstig", "lecker", "regional")


def _slug(text: str) -> str:
    out = text.lower()
    for a, b in (("ä", "ae"), ("ö", "oe"), ("ü", "ue"), ("ß", "ss")):
        out = out.replace(a, b)
    out = out.replace(" + ", "-").replace(" ", "-")
    return out


def _build_classes() -> tuple[SyntheticClass, ...]:
    defs: list[SyntheticClass] = []
    for m, (product, (s_shared, s_alt1, s_alt2)) in enumerate(_GROUPS):
        c_a, name_a = _GROUP_COLORS[2 * m]
        c_b, name_b = _GROUP_COLORS[2 * m + 1]
        base = 4 * m
        # base+0/base+1 share color A; base+2/base+3 share color B;
        # base+0/base+2 share the printed serving text.
        layout = (
            (s_shared, c_a, name_a, base + 1, base + 2),
            (s_alt1, c_a, name_a, base + 0, None),
            (s_shared, c_b, name_b, base + 3, base + 0),
            (s_alt2, c_b, name_b, base + 2, None),
        )
        for offset, (serving, color, color_name, vtwin, ttwin) in enumerate(layout):
            cid = base + offset
            defs.append(SyntheticClass(
                class_id=cid,
                name=f"{_slug(product)}-{_slug(serving)}-{color_name}",
                product=product,
                serving=serving,
                color=color,
                visual_twin=vtwin,
                text_twin=ttwin,
            ))
    for product, serving, color, color_name in _CONTROLS:
        cid = len(defs)
        defs.append(SyntheticClass(
            class_id=cid,
            name=f"{_slug(product)}-{_slug(serving)}-{color_name}",
            product=product,
            serving=serving,
            color=color,
            visual_twin=None,
            text_twin=None,
        ))
    return tuple(defs)


CLASS_DEFS: tuple[SyntheticClass, ...] = _build_classes()


def _rng(seed: int, *parts: object) -> np.random.Generator:
    # Keyed off a content hash, not generation order, so any image can be
    # regenerated in isolation and still match the full run.
    key = "/".join(str(p) for p in (seed, *parts))
    digest = hashlib.blake2s(key.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


_FONT_DIR = Path("/usr/share/fonts/truetype/dejavu")


@lru_cache(maxsize=None)
def _font(size: int, bold: bool = False) -> ImageFont.ImageFont:
    name = "DejaVuSans-Bold.ttf" if bold else "DejaVuSans.ttf"
    try:
        return ImageFont.truetype(str(_FONT_DIR / name), size)
    except OSError:
        return ImageFont.load_default(size=size)


def _jitter_color(color: tuple[int, int, int], rng: np.random.Generator,
                  spread: int) -> tuple[int, int, int]:
    out = np.asarray(color, dtype=np.int64) + rng.integers(-spread, spread + 1, size=3)
    return tuple(int(v) for v in np.clip(out, 0, 255))


def render_card(cdef: SyntheticClass, price: str, clutter: tuple[str, ...],
                rng: np.random.Generator) -> Image.Image:
    """One 240x360 promotion card: colored packshot block, product name,
    price flash, promo clutter, and the serving size in small print.

    The serving line is small and printed in low-contrast ink at a fixed
    position: fully legible to a 4x-upscaling extraction pass, but only a
    faint smudge after a 32x32 downsample. Visually twinned classes
    therefore look almost alike to the image branch, which keeps an
    imperfect hint rather than a clean separation.
    """
    bg = _jitter_color((246, 246, 246), rng, 7)
    img = Image.new("RGB", (CARD_W, CARD_H), bg)
    draw = ImageDraw.Draw(img)

    dx, dy = (int(v) for v in rng.integers(-6, 7, size=2))
    fill = _jitter_color(cdef.color, rng, 12)
    outline = tuple(int(v * 0.55) for v in fill)
    draw.rectangle((28 + dx, 84 + dy, 212 + dx, 256 + dy), fill=fill, outline=outline, width=3)

    draw.text((16, 20), cdef.product, font=_font(24, bold=True), fill=(25, 25, 30))

    px, py = (int(v) for v in rng.integers(-8, 9, size=2))
    draw.text((126 + px, 262 + py), price, font=_font(26, bold=True), fill=(200, 30, 45))

    for word in clutter:
        cx = int(rng.integers(8, 150))
        cy = int(rng.integers(266, 336))
        size = int(12 + rng.integers(5))
        shade = int(rng.integers(90, 150))
        draw.text((cx, cy), word, font=_font(size), fill=(shade, shade, shade))

    draw.text((16, 296), cdef.serving, font=_font(20), fill=SERVING_INK)

    # Pack size repeats in the footer fine print, as on real promo cards.
    fx = int(rng.integers(10, 90))
    fy = int(rng.integers(330, 345))
    draw.text((fx, fy), f"Inhalt: {cdef.serving}", font=_font(int(11 + rng.integers(3))),
              fill=(80, 80, 85))

    # Print-texture speckle plus sensor-style pixel noise.
    xs = rng.integers(0, CARD_W, size=60)
    ys = rng.integers(0, CARD_H, size=60)
    shades = rng.integers(120, 221, size=60)
    for x, y, g in zip(xs, ys, shades):
        draw.point((int(x), int(y)), fill=(int(g), int(g), int(g)))
    arr = np.asarray(img, dtype=np.float64) + rng.normal(0.0, 5.0, (CARD_H, CARD_W, 3))
    return Image.fromarray(np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8))


@dataclass(frozen=True)
class MethodNoise:
    p_keep: float  # per-token survival
    p_char: float  # per-character confusion chance (table characters only)
    junk_rate: float  # Poisson mean of inserted junk tokens
    shuffle: bool  # sparse segmentation modes lose reading order
    p_fail: float  # whole-method empty output


# Noise profiles per extraction method id; the processed variants (5..8) are
# deliberately more reliable than the raw passes, mirroring the measured
# spread between the weakest and strongest ensemble members.
METHOD_NOISE: dict[int, MethodNoise] = {
    1: MethodNoise(0.85, 0.030, 0.15, False, 0.02),
    2: MethodNoise(0.87, 0.025, 0.12, False, 0.02),
    3: MethodNoise(0.82, 0.035, 0.18, True, 0.03),
    4: MethodNoise(0.80, 0.040, 0.18, True, 0.03),
    5: MethodNoise(0.90, 0.022, 0.10, False, 0.01),
    6: MethodNoise(0.94, 0.012, 0.06, False, 0.01),
    7: MethodNoise(0.93, 0.015, 0.08, True, 0.01),
    8: MethodNoise(0.88, 0.022, 0.10, False, 0.02),
}

# Glyph confusions a real engine makes on print.
CONFUSIONS = {
    "0": "O", "O": "0", "5": "S", "S": "5", "1": "I", "I": "1",
    "8": "B", "B": "8", "g": "9", "9": "g", "e": "c", "a": "o",
}


def simulate_method_text(true_text: str, method_id: int, rng: np.random.Generator) -> str:
    """Noisy single-method reading of a card's printed text."""
    prof = METHOD_NOISE[method_id]
    if rng.random() < prof.p_fail:
        return ""
    tokens: list[str] = []
    for tok in true_text.split():
        if rng.random() >= prof.p_keep:
            continue
        chars = []
        for ch in tok:
            if ch in CONFUSIONS and rng.random() < prof.p_char:
                chars.append(CONFUSIONS[ch])
            else:
                chars.append(ch)
        tokens.append("".join(chars))
    for _ in range(int(rng.poisson(prof.junk_rate))):
        length = 2 + int(rng.integers(3))
        junk = "".join(string.ascii_lowercase[int(i)] for i in rng.integers(0, 26, size=length))
        tokens.insert(int(rng.integers(len(tokens) + 1)), junk)
    if prof.shuffle and len(tokens) > 1:
        tokens = [tokens[int(i)] for i in rng.permutation(len(tokens))]
    return " ".join(tokens)


def card_true_text(cdef: SyntheticClass, price: str, clutter: tuple[str, ...]) -> str:
    return " ".join([cdef.product, cdef.serving, "je", price, "€",
                     "Inhalt", cdef.serving, *clutter])


def _content_key(cdef: SyntheticClass, split: str, index: int) -> str:
    """Key for the price/clutter draw. Classes of one product group share the
    draw at equal (split, index), so their corpora carry identical price and
    clutter token multisets. Without this, rare price tokens pick up
    accidental class correlations that a 30-image training split cannot
    average away, and the text branch learns them."""
    if cdef.class_id < 4 * len(_GROUPS):
        return f"g{cdef.class_id // 4}-{split}-{index:03d}"
    return f"c{cdef.class_id}-{split}-{index:03d}"


def _card_content(seed: int, content_key: str) -> tuple[str, tuple[str, ...]]:
    """Price and promo clutter for one card; independent of render noise."""
    rng = _rng(seed, "content", content_key)
    euro = int(rng.integers(PRICE_EURO_MAX + 1))
    cent = int(rng.integers(PRICE_CENT_MAX + 1))
    price = f"{euro},{cent:02d}"
    n_clutter = 1 + int(rng.integers(2))
    clutter = tuple(_CLUTTER[int(i)] for i in rng.integers(0, len(_CLUTTER), size=n_clutter))
    return price, clutter


def generate_corpus(
    root: str | Path,
    n_train: int = DEFAULT_TRAIN_PER_CLASS,
    n_test: int = DEFAULT_TEST_PER_CLASS,
    seed: int = 0,
) -> tuple[CorpusManifest, Path]:
    """Render the full corpus under `root`: images/, manifest.jsonl, and a
    pre-populated extraction cache (ocr-cache.jsonl). Returns the manifest
    and the cache path. Fully determined by (n_train, n_test, seed)."""
    root = Path(root)
    images_dir = root / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    records: list[ImageRecord] = []
    true_texts: dict[str, str] = {}
    for cdef in CLASS_DEFS:
        for split, count, pool in (("train", n_train, TRAIN_RETAILERS),
                                   ("test", n_test, TEST_RETAILERS)):
            for i in range(count):
                image_id = f"syn-{cdef.class_id:02d}-{split}-{i:03d}"
                price, clutter = _card_content(seed, _content_key(cdef, split, i))
                img = render_card(cdef, price, clutter, _rng(seed, "render", image_id))
                rel = f"images/{image_id}.png"
                img.save(root / rel, format="PNG")
                records.append(ImageRecord(
                    image_id=image_id,
                    class_id=cdef.class_id,
                    split=split,
                    retailer_id=pool[i % len(pool)],
                    path=rel,
                    width=CARD_W,
                    height=CARD_H,
                ))
                true_texts[image_id] = card_true_text(cdef, price, clutter)

    manifest = CorpusManifest(classes=[c.name for c in CLASS_DEFS], records=records, root=root)
    write_manifest(manifest, root / "manifest.jsonl")

    cache_path = root / "ocr-cache.jsonl"
    cache = ExtractionCache(cache_path, engine_version=SYNTHETIC_ENGINE_VERSION,
                            methods_version=METHODS_VERSION)
    for rec in records:
        texts = [simulate_method_text(true_texts[rec.image_id], mid,
                                      _rng(seed, "ocr", rec.image_id, mid))
                 for mid in sorted(METHOD_NOISE)]
        cache.append(ExtractedDocument.build(rec.image_id, texts,
                                             SYNTHETIC_ENGINE_VERSION, METHODS_VERSION))
    return manifest, cache_path
