"""Twin structure, content stratification, and determinism of the rendered
benchmark corpus."""
from __future__ import annotations

import numpy as np
import pytest

from leafclass.corpus import load_manifest, validate_corpus
from leafclass.extraction import ExtractionCache
from leafclass.synthetic import (
    CARD_H,
    CARD_W,
    CLASS_DEFS,
    METHOD_NOISE,
    SYNTHETIC_ENGINE_VERSION,
    _card_content,
    _content_key,
    _rng,
    card_true_text,
    generate_corpus,
    render_card,
    simulate_method_text,
)


# -- class table structure -------------------------------------------------

def test_class_table_shape():
    assert len(CLASS_DEFS) == 20
    assert [c.class_id for c in CLASS_DEFS] == list(range(20))
    names = [c.name for c in CLASS_DEFS]
    assert len(set(names)) == 20


def test_visual_twins_are_reciprocal_and_share_visuals():
    pairs = 0
    for c in CLASS_DEFS:
        if c.visual_twin is None:
            continue
        twin = CLASS_DEFS[c.visual_twin]
        assert twin.visual_twin == c.class_id
        assert twin.color == c.color
        assert twin.product == c.product
        assert twin.serving != c.serving
        # Equal glyph counts keep ink-mass statistics from separating the pair.
        assert len(twin.serving) == len(c.serving)
        pairs += 1
    assert pairs == 16  # 8 pairs, each direction counted once


def test_text_twins_are_reciprocal_and_share_text():
    pairs = 0
    for c in CLASS_DEFS:
        if c.text_twin is None:
            continue
        twin = CLASS_DEFS[c.text_twin]
        assert twin.text_twin == c.class_id
        assert twin.product == c.product
        assert twin.serving == c.serving
        assert twin.color != c.color
        assert card_true_text(c, "1,99", ()) == card_true_text(twin, "1,99", ())
        pairs += 1
    assert pairs == 8  # 4 pairs


def test_control_classes_have_no_twins():
    controls = [c for c in CLASS_DEFS if c.visual_twin is None and c.text_twin is None]
    assert len(controls) == 4
    assert all(c.class_id >= 16 for c in controls)


def test_card_true_text_contents():
    c = CLASS_DEFS[0]
    text = card_true_text(c, "2,49", ("Aktion",))
    assert c.product in text
    assert text.count(c.serving) == 2  # price block and footer repeat
    assert "2,49" in text and "Aktion" in text


# -- content stratification ------------------------------------------------

def test_group_classes_share_price_and_clutter_draws():
    # All four classes of a product group must see identical price/clutter
    # streams at equal (split, index), so token statistics cannot leak class.
    for base in (0, 4, 8, 12):
        group = CLASS_DEFS[base:base + 4]
        for split in ("train", "test"):
            for i in (0, 3, 7):
                keys = {_content_key(c, split, i) for c in group}
                assert len(keys) == 1
                draws = {_card_content(0, k) for c in group for k in [_content_key(c, split, i)]}
                assert len(draws) == 1


def test_control_classes_draw_independently():
    keys = {_content_key(c, "train", 0) for c in CLASS_DEFS[16:]}
    assert len(keys) == 4


def test_card_content_varies_over_index():
    prices = {_card_content(0, _content_key(CLASS_DEFS[0], "train", i))[0]
              for i in range(20)}
    assert len(prices) > 5


def test_card_content_price_format():
    for i in range(30):
        price, clutter = _card_content(1, f"g0-train-{i:03d}")
        euro, cent = price.split(",")
        assert 0 <= int(euro) <= 3
        assert len(cent) == 2
        assert 1 <= len(clutter) <= 2


# -- rendering and method noise --------------------------------------------

def test_render_card_deterministic():
    c = CLASS_DEFS[0]
    a = render_card(c, "1,99", ("Aktion",), _rng(0, "render", "x"))
    b = render_card(c, "1,99", ("Aktion",), _rng(0, "render", "x"))
    assert a.size == (CARD_W, CARD_H)
    assert np.array_equal(np.asarray(a), np.asarray(b))


def test_render_card_differs_between_text_twins():
    a, b = CLASS_DEFS[0], CLASS_DEFS[CLASS_DEFS[0].text_twin]
    img_a = render_card(a, "1,99", (), _rng(0, "render", "x"))
    img_b = render_card(b, "1,99", (), _rng(0, "render", "x"))
    assert not np.array_equal(np.asarray(img_a), np.asarray(img_b))


def test_method_noise_covers_all_eight_methods():
    assert sorted(METHOD_NOISE) == list(range(1, 9))
    for prof in METHOD_NOISE.values():
        assert 0 < prof.p_keep <= 1
        assert 0 <= prof.p_fail < 0.1


def test_simulate_method_text_deterministic():
    text = card_true_text(CLASS_DEFS[0], "1,99", ("Aktion", "Markt"))
    a = simulate_method_text(text, 6, _rng(0, "ocr", "img", 6))
    b = simulate_method_text(text, 6, _rng(0, "ocr", "img", 6))
    assert a == b
    assert a != ""  # p_fail for method 6 is 1%, and this draw survives


def test_simulate_method_text_degrades_but_preserves_most_tokens():
    text = " ".join(["wort"] * 200)
    out = simulate_method_text(text, 6, _rng(0, "ocr", "img", 6))
    kept = sum(1 for t in out.split() if t.startswith("wor") or "wort" in t)
    assert 150 < kept <= 200


# -- corpus generation -----------------------------------------------------

@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny-corpus")
    manifest, cache_path = generate_corpus(root, n_train=2, n_test=1, seed=3)
    return root, manifest, cache_path


def test_generate_corpus_is_structurally_valid(tiny_corpus):
    root, manifest, cache_path = tiny_corpus
    assert len(manifest.records) == 20 * 3
    assert validate_corpus(manifest, expected_train=2, expected_test=1).ok
    reloaded = load_manifest(root / "manifest.jsonl")
    assert reloaded.records == manifest.records
    for rec in manifest.records[:5]:
        assert (root / rec.path).exists()


def test_generate_corpus_populates_extraction_cache(tiny_corpus):
    _, manifest, cache_path = tiny_corpus
    cache = ExtractionCache(cache_path, engine_version=SYNTHETIC_ENGINE_VERSION)
    assert len(cache) == len(manifest.records)
    doc = cache.get(manifest.records[0].image_id)
    assert len(doc.method_texts) == 8
    assert doc.document != ""


def test_generate_corpus_deterministic(tiny_corpus, tmp_path):
    root, manifest, cache_path = tiny_corpus
    again, again_cache = generate_corpus(tmp_path / "again", n_train=2, n_test=1, seed=3)
    assert [r.image_id for r in again.records] == [r.image_id for r in manifest.records]
    sample = manifest.records[7]
    assert (tmp_path / "again" / sample.path).read_bytes() == (root / sample.path).read_bytes()
    a = ExtractionCache(cache_path, engine_version=SYNTHETIC_ENGINE_VERSION)
    b = ExtractionCache(again_cache, engine_version=SYNTHETIC_ENGINE_VERSION)
    assert a.documents() == b.documents()


def test_generate_corpus_seed_changes_content(tiny_corpus, tmp_path):
    root, manifest, _ = tiny_corpus
    other, _ = generate_corpus(tmp_path / "other", n_train=2, n_test=1, seed=4)
    sample = manifest.records[0]
    assert (tmp_path / "other" / sample.path).read_bytes() != (root / sample.path).read_bytes()
