"""Normalcy-prior store behavior."""

import json

import pytest

from inspecta.priors import PriorError, PriorNotFound, PriorRecord, PriorStore


def test_add_and_lookup():
    store = PriorStore()
    store.add("pcb", "top", "Traces run parallel with uniform solder joints.")
    rec = store.lookup("pcb", "top")
    assert isinstance(rec, PriorRecord)
    assert rec.text.startswith("Traces run parallel")


def test_category_normalization_on_both_ends():
    store = PriorStore()
    store.add("Metal Nut", "*", "Hex profile with machined top face.")
    assert store.lookup("metal-nut").category == "metal-nut"
    assert store.lookup("METAL_NUT").text.startswith("Hex profile")


def test_wildcard_fallback_for_unknown_view():
    store = PriorStore()
    store.add("cable", "*", "Three insulated cores of equal gauge.")
    store.add("cable", "cross-section", "Cores visible as circles.")
    assert store.lookup("cable", "cross-section").text.startswith("Cores visible")
    assert store.lookup("cable", "side").text.startswith("Three insulated")


def test_miss_raises_prior_not_found():
    store = PriorStore()
    store.add("pcb", "top", "x")
    with pytest.raises(PriorNotFound):
        store.lookup("bottle")
    # view miss with no wildcard entry also misses
    with pytest.raises(PriorNotFound):
        store.lookup("pcb", "bottom")


def test_prior_not_found_is_key_error():
    assert issubclass(PriorNotFound, KeyError)


def test_empty_text_rejected():
    store = PriorStore()
    with pytest.raises(PriorError):
        store.add("pcb", "top", "   ")


def test_overwrite_warns(caplog):
    store = PriorStore()
    store.add("pcb", "top", "first")
    with caplog.at_level("WARNING", logger="inspecta.priors"):
        store.add("pcb", "top", "second")
    assert any("pcb" in rec.message for rec in caplog.records)
    assert store.lookup("pcb", "top").text == "second"


def test_categories_sorted_unique():
    store = PriorStore()
    store.add("zipper", "*", "a")
    store.add("bottle", "*", "b")
    store.add("zipper", "side", "c")
    assert store.categories() == ["bottle", "zipper"]


def test_save_load_round_trip(tmp_path):
    store = PriorStore()
    store.add("pcb", "top", "Traces and pads.")
    store.add("pcb", "*", "General board view.")
    path = tmp_path / "priors.json"
    store.save(path)

    loaded = PriorStore.load(path)
    assert loaded.lookup("pcb", "top").text == "Traces and pads."
    assert loaded.lookup("pcb", "oblique").text == "General board view."


def test_load_accepts_missing_view_as_wildcard(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps([{"category": "tile", "text": "Even speckle."}]))
    store = PriorStore.load(path)
    assert store.lookup("tile", "anything").text == "Even speckle."


@pytest.mark.parametrize(
    "payload",
    [
        '{"category": "x", "text": "y"}',  # not a list
        '[{"text": "missing category"}]',
        '[{"category": "x"}]',
        '[{"category": "x", "text": 5}]',
        "[[1, 2]]",
        "not json at all",
    ],
)
def test_load_malformed_raises(tmp_path, payload):
    path = tmp_path / "bad.json"
    path.write_text(payload)
    with pytest.raises(PriorError):
        PriorStore.load(path)
