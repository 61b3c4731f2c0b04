from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import SMALL
from vlgrasp.geometry import BBox2D
from vlgrasp.reg import (MAX_TOKENS, Directive, Disambiguation, Lexicon, LexiconError, Query, SceneView,
                         UndistinguishableError, UnparseableError, analyze_ambiguity, default_lexicon,
                         generate_expression, normalize, parse_directive, strip_required, verify_unique)
from vlgrasp.scene import ObjectSummary, SceneConfig, generate_scene, render

LEX = default_lexicon()


def obj(oid, cat, x, color="red", size="medium", depth=1.0, w=20):
    mask = np.zeros((10, 10), dtype=bool)
    return ObjectSummary(oid, cat, {"color": color, "size": size}, BBox2D(x, 50, w, 20), mask, depth, 100)


def view(*objs, layout="table"):
    return SceneView(tuple(objs), layout)


def test_sole_object_needs_nothing():
    v = view(obj(1, "banana", 10), obj(2, "apple", 100))
    assert analyze_ambiguity(v, 1) == Disambiguation()
    assert not analyze_ambiguity(v, 1)


def test_color_distinguishes():
    v = view(obj(1, "apple", 10, "red"), obj(2, "apple", 100, "green"))
    assert analyze_ambiguity(v, 1) == Disambiguation(("color",), None)


def test_position_distinguishes_twins():
    v = view(obj(1, "apple", 10), obj(2, "apple", 100))
    assert analyze_ambiguity(v, 1) == Disambiguation((), "leftmost")
    assert analyze_ambiguity(v, 2) == Disambiguation((), "rightmost")


def test_undistinguishable_twins():
    v = view(obj(1, "apple", 10), obj(2, "apple", 10))
    with pytest.raises(UndistinguishableError):
        analyze_ambiguity(v, 1)
    with pytest.raises(UndistinguishableError):
        generate_expression(v, 1, LEX)


def test_middle_and_depth_predicates():
    v = view(obj(1, "cup", 10, depth=1.0), obj(2, "cup", 50, depth=0.8), obj(3, "cup", 90, depth=1.2))
    need = analyze_ambiguity(v, 2)
    assert need.location in ("middle", "nearest")
    assert verify_unique(v, Query("cup", (), "middle"), 2)
    assert verify_unique(v, Query("cup", (), "nearest"), 2)
    assert verify_unique(v, Query("cup", (), "farthest"), 3)


def test_generation_deterministic():
    v = view(obj(1, "cup", 10), obj(2, "apple", 60))
    assert generate_expression(v, 1, LEX, seed=5) == generate_expression(v, 1, LEX, seed=5)


def test_same_color_twins_get_location_phrase():
    v = view(obj(1, "apple", 10), obj(2, "apple", 100))
    for seed in range(50):
        d = generate_expression(v, 1, LEX, seed=seed)
        assert d.query.location == "leftmost"
        assert any(" ".join(normalize(ph)) in " ".join(d.tokens) for ph in LEX.locations["leftmost"])


def test_token_cap_over_many_seeds():
    v = view(obj(1, "vitamin_bottle", 10, "white", "small"), obj(2, "vitamin_bottle", 60, "white", "large"),
             obj(3, "vitamin_bottle", 120, "orange", "small"))
    for seed in range(10_000):
        assert len(generate_expression(v, 1, LEX, seed=seed).tokens) <= MAX_TOKENS


def test_parse_example():
    assert parse_directive("pass me the red apple on the left", LEX) == Query("apple", (("color", "red"),), "leftmost")


def test_parse_out_of_grammar():
    with pytest.raises(UnparseableError):
        parse_directive("flibber the zorp", LEX)


def test_verify_unique_examples():
    v = view(obj(1, "apple", 10), obj(2, "apple", 100), obj(3, "cup", 50))
    assert verify_unique(v, Query("cup"))
    assert not verify_unique(v, Query("apple"))
    assert verify_unique(v, Directive("the apple on the left", parse_directive("the apple on the left", LEX)))
    assert verify_unique(v, Query("apple", (), "leftmost"), target_id=1)
    assert not verify_unique(v, Query("apple", (), "leftmost"), target_id=2)


def test_location_removal_breaks_uniqueness():
    v = view(obj(1, "apple", 10), obj(2, "apple", 100))
    d = generate_expression(v, 2, LEX, seed=1)
    need = analyze_ambiguity(v, 2)
    assert verify_unique(v, d, 2)
    assert not verify_unique(v, d.query.without(location=True))
    assert not verify_unique(v, strip_required(d.query, need))


@given(st.integers(0, 5000), st.integers(0, 100))
@settings(max_examples=60, deadline=None)
def test_generated_scenes_sound_and_round_trip(scene_seed, gen_seed):
    sc = generate_scene(SceneConfig(intrinsics=SMALL), scene_seed)
    v = SceneView.from_frame(sc, render(sc))
    for o in v.objects:
        try:
            d = generate_expression(v, o.id, LEX, seed=gen_seed)
        except UndistinguishableError:
            continue
        assert verify_unique(v, d, o.id)
        assert parse_directive(d.text, LEX) == d.query
        assert len(d.tokens) <= MAX_TOKENS


def test_default_lexicon_shape():
    assert len(LEX.templates) == 66
    assert len(LEX.source_sha256) == 64
    assert set(LEX.objects) >= {"apple", "banana", "cup"}


def test_lexicon_validation():
    base = {"templates": ["grab the {obj}"], "objects": {"apple": ["apple"]},
            "attributes": {"color": {"red": ["red"]}}, "locations": {"leftmost": ["on the left"]}}
    Lexicon.from_dict(base)
    with pytest.raises(LexiconError):
        Lexicon.from_dict({**base, "templates": ["no slot here"]})
    with pytest.raises(LexiconError):
        Lexicon.from_dict({**base, "locations": {"upside_down": ["flipped"]}})
    with pytest.raises(LexiconError):
        Lexicon.from_dict({**base, "attributes": {"color": {"red": ["apple"]}}})


def test_query_dict_round_trip():
    q = Query("apple", {"size": "small", "color": "red"}, "on_table")
    assert Query.from_dict(q.to_dict()) == q
    assert q.attributes == (("color", "red"), ("size", "small"))
