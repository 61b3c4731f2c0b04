"""Referring-expression generation over a closed template grammar.

A directive is ``template(attributes + object + location)``: a sentence
template with an object slot, filled with optional attribute phrases, one
object synonym and an optional location phrase. The same lexicon drives a
longest-match parser so that every generated directive parses back to the
structured query it was generated from.

Location predicates are evaluated inside the *group* of visible objects
that match the query's category and attributes:

* ``leftmost`` / ``rightmost``: strict extreme of the bbox-center image x.
* ``middle``: the median by bbox-center x of an odd-sized group.
* ``nearest`` / ``farthest``: strict extreme of the mean visible depth.
* ``on_<layout>``: holds for every object of a scene with that layout.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .scene import LAYOUTS, ObjectSummary, RenderedFrame, Scene, _load_asset, object_summaries

MAX_TOKENS = 30
ATTRIBUTE_KINDS = ("size", "color")  # realization order before the noun
SEARCH_KINDS = ("color", "size")     # disambiguation priority
RELATIVE_LOCATIONS = ("leftmost", "rightmost", "middle", "nearest", "farthest")
LAYOUT_LOCATIONS = tuple(f"on_{name}" for name in LAYOUTS)


class RegError(ValueError):
    pass


class UndistinguishableError(RegError):
    """No combination of attributes and one location singles out the target."""


class UnparseableError(RegError):
    def __init__(self, message: str, partial: "Query | dict"):
        super().__init__(message)
        self.partial = partial


class LexiconError(RegError):
    pass


def normalize(text: str) -> list[str]:
    return re.sub(r"[^a-z0-9']+", " ", text.lower()).split()


# -- lexicon ----------------------------------------------------------------

@dataclass(frozen=True)
class Template:
    text: str
    prefix: tuple[str, ...]
    suffix: tuple[str, ...]

    def fill(self, middle: str) -> str:
        return self.text.replace("{obj}", middle)


@dataclass(frozen=True, eq=False)
class Lexicon:
    templates: tuple[Template, ...]
    objects: Mapping[str, tuple[str, ...]]
    attributes: Mapping[str, Mapping[str, tuple[str, ...]]]
    locations: Mapping[str, tuple[str, ...]]
    # normalized phrase -> (kind, value); kind is "object", "location" or an attribute kind
    phrases: Mapping[tuple[str, ...], tuple[str, str]] = field(repr=False, default_factory=dict)
    source_sha256: str = ""

    @property
    def max_phrase_len(self) -> int:
        return max(len(p) for p in self.phrases)

    @classmethod
    def from_dict(cls, d: Mapping, source_sha256: str = "") -> "Lexicon":
        templates = []
        for t in d["templates"]:
            if t.count("{obj}") != 1:
                raise LexiconError(f"template needs exactly one {{obj}} slot: {t!r}")
            pre, suf = t.split("{obj}")
            templates.append(Template(t, tuple(normalize(pre)), tuple(normalize(suf))))
        if len({t.text for t in templates}) != len(templates):
            raise LexiconError("duplicate templates")
        objects = {k: tuple(v) for k, v in d["objects"].items()}
        attributes = {kind: {val: tuple(ph) for val, ph in vals.items()}
                      for kind, vals in d["attributes"].items()}
        locations = {k: tuple(v) for k, v in d["locations"].items()}
        unknown = set(locations) - set(RELATIVE_LOCATIONS) - set(LAYOUT_LOCATIONS)
        if unknown:
            raise LexiconError(f"unknown location predicates {sorted(unknown)}")
        phrases: dict[tuple[str, ...], tuple[str, str]] = {}

        def add(kind: str, value: str, items: Iterable[str]):
            items = list(items)
            if not items:
                raise LexiconError(f"{kind} {value!r} has no phrases")
            for ph in items:
                key = tuple(normalize(ph))
                if not key:
                    raise LexiconError(f"empty phrase for {kind} {value!r}")
                if key in phrases and phrases[key] != (kind, value):
                    raise LexiconError(f"phrase {ph!r} used for both {phrases[key]} and {(kind, value)}")
                phrases[key] = (kind, value)

        for cat, syn in objects.items():
            add("object", cat, syn)
        for kind, vals in attributes.items():
            if kind in ("object", "location"):
                raise LexiconError(f"reserved attribute kind {kind!r}")
            for val, ph in vals.items():
                add(kind, val, ph)
        for pred, ph in locations.items():
            add("location", pred, ph)
        return cls(tuple(templates), objects, attributes, locations, phrases, source_sha256)

    @classmethod
    def load(cls, path: Optional[str | Path] = None) -> "Lexicon":
        import hashlib

        text = Path(path).read_text(encoding="utf-8") if path else _load_asset("lexicon.json")
        return cls.from_dict(json.loads(text), hashlib.sha256(text.encode("utf-8")).hexdigest())


_DEFAULT: Optional[Lexicon] = None


def default_lexicon() -> Lexicon:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = Lexicon.load()
    return _DEFAULT


# -- queries ------------------------------------------------------------------

@dataclass(frozen=True)
class Query:
    category: str
    attributes: tuple[tuple[str, str], ...] = ()   # sorted (kind, value) pairs
    location: Optional[str] = None

    def __post_init__(self):
        attrs = self.attributes.items() if isinstance(self.attributes, Mapping) else self.attributes
        object.__setattr__(self, "attributes", tuple(sorted((str(k), str(v)) for k, v in attrs)))

    @property
    def attribute_map(self) -> dict[str, str]:
        return dict(self.attributes)

    def to_dict(self) -> dict:
        return {"category": self.category, "attributes": self.attribute_map, "location": self.location}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Query":
        attrs = d.get("attributes") or {}
        return cls(d["category"], tuple(attrs.items()), d.get("location"))

    def without(self, kinds: Iterable[str] = (), location: bool = False) -> "Query":
        kinds = set(kinds)
        return Query(self.category, tuple((k, v) for k, v in self.attributes if k not in kinds),
                     None if location else self.location)


@dataclass(frozen=True)
class Directive:
    text: str
    query: Query

    @property
    def tokens(self) -> list[str]:
        return normalize(self.text)

    def to_dict(self) -> dict:
        return {"text": self.text, "query": self.query.to_dict()}


@dataclass(frozen=True)
class Disambiguation:
    """Minimal features singling out a target: attribute kinds plus at most one location."""

    attributes: tuple[str, ...] = ()
    location: Optional[str] = None

    @property
    def features(self) -> frozenset[str]:
        out = set(self.attributes)
        if self.location:
            out.add(f"location:{self.location}")
        return frozenset(out)

    def __bool__(self) -> bool:
        return bool(self.attributes) or self.location is not None


@dataclass(frozen=True, eq=False)
class SceneView:
    """What an annotator sees: visible objects of one frame plus the layout."""

    objects: tuple[ObjectSummary, ...]
    layout: Optional[str] = None

    @classmethod
    def from_frame(cls, scene: Scene, frame: RenderedFrame) -> "SceneView":
        return cls(tuple(object_summaries(scene, frame)), scene.layout)

    def get(self, oid: int) -> ObjectSummary:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(f"object {oid} is not visible")


# -- predicate evaluation ---------------------------------------------------------

def _center_x(o: ObjectSummary) -> float:
    return o.bbox.x + o.bbox.w / 2.0


def _strict_extreme(o: ObjectSummary, group: Sequence[ObjectSummary], key, sign: float) -> bool:
    v = sign * key(o)
    return all(sign * key(g) > v for g in group if g.id != o.id)


def location_holds(pred: str, o: ObjectSummary, group: Sequence[ObjectSummary],
                   layout: Optional[str] = None) -> bool:
    if pred == "leftmost":
        return _strict_extreme(o, group, _center_x, 1.0)
    if pred == "rightmost":
        return _strict_extreme(o, group, _center_x, -1.0)
    if pred == "nearest":
        return _strict_extreme(o, group, lambda g: g.depth, 1.0)
    if pred == "farthest":
        return _strict_extreme(o, group, lambda g: g.depth, -1.0)
    if pred == "middle":
        if len(group) % 2 == 0:
            return False
        xs = sorted(_center_x(g) for g in group)
        if len(set(xs)) != len(xs):
            return False
        return _center_x(o) == xs[len(xs) // 2]
    if pred.startswith("on_"):
        return layout is None or pred == f"on_{layout}"
    raise RegError(f"unknown location predicate {pred!r}")


def matching(view: SceneView, query: Query) -> list[ObjectSummary]:
    """Objects satisfying category, attributes and location of ``query``."""
    attrs = query.attribute_map
    group = [o for o in view.objects if o.category == query.category
             and all(o.attributes.get(k) == v for k, v in attrs.items())]
    if query.location is None:
        return group
    return [o for o in group if location_holds(query.location, o, group, view.layout)]


def verify_unique(view: SceneView, directive: Directive | Query,
                  target_id: Optional[int] = None) -> bool:
    """True iff exactly one visible object satisfies the query (and it is ``target_id`` if given)."""
    query = directive.query if isinstance(directive, Directive) else directive
    hits = matching(view, query)
    return len(hits) == 1 and (target_id is None or hits[0].id == target_id)


# -- ambiguity analysis ------------------------------------------------------------

def _feature_sets(kinds: Sequence[str]) -> list[tuple[tuple[str, ...], Optional[str]]]:
    """Candidate feature sets by size; attributes before location at equal size."""
    out = []
    for size in range(1, len(kinds) + 2):
        for k in range(min(size, len(kinds)), -1, -1):
            n_loc = size - k
            if n_loc > 1:
                continue
            for combo in itertools.combinations(kinds, k):
                if n_loc == 0:
                    out.append((combo, None))
                else:
                    out.extend((combo, loc) for loc in RELATIVE_LOCATIONS)
    return out


def analyze_ambiguity(view: SceneView, target_id: int) -> Disambiguation:
    target = view.get(target_id)
    same = [o for o in view.objects if o.category == target.category]
    if len(same) == 1:
        return Disambiguation()
    kinds = [k for k in SEARCH_KINDS if k in target.attributes]
    for combo, loc in _feature_sets(kinds):
        q = Query(target.category, tuple((k, target.attributes[k]) for k in combo), loc)
        if verify_unique(view, q, target_id):
            return Disambiguation(tuple(combo), loc)
    raise UndistinguishableError(f"object {target_id} ({target.category}) cannot be singled out")


# -- generation ------------------------------------------------------------------------

def realize(query: Query, lexicon: Lexicon, rng: np.random.Generator,
            template: Optional[int] = None) -> str:
    """Sample a surface string for ``query``."""
    attrs = query.attribute_map
    words = []
    for kind in ATTRIBUTE_KINDS + tuple(sorted(set(attrs) - set(ATTRIBUTE_KINDS))):
        if kind in attrs:
            options = lexicon.attributes[kind][attrs[kind]]
            words.append(options[int(rng.integers(len(options)))])
    syn = lexicon.objects[query.category]
    words.append(syn[int(rng.integers(len(syn)))])
    if query.location is not None:
        ph = lexicon.locations[query.location]
        words.append(ph[int(rng.integers(len(ph)))])
    ti = int(rng.integers(len(lexicon.templates))) if template is None else template
    return lexicon.templates[ti].fill(" ".join(words))


def _shortest_text(query: Query, lexicon: Lexicon) -> str:
    def short(options):
        return min(options, key=lambda p: (len(normalize(p)), p))

    attrs = query.attribute_map
    words = [short(lexicon.attributes[k][attrs[k]]) for k in ATTRIBUTE_KINDS if k in attrs]
    words.append(short(lexicon.objects[query.category]))
    if query.location is not None:
        words.append(short(lexicon.locations[query.location]))
    t = min(lexicon.templates, key=lambda t: (len(t.prefix) + len(t.suffix), t.text))
    return t.fill(" ".join(words))


def generate_expression(view: SceneView, target_id: int, lexicon: Optional[Lexicon] = None,
                        seed: int = 0, p_attribute: float = 0.3, p_layout: float = 0.15) -> Directive:
    """Unambiguous directive for ``target_id``.

    Required features always appear. Each other attribute of the target is
    added with probability ``p_attribute``; a redundant ``on_<layout>`` phrase
    with probability ``p_layout`` when no location is required. If the
    decorated query stops being unique, or hides the need for its required
    features, the bare required query is used instead.
    """
    lexicon = lexicon or default_lexicon()
    rng = np.random.default_rng(seed)
    target = view.get(target_id)
    need = analyze_ambiguity(view, target_id)
    kinds = [k for k in ATTRIBUTE_KINDS if k in target.attributes]
    chosen = set(need.attributes)
    for k in kinds:
        draw = rng.uniform()
        if k not in chosen and draw < p_attribute and target.attributes[k] in lexicon.attributes.get(k, {}):
            chosen.add(k)
    location = need.location
    draw = rng.uniform()
    if location is None and view.layout and draw < p_layout and f"on_{view.layout}" in lexicon.locations:
        location = f"on_{view.layout}"
    required = Query(target.category, tuple((k, target.attributes[k]) for k in need.attributes),
                     need.location)
    query = Query(target.category, tuple((k, target.attributes[k]) for k in sorted(chosen)), location)
    if not _sound(view, query, need, target_id):
        query = required
    text = realize(query, lexicon, rng)
    if len(normalize(text)) > MAX_TOKENS:
        text = _shortest_text(query, lexicon)
        if len(normalize(text)) > MAX_TOKENS:
            raise RegError(f"no realization within {MAX_TOKENS} tokens for {query}")
    return Directive(text, query)


def _sound(view: SceneView, query: Query, need: Disambiguation, target_id: int) -> bool:
    if not verify_unique(view, query, target_id):
        return False
    if need:
        stripped = query.without(need.attributes, location=need.location is not None)
        if len(matching(view, stripped)) < 2:
            return False
    if need.location is not None and verify_unique(view, query.without(location=True)):
        return False
    return True


def strip_required(query: Query, need: Disambiguation) -> Query:
    return query.without(need.attributes, location=need.location is not None)


# -- parsing -----------------------------------------------------------------------------

def _scan(tokens: Sequence[str], lexicon: Lexicon) -> tuple[dict, bool]:
    """Greedy longest-match scan. Returns (parts, clean) where clean means every
    token was consumed without conflicts."""
    parts: dict = {"category": None, "attributes": {}, "location": None}
    clean = True
    i = 0
    maxlen = lexicon.max_phrase_len
    while i < len(tokens):
        for L in range(min(maxlen, len(tokens) - i), 0, -1):
            hit = lexicon.phrases.get(tuple(tokens[i:i + L]))
            if hit is not None:
                break
        else:
            clean = False
            i += 1
            continue
        kind, value = hit
        if kind == "object":
            slot_taken = parts["category"] is not None
            if not slot_taken:
                parts["category"] = value
        elif kind == "location":
            slot_taken = parts["location"] is not None
            if not slot_taken:
                parts["location"] = value
        else:
            slot_taken = kind in parts["attributes"]
            if not slot_taken:
                parts["attributes"][kind] = value
        clean &= not slot_taken
        i += L
    return parts, clean


def parse_directive(text: str, lexicon: Optional[Lexicon] = None) -> Query:
    """Structured query of ``text``; raises UnparseableError without an object phrase."""
    lexicon = lexicon or default_lexicon()
    tokens = normalize(text)
    cands = []
    for idx, t in enumerate(lexicon.templates):
        np_, ns = len(t.prefix), len(t.suffix)
        if np_ + ns >= len(tokens):
            continue
        if tuple(tokens[:np_]) == t.prefix and tuple(tokens[len(tokens) - ns:]) == t.suffix:
            cands.append((-(np_ + ns), idx, tokens[np_:len(tokens) - ns]))
    cands.sort(key=lambda c: (c[0], c[1]))
    best = None
    for _, _, middle in cands:
        parts, clean = _scan(middle, lexicon)
        if clean and parts["category"] is not None:
            best = parts
            break
        if best is None:
            best = parts
    if best is None or best["category"] is None:
        whole, _ = _scan(tokens, lexicon)
        if best is None or whole["category"] is not None:
            best = whole
    if best["category"] is None:
        raise UnparseableError(f"no object phrase in {text!r}", best)
    return Query(best["category"], tuple(best["attributes"].items()), best["location"])
