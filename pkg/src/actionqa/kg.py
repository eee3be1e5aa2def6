"""In-memory knowledge graph with typed entities and indexed triple lookup."""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

_ID_RE = re.compile(r"^[^\s,()#]+$")


class KGError(ValueError):
    """Raised for malformed graph files or references to undeclared ids."""


@dataclass(frozen=True, order=True)
class Triple:
    subject: str
    relation: str
    object: str


@dataclass
class KnowledgeGraph:
    entities: frozenset[str]
    relations: frozenset[str]
    types: frozenset[str]
    type_of: Mapping[str, frozenset[str]]
    triples: frozenset[Triple]
    entity_labels: Mapping[str, str] = field(default_factory=dict)
    relation_labels: Mapping[str, str] = field(default_factory=dict)
    type_labels: Mapping[str, str] = field(default_factory=dict)
    forward: dict[tuple[str, str], frozenset[str]] = field(init=False, repr=False)
    inverse: dict[tuple[str, str], frozenset[str]] = field(init=False, repr=False)
    by_type: dict[str, frozenset[str]] = field(init=False, repr=False)

    def __post_init__(self):
        self._validate()
        self.forward, self.inverse, self.by_type = build_indices(
            self.triples, self.type_of, self.types
        )

    def _validate(self):
        for kind, ids in (("entity", self.entities), ("relation", self.relations), ("type", self.types)):
            for i in ids:
                if not _ID_RE.match(i):
                    raise KGError(f"invalid {kind} id {i!r}")
        for e in self.entities:
            ts = self.type_of.get(e)
            if not ts:
                raise KGError(f"entity {e!r} has no type")
            for t in ts:
                if t not in self.types:
                    raise KGError(f"undeclared type {t!r} for entity {e!r}")
        for tr in self.triples:
            for e in (tr.subject, tr.object):
                if e not in self.entities:
                    raise KGError(f"undeclared entity {e!r}")
            if tr.relation not in self.relations:
                raise KGError(f"undeclared relation {tr.relation!r}")

    # -- lookups ------------------------------------------------------------

    def check_entity(self, e: str) -> None:
        if e not in self.entities:
            raise KGError(f"undeclared entity {e!r}")

    def check_relation(self, r: str) -> None:
        if r not in self.relations:
            raise KGError(f"undeclared relation {r!r}")

    def check_type(self, t: str) -> None:
        if t not in self.types:
            raise KGError(f"undeclared type {t!r}")

    def neighbors(self, e: str, r: str, t: str) -> frozenset[str]:
        """Objects reachable from ``e`` over ``r`` that carry type ``t``."""
        self.check_entity(e)
        self.check_relation(r)
        self.check_type(t)
        objs = self.forward.get((e, r))
        if not objs:
            return frozenset()
        return frozenset(o for o in objs if t in self.type_of[o])

    def entities_of_type(self, t: str) -> frozenset[str]:
        self.check_type(t)
        return self.by_type.get(t, frozenset())

    def label(self, ident: str) -> str:
        for table in (self.entity_labels, self.relation_labels, self.type_labels):
            if ident in table:
                return table[ident]
        return ident

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.entities == other.entities
            and self.relations == other.relations
            and self.types == other.types
            and dict(self.type_of) == dict(other.type_of)
            and self.triples == other.triples
            and dict(self.entity_labels) == dict(other.entity_labels)
            and dict(self.relation_labels) == dict(other.relation_labels)
            and dict(self.type_labels) == dict(other.type_labels)
        )

    __hash__ = None


def build_indices(triples: Iterable[Triple], type_of: Mapping[str, Iterable[str]], types: Iterable[str]):
    """Forward, inverse and type indices computed from scratch."""
    fwd: dict[tuple[str, str], set[str]] = defaultdict(set)
    inv: dict[tuple[str, str], set[str]] = defaultdict(set)
    for tr in triples:
        fwd[(tr.subject, tr.relation)].add(tr.object)
        inv[(tr.object, tr.relation)].add(tr.subject)
    by_type: dict[str, set[str]] = {t: set() for t in types}
    for e, ts in type_of.items():
        for t in ts:
            by_type.setdefault(t, set()).add(e)
    freeze = lambda d: {k: frozenset(v) for k, v in d.items()}
    return freeze(fwd), freeze(inv), freeze(by_type)


def make_kg(
    types: Mapping[str, str | None] | Iterable[str],
    entities: Mapping[str, tuple[Iterable[str], str | None]],
    relations: Mapping[str, str | None] | Iterable[str],
    triples: Iterable[tuple[str, str, str]],
) -> KnowledgeGraph:
    """Convenience constructor. ``entities`` maps id -> (types, label)."""
    if not isinstance(types, Mapping):
        types = {t: None for t in types}
    if not isinstance(relations, Mapping):
        relations = {r: None for r in relations}
    triple_set = set()
    for s, r, o in triples:
        tr = Triple(s, r, o)
        if tr in triple_set:
            raise KGError(f"duplicate triple {tr}")
        triple_set.add(tr)
    return KnowledgeGraph(
        entities=frozenset(entities),
        relations=frozenset(relations),
        types=frozenset(types),
        type_of={e: frozenset(ts) for e, (ts, _) in entities.items()},
        triples=frozenset(triple_set),
        entity_labels={e: lab for e, (_, lab) in entities.items() if lab is not None},
        relation_labels={r: lab for r, lab in relations.items() if lab is not None},
        type_labels={t: lab for t, lab in types.items() if lab is not None},
    )


def load_kg(path: str | Path) -> KnowledgeGraph:
    types: dict[str, str | None] = {}
    entities: dict[str, tuple[list[str], str | None]] = {}
    relations: dict[str, str | None] = {}
    triples: set[Triple] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                kind = rec["kind"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise KGError(f"line {lineno}: malformed record ({exc})") from None
            try:
                if kind == "type":
                    _declare(types, rec["id"], rec.get("label"), "type", lineno)
                elif kind == "entity":
                    ts = rec["types"]
                    if not isinstance(ts, list) or not ts:
                        raise KGError(f"line {lineno}: entity needs a non-empty types list")
                    for t in ts:
                        if t not in types:
                            raise KGError(f"line {lineno}: undeclared type {t!r}")
                    _declare(entities, rec["id"], (ts, rec.get("label")), "entity", lineno)
                elif kind == "relation":
                    _declare(relations, rec["id"], rec.get("label"), "relation", lineno)
                elif kind == "triple":
                    s, r, o = rec["s"], rec["r"], rec["o"]
                    for e in (s, o):
                        if e not in entities:
                            raise KGError(f"line {lineno}: undeclared entity {e!r}")
                    if r not in relations:
                        raise KGError(f"line {lineno}: undeclared relation {r!r}")
                    tr = Triple(s, r, o)
                    if tr in triples:
                        raise KGError(f"line {lineno}: duplicate triple {s} {r} {o}")
                    triples.add(tr)
                else:
                    raise KGError(f"line {lineno}: unknown kind {kind!r}")
            except KeyError as exc:
                raise KGError(f"line {lineno}: missing field {exc}") from None
    try:
        return make_kg(types, entities, relations, [(t.subject, t.relation, t.object) for t in triples])
    except KGError as exc:
        raise KGError(f"{path}: {exc}") from None


def _declare(table: dict, ident, value, kind: str, lineno: int) -> None:
    if not isinstance(ident, str) or not _ID_RE.match(ident):
        raise KGError(f"line {lineno}: invalid {kind} id {ident!r}")
    if ident in table:
        raise KGError(f"line {lineno}: duplicate {kind} declaration {ident!r}")
    table[ident] = value


def dump_kg(kg: KnowledgeGraph, path: str | Path) -> None:
    """Write ``kg`` as JSONL in declaration order (types, entities, relations, triples)."""
    with open(path, "w", encoding="utf-8") as fh:
        for line in kg_lines(kg):
            fh.write(line + "\n")


def kg_lines(kg: KnowledgeGraph) -> list[str]:
    out = []

    def rec(d, label):
        if label is not None:
            d["label"] = label
        out.append(json.dumps(d, ensure_ascii=False))

    for t in sorted(kg.types):
        rec({"kind": "type", "id": t}, kg.type_labels.get(t))
    for e in sorted(kg.entities):
        rec({"kind": "entity", "id": e, "types": sorted(kg.type_of[e])}, kg.entity_labels.get(e))
    for r in sorted(kg.relations):
        rec({"kind": "relation", "id": r}, kg.relation_labels.get(r))
    for tr in sorted(kg.triples):
        out.append(json.dumps({"kind": "triple", "s": tr.subject, "r": tr.relation, "o": tr.object}))
    return out
