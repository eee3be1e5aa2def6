"""Seeded synthetic knowledge graph and seven-category question set.

Everything here is a pure function of the config (including its seed): the
RNG is a single numpy ``Generator`` stream consumed in a fixed order.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import lang
from .kg import KnowledgeGraph, make_kg
from .lang import CONSTANT, ENTITY, RELATION, TYPE, Action, Artifact

log = logging.getLogger(__name__)

TEMPLATE_VERSION = "1"
CATEGORIES = (
    "simple",
    "logical",
    "verification",
    "quantitative",
    "comparative",
    "quantitative_count",
    "comparative_count",
)
SPLITS = ("train", "dev", "test")

# type id -> (plural label, share of entities)
TYPE_POOL: dict[str, tuple[str, float]] = {
    "person": ("people", 0.55),
    "instrument": ("musical instruments", 0.055),
    "city": ("cities", 0.085),
    "country": ("countries", 0.03),
    "film": ("films", 0.1),
    "organization": ("organizations", 0.05),
    "band": ("bands", 0.045),
    "language": ("languages", 0.035),
    "award": ("awards", 0.035),
}


@dataclass(frozen=True)
class RelationSpec:
    id: str
    label: str
    domain: tuple[str, ...]
    range: tuple[str, ...]
    degree: float  # mean out-degree per subject; 0 means exactly one object
    inverse: str | None = None
    inverse_label: str | None = None


RELATION_POOL: tuple[RelationSpec, ...] = (
    RelationSpec("plays", "plays", ("person",), ("instrument",), 2.5, "played_by", "played by"),
    RelationSpec("born_in", "born in", ("person",), ("city",), 0, "birthplace_of", "birthplace of"),
    RelationSpec("located_in", "located in", ("city",), ("country",), 0, "has_city", "has city"),
    RelationSpec("acted_in", "acted in", ("person",), ("film",), 1.6, "has_cast", "has cast member"),
    RelationSpec("member_of", "member of", ("person",), ("organization", "band"), 1.4, "has_member", "has member"),
    RelationSpec("speaks", "speaks", ("person",), ("language",), 1.8, "spoken_by", "spoken by"),
    RelationSpec("won", "won", ("person",), ("award",), 1.0, "awarded_to", "awarded to"),
    RelationSpec("based_in", "based in", ("organization", "band"), ("city",), 0, "hosts", "hosts"),
    RelationSpec("filmed_in", "filmed in", ("film",), ("country",), 1.5, "filming_location_of", "filming location of"),
)

_SYLLABLES = (
    "ka ro vel an mi tor sa len dru pe lo ra vin ost ma rek il bo za nu "
    "fer gal tha qui do sen ar mo lyn cor bri ta hal ves"
).split()


@dataclass
class BenchConfig:
    seed: int = 0
    n_entities: int = 300
    n_types: int = len(TYPE_POOL)
    n_relations: int = 2 * len(RELATION_POOL)
    triples_per_relation: int | None = None
    questions_per_category: dict[str, int] = field(default_factory=lambda: {c: 400 for c in CATEGORIES})
    split_ratios: tuple[float, float, float] = (0.72, 0.10, 0.18)
    around_tolerance: int = lang.DEFAULT_AROUND_TOLERANCE
    template_version: str = TEMPLATE_VERSION

    def __post_init__(self):
        if self.n_entities < 1 or self.n_types < 1 or self.n_relations < 1:
            raise ValueError("entity, type and relation counts must be positive")
        if self.n_types > len(TYPE_POOL):
            raise ValueError(f"at most {len(TYPE_POOL)} types supported")
        if self.n_entities < self.n_types:
            raise ValueError("need at least one entity per type")
        if any(v < 0 for v in self.questions_per_category.values()):
            raise ValueError("question counts must be non-negative")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError("split ratios must be three numbers summing to 1")
        if self.template_version != TEMPLATE_VERSION:
            raise ValueError(f"template inventory version {self.template_version!r} not available")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        d = dict(d)
        if "split_ratios" in d:
            d["split_ratios"] = tuple(d["split_ratios"])
        return cls(**d)


class InfeasibleConfig(ValueError):
    pass


@dataclass
class QuestionRecord:
    id: str
    text: str
    category: str
    artifacts: list[Artifact]
    gold_answer: object
    gold_sequence: tuple[Action, ...] | None = None
    split: str = "train"
    pattern: str = ""

    @property
    def tokens(self) -> list[str]:
        return self.text.split()

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "category": self.category,
            "pattern": self.pattern,
            "artifacts": [
                {"kind": a.kind, "id": a.id, "start": a.span[0], "end": a.span[1]} for a in self.artifacts
            ],
            "gold_answer": lang.answer_to_json(self.gold_answer),
            "gold_sequence": None if self.gold_sequence is None else lang.serialize_sequence(self.gold_sequence),
            "split": self.split,
        }

    @classmethod
    def from_json(cls, d: dict) -> "QuestionRecord":
        text = d["text"]
        arts = []
        for a in d["artifacts"]:
            s, e = int(a["start"]), int(a["end"])
            if not 0 <= s < e <= len(text):
                raise ValueError(f"{d['id']}: artifact span {s}:{e} outside the question")
            arts.append(Artifact(a["kind"], a["id"], span=(s, e), label=text[s:e]))
        seq = d.get("gold_sequence")
        return cls(
            id=d["id"],
            text=text,
            category=d["category"],
            artifacts=arts,
            gold_answer=lang.answer_from_json(d["gold_answer"]),
            gold_sequence=None if seq is None else lang.parse_sequence(seq, arts),
            split=d.get("split", "train"),
            pattern=d.get("pattern", ""),
        )


# -- knowledge graph ------------------------------------------------------------


def _name(rng: np.random.Generator, n_words: int, used: set[str]) -> str:
    while True:
        words = []
        for _ in range(n_words):
            k = int(rng.integers(2, 4))
            words.append("".join(_SYLLABLES[int(i)] for i in rng.integers(0, len(_SYLLABLES), size=k)).capitalize())
        label = " ".join(words)
        if label not in used:
            used.add(label)
            return label


def _relation_inventory(types: Sequence[str], n_relations: int, rng) -> list[RelationSpec]:
    """Pool relations (forward then inverse) whose endpoints exist, padded with generic ones."""
    out: list[RelationSpec] = []
    tset = set(types)
    for spec in RELATION_POOL:
        dom = tuple(t for t in spec.domain if t in tset)
        rng_t = tuple(t for t in spec.range if t in tset)
        if not dom or not rng_t:
            continue
        out.append(RelationSpec(spec.id, spec.label, dom, rng_t, spec.degree, spec.inverse))
        if spec.inverse:
            out.append(RelationSpec(spec.inverse, spec.inverse_label, rng_t, dom, -1.0, spec.id))
    out = out[:n_relations]
    k = 0
    while len(out) < n_relations:
        a, b = (types[int(i)] for i in rng.integers(0, len(types), size=2))
        out.append(RelationSpec(f"rel{k}", f"related {k}", (a,), (b,), 1.5))
        k += 1
    return out


def generate_kg(cfg: BenchConfig) -> KnowledgeGraph:
    rng = np.random.default_rng(cfg.seed)
    types = list(TYPE_POOL)[: cfg.n_types]
    shares = np.array([TYPE_POOL[t][1] for t in types])
    counts = np.maximum(1, np.floor(shares / shares.sum() * cfg.n_entities)).astype(int)
    while counts.sum() < cfg.n_entities:
        counts[int(np.argmax(shares / counts))] += 1
    while counts.sum() > cfg.n_entities:
        i = int(np.argmax(counts))
        counts[i] -= 1
    used: set[str] = set()
    entities: dict[str, tuple[list[str], str]] = {}
    members: dict[str, list[str]] = {}
    for t, c in zip(types, counts):
        members[t] = []
        for i in range(int(c)):
            eid = f"{t}_{i:03d}"
            entities[eid] = ([t], _name(rng, 2 if t == "person" else 1, used))
            members[t].append(eid)

    rels = _relation_inventory(types, cfg.n_relations, rng)
    rel_ids = {r.id for r in rels}
    triples: list[tuple[str, str, str]] = []
    forward_pairs: dict[str, list[tuple[str, str]]] = {}
    for spec in rels:
        if spec.degree < 0 and spec.inverse in forward_pairs:
            triples.extend((o, spec.id, s) for s, o in forward_pairs[spec.inverse])
            continue
        dom = [e for t in spec.domain for e in members[t]]
        rng_e = [e for t in spec.range for e in members[t]]
        pairs = [(s, o) for s in dom for o in rng_e if s != o]
        if cfg.triples_per_relation is not None:
            target = cfg.triples_per_relation
        elif spec.degree == 0:
            target = len(dom)
        else:
            target = max(1, int(round(abs(spec.degree) * len(dom))))
        if cfg.triples_per_relation is None:
            # degrees are soft on tiny graphs; only an explicit count can be infeasible
            target = min(target, len(pairs))
        if target > len(pairs):
            raise InfeasibleConfig(
                f"relation {spec.id}: {target} triples requested but only {len(pairs)} entity pairs exist"
            )
        if not pairs or target == 0:
            forward_pairs[spec.id] = []
            continue
        if spec.degree == 0 and cfg.triples_per_relation is None:
            # functional: one object per subject, skewed popularity
            w = rng.lognormal(0.0, 1.0, size=len(rng_e))
            chosen = [(s, rng_e[int(rng.choice(len(rng_e), p=w / w.sum()))]) for s in dom]
            chosen = [(s, o) for s, o in chosen if s != o]
        else:
            ws = dict(zip(dom, rng.lognormal(0.0, 0.8, size=len(dom))))
            wo = dict(zip(rng_e, rng.lognormal(0.0, 1.0, size=len(rng_e))))
            p = np.array([ws[s] * wo[o] for s, o in pairs])
            idx = rng.choice(len(pairs), size=target, replace=False, p=p / p.sum())
            chosen = [pairs[int(i)] for i in sorted(idx)]
        forward_pairs[spec.id] = chosen
        triples.extend((s, spec.id, o) for s, o in chosen)
    assert rel_ids == {r.id for r in rels}
    return make_kg(
        {t: TYPE_POOL[t][0] for t in types},
        entities,
        {r.id: r.label for r in rels},
        triples,
    )


# -- question templates -------------------------------------------------------------

_QUANT_WORD = {"AtLeast": "atleast", "AtMost": "atmost", "Exactly": "exactly", "Around": "approximately"}
_CMP_WORD = {"GreaterThan": ("greater", "than"), "LessThan": ("lesser", "than"), "EqualTo": ("same", "as")}


class Unsatisfiable(Exception):
    pass


class _Ctx:
    """Sampling helpers bound to one graph and RNG stream."""

    def __init__(self, kg: KnowledgeGraph, rng: np.random.Generator, around_tolerance: int):
        self.kg = kg
        self.rng = rng
        self.delta = around_tolerance
        self.rels = sorted(kg.relations)
        self.range_types = {}
        self.domain_types = {}
        for r in self.rels:
            self.range_types[r] = set()
            self.domain_types[r] = set()
        for tr in sorted(kg.triples):
            self.range_types[tr.relation] |= kg.type_of[tr.object]
            self.domain_types[tr.relation] |= kg.type_of[tr.subject]
        for r in self.rels:
            self.range_types[r] = sorted(self.range_types[r])
            self.domain_types[r] = sorted(self.domain_types[r])

    def pick(self, seq):
        seq = list(seq)
        if not seq:
            raise Unsatisfiable("empty choice")
        return seq[int(self.rng.integers(len(seq)))]

    def rel_with_range(self, t=None):
        cands = [r for r in self.rels if self.range_types[r] and (t is None or t in self.range_types[r])]
        return self.pick(cands)

    def subjects(self, r, t):
        return sorted(
            e for d in self.domain_types[r] for e in self.kg.entities_of_type(d) if self.kg.neighbors(e, r, t)
        )

    def smap(self, t1, r, t2):
        return lang.select_all(self.kg, t1, r, t2)


# A pattern draws slot values and returns (slots, gold-sequence builder). Slots map
# a slot name to (kind, id, label); the builder maps slot name -> Artifact to actions.
Slots = dict
Pattern = Callable[[_Ctx], tuple[Slots, Callable[[dict], tuple[Action, ...]], dict]]


def _ent(ctx, e):
    return (ENTITY, e, ctx.kg.entity_labels.get(e, e))


def _rel(ctx, r):
    return (RELATION, r, ctx.kg.relation_labels.get(r, r))


def _typ(ctx, t):
    return (TYPE, t, ctx.kg.type_labels.get(t, t))


def _num(n):
    return (CONSTANT, int(n), str(int(n)))


def p_select(ctx: _Ctx):
    r = ctx.rel_with_range()
    t = ctx.pick(ctx.range_types[r])
    e = ctx.pick(ctx.subjects(r, t))
    slots = {"e1": _ent(ctx, e), "r": _rel(ctx, r), "t": _typ(ctx, t)}
    return slots, lambda a: (Action("Select", (a["e1"], a["r"], a["t"])),), {}


def _two_subjects(ctx, r, t, ok):
    subs = ctx.subjects(r, t)
    for _ in range(30):
        e1, e2 = ctx.pick(subs), ctx.pick(subs)
        if e1 != e2 and ok(ctx.kg.neighbors(e1, r, t), ctx.kg.neighbors(e2, r, t)):
            return e1, e2
    raise Unsatisfiable(f"no subject pair for {r}/{t}")


def p_setop(op):
    def pat(ctx: _Ctx):
        if op == "Inter":
            for _ in range(30):
                t = ctx.pick(sorted({t for r in ctx.rels for t in ctx.range_types[r]}))
                rs = [r for r in ctx.rels if t in ctx.range_types[r]]
                if len(rs) < 2:
                    continue
                r1, r2 = ctx.pick(rs), ctx.pick(rs)
                if r1 == r2:
                    continue
                s1, s2 = ctx.subjects(r1, t), ctx.subjects(r2, t)
                for _ in range(30):
                    e1, e2 = ctx.pick(s1), ctx.pick(s2)
                    a, b = ctx.kg.neighbors(e1, r1, t), ctx.kg.neighbors(e2, r2, t)
                    if e1 != e2 and (a & b) and (a & b) != a and (a & b) != b:
                        slots = {
                            "e1": _ent(ctx, e1), "r1": _rel(ctx, r1), "e2": _ent(ctx, e2),
                            "r2": _rel(ctx, r2), "t": _typ(ctx, t),
                        }
                        return slots, lambda x: (
                            Action("Select", (x["e1"], x["r1"], x["t"])),
                            Action("Select", (x["e2"], x["r2"], x["t"])),
                            Action("Inter"),
                        ), {}
            raise Unsatisfiable("no intersecting pair")
        r = ctx.rel_with_range()
        t = ctx.pick(ctx.range_types[r])
        if op == "Union":
            ok = lambda a, b: not (a <= b) and not (b <= a)
        else:
            ok = lambda a, b: bool(a - b) and bool(a & b)
        e1, e2 = _two_subjects(ctx, r, t, ok)
        slots = {"e1": _ent(ctx, e1), "e2": _ent(ctx, e2), "r": _rel(ctx, r), "t": _typ(ctx, t)}
        return slots, lambda x: (
            Action("Select", (x["e1"], x["r"], x["t"])),
            Action("Select", (x["e2"], x["r"], x["t"])),
            Action(op),
        ), {}

    return pat


def p_verify(n_bool):
    def pat(ctx: _Ctx):
        r = ctx.rel_with_range()
        t = ctx.pick(ctx.range_types[r])
        e = ctx.pick(ctx.subjects(r, t))
        ans = ctx.kg.neighbors(e, r, t)
        pool_in = sorted(ans)
        pool_out = sorted(ctx.kg.entities_of_type(t) - ans - {e})
        chosen: list[str] = []
        for _ in range(n_bool):
            want_in = bool(ctx.rng.integers(2)) or not pool_out
            pool = [x for x in (pool_in if want_in else pool_out) if x not in chosen]
            if not pool:
                pool = [x for x in pool_in + pool_out if x not in chosen]
            chosen.append(ctx.pick(pool))
        slots = {"e1": _ent(ctx, e), "r": _rel(ctx, r), "t": _typ(ctx, t)}
        for i, c in enumerate(chosen):
            slots[f"e{i + 2}"] = _ent(ctx, c)
        return slots, lambda x: (Action("Select", (x["e1"], x["r"], x["t"])),) + tuple(
            Action("Bool", (x[f"e{i + 2}"],)) for i in range(n_bool)
        ), {}

    return pat


def _map_slot(ctx: _Ctx, min_keys=3):
    for _ in range(30):
        r = ctx.rel_with_range()
        t2 = ctx.pick(ctx.range_types[r])
        t1 = ctx.pick(ctx.domain_types[r])
        m = ctx.smap(t1, r, t2)
        if len(m) >= min_keys and len({len(v) for v in m.values()}) >= 2:
            return t1, r, t2, m
    raise Unsatisfiable("no map with varied cardinalities")


def p_extreme(func):
    def pat(ctx: _Ctx):
        t1, r, t2, m = _map_slot(ctx)
        slots = {"t1": _typ(ctx, t1), "r": _rel(ctx, r), "t2": _typ(ctx, t2)}
        return slots, lambda x: (Action("SelectAll", (x["t1"], x["r"], x["t2"])), Action(func)), {}

    return pat


def _filter(func, sizes: dict, arg, delta):
    """Keys kept by one map-consuming function (mirrors the executor)."""
    if func in ("ArgMin", "ArgMax"):
        if not sizes:
            return frozenset()
        best = (min if func == "ArgMin" else max)(sizes.values())
        return frozenset(k for k, c in sizes.items() if c == best)
    if func in _CMP_WORD:
        pivot = sizes.get(arg, 0)
        test = {"GreaterThan": pivot.__lt__, "LessThan": pivot.__gt__, "EqualTo": pivot.__eq__}[func]
        return frozenset(k for k, c in sizes.items() if k != arg and test(c))
    test = {
        "AtLeast": lambda c: c >= arg,
        "AtMost": lambda c: c <= arg,
        "Exactly": lambda c: c == arg,
        "Around": lambda c: arg - delta <= c <= arg + delta,
    }[func]
    return frozenset(k for k, c in sizes.items() if test(c))


def _non_degenerate(func, sizes: dict, arg, delta) -> bool:
    """The gold filter keeps a proper, non-empty subset that no sibling filter reproduces."""
    got = _filter(func, sizes, arg, delta)
    if not got or len(got) == len(sizes):
        return False
    if func in _CMP_WORD:
        siblings = [f for f in _CMP_WORD if f != func]
    elif func in _QUANT_WORD:
        siblings = [f for f in _QUANT_WORD if f != func]
    else:
        siblings = []
    alts = [_filter(f, sizes, arg, delta) for f in siblings]
    alts += [_filter(f, sizes, None, delta) for f in ("ArgMin", "ArgMax") if f != func]
    return all(got != a for a in alts)


def _threshold_n(ctx: _Ctx, func, sizes: dict):
    vals = sorted(set(sizes.values()))
    lo, hi = max(0, vals[0] - 2), vals[-1] + 2
    cands = [n for n in range(lo, hi + 1) if _non_degenerate(func, sizes, n, ctx.delta)]
    if not cands:
        raise Unsatisfiable(f"no informative constant for {func}")
    return ctx.pick(cands)


def p_threshold(func, count=False):
    def pat(ctx: _Ctx):
        t1, r, t2, m = _map_slot(ctx)
        n = _threshold_n(ctx, func, {k: len(v) for k, v in m.items()})
        slots = {"t1": _typ(ctx, t1), "r": _rel(ctx, r), "t2": _typ(ctx, t2), "n": _num(n)}
        tail = (Action("Count"),) if count else ()
        return slots, lambda x: (
            Action("SelectAll", (x["t1"], x["r"], x["t2"])),
            Action(func, (x["n"],)),
        ) + tail, {}

    return pat


def p_threshold2(func, count=False):
    """Two maps over one relation merged before the threshold filter."""

    def pat(ctx: _Ctx):
        options = []
        for r in ctx.rels:
            if len(ctx.range_types[r]) >= 2:
                for t1 in ctx.domain_types[r]:
                    options.append(("range", r, t1))
            if len(ctx.domain_types[r]) >= 2:
                for t2 in ctx.range_types[r]:
                    options.append(("domain", r, t2))
        if not options:
            raise Unsatisfiable("no relation with two endpoint types")
        side, r, fixed = ctx.pick(options)
        pool = ctx.range_types[r] if side == "range" else ctx.domain_types[r]
        ta, tb = ctx.pick(pool), ctx.pick(pool)
        if ta == tb:
            raise Unsatisfiable("same type drawn twice")
        if side == "range":
            first, second = (fixed, r, ta), (fixed, r, tb)
        else:
            first, second = (ta, r, fixed), (tb, r, fixed)
        merged = lang._merge_maps(ctx.smap(*first), ctx.smap(*second))
        if len(merged) < 3:
            raise Unsatisfiable("merged map too small")
        n = _threshold_n(ctx, func, {k: len(v) for k, v in merged.items()})
        if side == "range":
            slots = {"t1": _typ(ctx, fixed), "r": _rel(ctx, r), "t2": _typ(ctx, ta), "t3": _typ(ctx, tb), "n": _num(n)}
            build = lambda x: (
                Action("SelectAll", (x["t1"], x["r"], x["t2"])),
                Action("SelectAll", (x["t1"], x["r"], x["t3"])),
                Action(func, (x["n"],)),
            )
        else:
            slots = {"t1": _typ(ctx, ta), "t3": _typ(ctx, tb), "r": _rel(ctx, r), "t2": _typ(ctx, fixed), "n": _num(n)}
            build = lambda x: (
                Action("SelectAll", (x["t1"], x["r"], x["t2"])),
                Action("SelectAll", (x["t3"], x["r"], x["t2"])),
                Action(func, (x["n"],)),
            )
        tail = (Action("Count"),) if count else ()
        return slots, lambda x: build(x) + tail, {"side": side}

    return pat


def p_compare(func, count=False):
    def pat(ctx: _Ctx):
        for _ in range(10):
            t1, r, t2, m = _map_slot(ctx)
            sizes = {k: len(v) for k, v in m.items()}
            keys = [k for k in sorted(m) if _non_degenerate(func, sizes, k, ctx.delta)]
            if keys:
                e = ctx.pick(keys)
                break
        else:
            raise Unsatisfiable(f"no informative pivot for {func}")
        slots = {"t1": _typ(ctx, t1), "r": _rel(ctx, r), "t2": _typ(ctx, t2), "e1": _ent(ctx, e)}
        tail = (Action("Count"),) if count else ()
        return slots, lambda x: (
            Action("SelectAll", (x["t1"], x["r"], x["t2"])),
            Action(func, (x["e1"],)),
        ) + tail, {}

    return pat


def p_count(inner):
    def pat(ctx: _Ctx):
        slots, build, meta = inner(ctx)
        return slots, lambda x: build(x) + (Action("Count"),), meta

    return pat


# Surface templates: words in braces are slots; "{q}" / "{cmp}" / "{as}" are filled from the pattern meta.
TEMPLATES: dict[str, tuple[str, ...]] = {
    "select": (
        "which {t} does {e1} {r} ?",
        "what are the {t} that {e1} {r} ?",
        "{e1} {r} which {t} ?",
    ),
    "union": (
        "which {t} does {e1} or {e2} {r} ?",
        "what {t} do either {e1} or {e2} {r} ?",
    ),
    "inter": (
        "which {t} does {e1} {r1} and {e2} {r2} ?",
        "what {t} does both {e1} {r1} and also {e2} {r2} ?",
    ),
    "diff": (
        "which {t} does {e1} {r} but not {e2} ?",
        "what {t} does {e1} {r} except those of {e2} ?",
    ),
    "verify1": (
        "does {e1} {r} the {t} {e2} ?",
        "is {e2} among the {t} that {e1} {r} ?",
    ),
    "verify2": (
        "does {e1} {r} the {t} {e2} and {e3} ?",
        "are {e2} and {e3} among the {t} that {e1} {r} ?",
    ),
    "extreme": (
        "which {t1} {r} {q} number of {t2} ?",
        "which {t1} have the {q} number of {t2} by {r} ?",
    ),
    "threshold": (
        "which {t1} {r} {q} {n} {t2} ?",
        "which {t1} have {r} {q} {n} {t2} ?",
    ),
    "threshold2_range": (
        "which {t1} {r} {q} {n} {t2} or {t3} ?",
        "which {t1} have {r} {q} {n} {t2} and {t3} ?",
    ),
    "threshold2_domain": (
        "which {t1} or {t3} {r} {q} {n} {t2} ?",
        "which {t1} and {t3} have {r} {q} {n} {t2} ?",
    ),
    "compare": (
        "which {t1} {r} {cmp} number of {t2} {as} {e1} ?",
        "which {t1} can {cmp} number of {t2} {r} {as} {e1} ?",
    ),
    "count_select": (
        "how many {t} does {e1} {r} ?",
        "what is the number of {t} that {e1} {r} ?",
    ),
    "count_union": (
        "how many {t} does {e1} or {e2} {r} ?",
        "what is the number of {t} that either {e1} or {e2} {r} ?",
    ),
    "count_inter": (
        "how many {t} does {e1} {r1} and {e2} {r2} ?",
        "what is the number of {t} that both {e1} {r1} and also {e2} {r2} ?",
    ),
    "count_threshold": (
        "how many {t1} {r} {q} {n} {t2} ?",
        "what is the number of {t1} that have {r} {q} {n} {t2} ?",
    ),
    "count_threshold2_range": (
        "how many {t1} {r} {q} {n} {t2} or {t3} ?",
        "what is the number of {t1} that have {r} {q} {n} {t2} and {t3} ?",
    ),
    "count_threshold2_domain": (
        "how many {t1} or {t3} {r} {q} {n} {t2} ?",
        "what is the number of {t1} and {t3} that have {r} {q} {n} {t2} ?",
    ),
    "count_compare": (
        "how many {t1} {r} {cmp} number of {t2} {as} {e1} ?",
        "what is the number of {t1} that can {cmp} number of {t2} {r} {as} {e1} ?",
    ),
}


def _patterns() -> dict[str, list[tuple[str, Pattern, str, dict]]]:
    """category -> list of (pattern name, sampler, template key, fixed words)."""
    out: dict[str, list] = {c: [] for c in CATEGORIES}
    out["simple"].append(("select", p_select, "select", {}))
    out["logical"] += [
        ("union", p_setop("Union"), "union", {}),
        ("inter", p_setop("Inter"), "inter", {}),
        ("diff", p_setop("Diff"), "diff", {}),
    ]
    out["verification"] += [
        ("verify1", p_verify(1), "verify1", {}),
        ("verify2", p_verify(2), "verify2", {}),
    ]
    out["quantitative"] += [
        ("argmax", p_extreme("ArgMax"), "extreme", {"q": "max"}),
        ("argmin", p_extreme("ArgMin"), "extreme", {"q": "min"}),
    ]
    for f, w in _QUANT_WORD.items():
        out["quantitative"].append((f"threshold_{f}", p_threshold(f), "threshold", {"q": w}))
        out["quantitative"].append((f"threshold2_{f}", p_threshold2(f), "threshold2", {"q": w}))
    for f, (w, a) in _CMP_WORD.items():
        out["comparative"].append((f"compare_{f}", p_compare(f), "compare", {"cmp": w, "as": a}))
        out["comparative_count"].append((f"count_compare_{f}", p_compare(f, True), "count_compare", {"cmp": w, "as": a}))
    out["quantitative_count"] += [
        ("count_select", p_count(p_select), "count_select", {}),
        ("count_union", p_count(p_setop("Union")), "count_union", {}),
        ("count_inter", p_count(p_setop("Inter")), "count_inter", {}),
    ]
    for f, w in _QUANT_WORD.items():
        out["quantitative_count"].append((f"count_threshold_{f}", p_threshold(f, True), "count_threshold", {"q": w}))
        out["quantitative_count"].append(
            (f"count_threshold2_{f}", p_threshold2(f, True), "count_threshold2", {"q": w})
        )
    return out


def render(template: str, slots: Slots, words: dict) -> tuple[str, dict[str, tuple[int, int]]]:
    """Fill a template; returns the text and each slot's character span."""
    parts: list[str] = []
    spans: dict[str, tuple[int, int]] = {}
    pos = 0
    for tok in template.split():
        if tok.startswith("{") and tok.endswith("}"):
            name = tok[1:-1]
            if name in slots:
                text = slots[name][2]
                spans[name] = (pos, pos + len(text))
            else:
                text = words[name]
        else:
            text = tok
        parts.append(text)
        pos += len(text) + 1
    return " ".join(parts), spans


def build_record(qid: str, category: str, pattern: str, template: str, slots: Slots, builder, words: dict):
    text, spans = render(template, slots, words)
    arts = {
        name: Artifact(kind, ident, span=spans[name], label=label) for name, (kind, ident, label) in slots.items()
    }
    ordered = sorted(arts.values(), key=lambda a: a.span)
    seq = builder(arts)
    return text, ordered, seq


def generate_questions(kg: KnowledgeGraph, cfg: BenchConfig, stats: Counter | None = None) -> list[QuestionRecord]:
    rng = np.random.default_rng([cfg.seed, 1])
    ctx = _Ctx(kg, rng, cfg.around_tolerance)
    pats = _patterns()
    stats = stats if stats is not None else Counter()
    records: list[QuestionRecord] = []
    for cat in CATEGORIES:
        want = cfg.questions_per_category.get(cat, 0)
        made: list[QuestionRecord] = []
        seen_text: set[str] = set()
        attempts = 0
        while len(made) < want and attempts < want * 20 + 50:
            attempts += 1
            name, sampler, tkey, words = pats[cat][int(rng.integers(len(pats[cat])))]
            try:
                slots, builder, meta = sampler(ctx)
            except Unsatisfiable as exc:
                stats[f"unsatisfiable:{name}"] += 1
                log.debug("template %s unsatisfiable: %s", name, exc)
                continue
            if "side" in meta:
                tkey = f"{tkey}_{meta['side']}"
            tmpl = ctx.pick(TEMPLATES[tkey])
            text, arts, seq = build_record("", cat, name, tmpl, slots, builder, words)
            if text in seen_text:
                stats["duplicate_text"] += 1
                continue
            try:
                ans = lang.execute(kg, seq, cfg.around_tolerance)
            except lang.LangError as exc:  # pragma: no cover - generator bug guard
                stats[f"unsatisfiable:{name}"] += 1
                log.warning("gold sequence for %s failed: %s", name, exc)
                continue
            seen_text.add(text)
            made.append(QuestionRecord("", text, cat, arts, ans, seq, "train", name))
        if len(made) < want:
            log.warning("category %s: produced %d of %d questions", cat, len(made), want)
            stats[f"short:{cat}"] += want - len(made)
        _assign_splits(made, cfg.split_ratios, rng)
        records.extend(made)
    for i, rec in enumerate(records):
        rec.id = f"q{i:05d}"
    skipped = sum(v for k, v in stats.items() if k.startswith("unsatisfiable:"))
    if skipped:
        log.warning("skipped %d unsatisfiable template draws", skipped)
    return records


def _assign_splits(recs: list[QuestionRecord], ratios, rng) -> None:
    n = len(recs)
    order = rng.permutation(n)
    n_train = int(round(ratios[0] * n))
    n_dev = int(round(ratios[1] * n))
    if n >= 3:
        # every split gets at least one record
        n_dev = max(1, n_dev)
        n_train = min(n_train, n - n_dev - 1)
    for rank, i in enumerate(order):
        recs[int(i)].split = "train" if rank < n_train else "dev" if rank < n_train + n_dev else "test"


# -- IO -------------------------------------------------------------------------------


def save_dataset(records: Sequence[QuestionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False) + "\n")


def load_dataset(path: str | Path) -> list[QuestionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(QuestionRecord.from_json(json.loads(line)))
    return out


def split(records: Sequence[QuestionRecord], name: str) -> list[QuestionRecord]:
    return [r for r in records if r.split == name]
