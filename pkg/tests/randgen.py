"""Random graphs and random type-valid programs for differential tests."""

import random

from actionqa import lang
from actionqa.kg import make_kg


def random_graph(rng: random.Random, max_entities=50):
    n_types = rng.randint(1, 4)
    types = [f"T{i}" for i in range(n_types)]
    n_ent = rng.randint(2, max_entities)
    ents = {}
    for i in range(n_ent):
        ents[f"e{i}"] = (rng.sample(types, rng.randint(1, min(2, n_types))), None)
    rels = [f"r{i}" for i in range(rng.randint(1, 3))]
    names = sorted(ents)
    n_tri = rng.randint(0, n_ent * 4)
    triples = {(rng.choice(names), rng.choice(rels), rng.choice(names)) for _ in range(n_tri)}
    return make_kg(types, ents, rels, sorted(triples))


def _arg(rng, kg, kind):
    if kind == lang.ENTITY:
        return lang.E(rng.choice(sorted(kg.entities)))
    if kind == lang.RELATION:
        return lang.R(rng.choice(sorted(kg.relations)))
    if kind == lang.TYPE:
        return lang.T(rng.choice(sorted(kg.types)))
    return lang.V(rng.randint(0, 8))


def random_program(rng: random.Random, kg, max_len=4):
    """A well-typed sequence of length <= max_len, built by tag-level simulation."""
    while True:
        n = rng.randint(1, max_len)
        state, seq = lang.INITIAL_ABSTRACT, []
        for i in range(n):
            remaining = n - i - 1
            options = [
                f for f in lang.FUNCTIONS
                if (nxt := lang.abstract_step(state, f)) is not None and lang.can_finish(nxt, remaining)
            ]
            if not options:
                break
            f = rng.choice(options)
            seq.append(lang.Action(f, tuple(_arg(rng, kg, k) for k in lang.SIGNATURES[f])))
            state = lang.abstract_step(state, f)
            if lang.abstract_final(state) and rng.random() < 0.3:
                break
        if seq and lang.is_well_typed(seq, max_len):
            return tuple(seq)


def to_oracle(seq):
    return [(a.func, [x.id for x in a.args]) for a in seq]


def oracle_types(kg):
    return {e: set(kg.type_of[e]) for e in kg.entities}


def oracle_triples(kg):
    return [(t.subject, t.relation, t.object) for t in kg.triples]
