"""Breadth-first search for pseudo action sequences that reproduce a gold answer."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Sequence

from . import lang
from .kg import KnowledgeGraph
from .lang import Action, Artifact

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchConfig:
    max_len: int = lang.DEFAULT_MAX_LEN
    max_frontier: int = 5000
    min_reward_to_accept: float = 1.0
    max_results: int = 5
    around_tolerance: int = lang.DEFAULT_AROUND_TOLERANCE
    # Also key dedup on the artifacts consumed, so argument inventories that
    # reach the same state survive as separate hits.
    track_usage: bool = False

    def __post_init__(self):
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.max_frontier < 1 or self.max_results < 1:
            raise ValueError("caps must be positive")


@dataclass(frozen=True)
class PseudoPair:
    question: object  # bench.QuestionRecord
    sequence: tuple[Action, ...]
    reward: float


def unique_artifacts(args: Sequence[Artifact]) -> list[Artifact]:
    seen, out = set(), []
    for a in args:
        if (a.kind, a.id) not in seen:
            seen.add((a.kind, a.id))
            out.append(a)
    return out


def enumerate_actions(args: Sequence[Artifact]) -> list[Action]:
    """Every signature-conforming instantiation, in function-table then artifact order."""
    by_kind: dict[str, list[Artifact]] = {}
    for a in unique_artifacts(args):
        by_kind.setdefault(a.kind, []).append(a)
    out = []
    for func, sig in lang.SIGNATURES.items():
        pools = [by_kind.get(k, []) for k in sig]
        for combo in itertools.product(*pools):
            out.append(Action(func, combo))
    return out


def available_functions(actions: Sequence[Action]) -> frozenset:
    return frozenset(a.func for a in actions)


def search_pseudo_sequences(kg: KnowledgeGraph, question, cfg: SearchConfig = SearchConfig()) -> list[PseudoPair]:
    """Shortest-first list of sequences whose answer scores >= the accept threshold."""
    gold = question.gold_answer
    actions = enumerate_actions(question.artifacts)
    funcs = available_functions(actions)
    # Select/SelectAll results do not depend on the stack, so compute them once.
    pushed: dict[Action, object] = {}

    def apply(state, act):
        if act.func in ("Select", "SelectAll"):
            val = pushed.get(act)
            if val is None:
                val = lang.step(kg, lang.INITIAL_STATE, act, cfg.around_tolerance)[0][0]
                pushed[act] = val
            return state[0] + (val,), state[1]
        return lang.step(kg, state, act, cfg.around_tolerance)

    results: list[PseudoPair] = []
    seen = {(lang.state_fingerprint(lang.INITIAL_STATE), frozenset() if cfg.track_usage else None)}
    frontier = [((), lang.INITIAL_STATE, lang.INITIAL_ABSTRACT, frozenset())]
    for depth in range(1, cfg.max_len + 1):
        remaining = cfg.max_len - depth
        nxt = []
        for seq, state, abs_state, used in frontier:
            for act in actions:
                a2 = lang.abstract_step(abs_state, act.func)
                if a2 is None or not lang.can_finish(a2, remaining, funcs):
                    continue
                try:
                    s2 = apply(state, act)
                except lang.LangError:
                    continue
                used2 = used.union((a.kind, a.id) for a in act.args)
                fp = (lang.state_fingerprint(s2), used2 if cfg.track_usage else None)
                if fp in seen:
                    continue
                seen.add(fp)
                seq2 = seq + (act,)
                if lang.abstract_final(a2):
                    reward = lang.f1(lang.final_answer(s2), gold)
                    if reward >= cfg.min_reward_to_accept:
                        results.append(PseudoPair(question, seq2, reward))
                        if len(results) >= cfg.max_results:
                            return results
                if remaining > 0 and len(nxt) < cfg.max_frontier:
                    nxt.append((seq2, s2, a2, used2))
        frontier = nxt
        if not frontier:
            break
    return results


def search_dataset(kg, questions, cfg: SearchConfig = SearchConfig()) -> list[PseudoPair]:
    """Run the search for every question; returns all accepted pairs in question order."""
    out = []
    for q in questions:
        out.extend(search_pseudo_sequences(kg, q, cfg))
    return out


def _empty_pushes(kg: KnowledgeGraph, seq: Sequence[Action], around_tolerance: int) -> int:
    n, state = 0, lang.INITIAL_STATE
    for act in seq:
        state = lang.step(kg, state, act, around_tolerance)
        if state[0] and not state[0][-1] and not isinstance(state[0][-1], int):
            n += 1
    return n


def preferred_pair(kg: KnowledgeGraph, pairs: Sequence[PseudoPair], around_tolerance: int = lang.DEFAULT_AROUND_TOLERANCE):
    """Pick the training sequence among one question's hits.

    Prefers covering more of the question's artifacts, then fewer empty
    intermediate values, then search order.
    """
    if not pairs:
        return None

    def key(ip):
        i, p = ip
        used = {(a.kind, a.id) for act in p.sequence for a in act.args}
        return (-len(used), _empty_pushes(kg, p.sequence, around_tolerance), i)

    return min(enumerate(pairs), key=key)[1]
