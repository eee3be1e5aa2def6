"""Model-facing views of questions: token streams, vocabulary, and the decoding grammar.

Artifact mentions become ordinal markers ([E1], [T2], ...) so the encoder never
has to learn entity names. Types and relations keep their label words after the
marker. Each distinct artifact is one entry of the dynamic vocabulary.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Sequence

from . import lang
from .lang import CONSTANT, ENTITY, RELATION, TYPE, Action, Artifact
from .rewrite import KIND_TAGS, REWRITE_SEP

PAD, UNK, GO = "[PAD]", "[UNK]", "[GO]"
MARKER_LETTER = {ENTITY: "E", TYPE: "T", RELATION: "R", CONSTANT: "V"}
MAX_MARKERS = 16
FIXED_VOCAB: tuple[str, ...] = lang.FUNCTIONS + ("<eos>",)
N_FIXED = len(FIXED_VOCAB)
EOS = N_FIXED - 1
FUNC_INDEX = {f: i for i, f in enumerate(lang.FUNCTIONS)}

_TAG_TO_KIND = {v: k for k, v in KIND_TAGS.items()}
_WRAP_RE = re.compile(r"<(entity|relation|type|constant)> (.*?) </\1>")


def unique_args(artifacts: Sequence[Artifact]) -> list[Artifact]:
    seen, out = set(), []
    for a in sorted(artifacts, key=lambda a: a.span or (0, 0)):
        if (a.kind, a.id) not in seen:
            seen.add((a.kind, a.id))
            out.append(a)
    return out


def _markers(args: Sequence[Artifact]) -> dict[tuple, str]:
    counts: dict[str, int] = {}
    out = {}
    for a in args:
        counts[a.kind] = counts.get(a.kind, 0) + 1
        if counts[a.kind] > MAX_MARKERS:
            raise ValueError(f"more than {MAX_MARKERS} {a.kind} artifacts")
        out[(a.kind, a.id)] = f"[{MARKER_LETTER[a.kind]}{counts[a.kind]}]"
    return out


def _words(text: str) -> list[str]:
    return text.lower().split()


def _artifact_tokens(a: Artifact, marker: str) -> list[str]:
    if a.kind in (TYPE, RELATION):
        return [marker] + _words(a.surface())
    return [marker]


@dataclass
class Example:
    qid: str
    tokens: list[str]
    args: list[Artifact]
    arg_tokens: list[list[str]]
    target: list[int] | None = None


def question_tokens(q, rewritten: str | None = None) -> tuple[list[str], list[Artifact], list[list[str]]]:
    """Encoder tokens, distinct arguments, and per-argument token lists for one question."""
    args = unique_args(q.artifacts)
    marks = _markers(args)
    toks: list[str] = []
    pos = 0
    text = q.text
    for a in sorted(q.artifacts, key=lambda a: a.span):
        s, e = a.span
        toks += _words(text[pos:s])
        toks += _artifact_tokens(a, marks[(a.kind, a.id)])
        pos = e
    toks += _words(text[pos:])
    if rewritten is not None and f" {REWRITE_SEP} " in rewritten:
        tail = rewritten.split(f" {REWRITE_SEP} ", 1)[1]
        toks.append(REWRITE_SEP)
        toks += _rewrite_tokens(tail, args, marks)
    arg_tokens = [_artifact_tokens(a, marks[(a.kind, a.id)]) for a in args]
    return toks, args, arg_tokens


def _rewrite_tokens(tail: str, args: Sequence[Artifact], marks: dict) -> list[str]:
    out: list[str] = []
    pos = 0
    for m in _WRAP_RE.finditer(tail):
        out += _words(tail[pos : m.start()])
        kind, label = _TAG_TO_KIND[m.group(1)], m.group(2)
        hit = next((a for a in args if a.kind == kind and a.surface() == label), None)
        out += _artifact_tokens(hit, marks[(hit.kind, hit.id)]) if hit else _words(label)
        pos = m.end()
    out += _words(tail[pos:])
    return out


def sequence_to_targets(seq: Sequence[Action], args: Sequence[Artifact]) -> list[int]:
    """Combined-vocabulary ids: functions and EOS first, then one id per argument."""
    index = {(a.kind, a.id): N_FIXED + i for i, a in enumerate(args)}
    out = []
    for act in seq:
        out.append(FUNC_INDEX[act.func])
        for a in act.args:
            key = (a.kind, a.id)
            if key not in index:
                raise ValueError(f"argument {a.token} not among the question's artifacts")
            out.append(index[key])
    out.append(EOS)
    return out


def targets_to_sequence(ids: Sequence[int], args: Sequence[Artifact]) -> tuple[Action, ...]:
    actions = []
    i = 0
    while i < len(ids) and ids[i] != EOS:
        func = FIXED_VOCAB[ids[i]]
        n = len(lang.SIGNATURES[func])
        actions.append(Action(func, tuple(args[j - N_FIXED] for j in ids[i + 1 : i + 1 + n])))
        i += 1 + n
    return tuple(actions)


def make_example(q, rewritten: str | None = None, sequence=None) -> Example:
    toks, args, arg_tokens = question_tokens(q, rewritten)
    target = None if sequence is None else sequence_to_targets(sequence, args)
    return Example(q.id, toks, args, arg_tokens, target)


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        base = [PAD, UNK, REWRITE_SEP]
        base += [f"[{l}{i}]" for l in MARKER_LETTER.values() for i in range(1, MAX_MARKERS + 1)]
        seen = set(base)
        self.itos = list(base)
        for t in tokens:
            if t not in seen:
                seen.add(t)
                self.itos.append(t)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, examples: Sequence[Example]) -> "Vocab":
        words = set()
        for ex in examples:
            words.update(ex.tokens)
            for at in ex.arg_tokens:
                words.update(at)
        return cls(sorted(words))

    def __len__(self):
        return len(self.itos)

    def ids(self, tokens: Sequence[str]) -> list[int]:
        unk = self.stoi[UNK]
        return [self.stoi.get(t, unk) for t in tokens]

    def to_json(self) -> str:
        return json.dumps(self.itos)


# -- decoding grammar ------------------------------------------------------------


@dataclass(frozen=True)
class GrammarState:
    abstract: tuple
    n_actions: int
    pending: tuple  # argument kinds still owed by the current action
    done: bool = False


class Grammar:
    """Which combined-vocabulary ids may come next for one question's arguments."""

    def __init__(self, args: Sequence[Artifact], max_len: int = lang.DEFAULT_MAX_LEN):
        self.args = list(args)
        self.max_len = max_len
        kinds = {a.kind for a in self.args}
        self.funcs = frozenset(f for f, sig in lang.SIGNATURES.items() if all(k in kinds for k in sig))
        self.by_kind = {k: [N_FIXED + i for i, a in enumerate(self.args) if a.kind == k] for k in kinds}
        self._cache: dict[GrammarState, tuple[int, ...]] = {}

    def initial(self) -> GrammarState:
        return GrammarState(lang.INITIAL_ABSTRACT, 0, ())

    def allowed(self, gs: GrammarState) -> tuple[int, ...]:
        hit = self._cache.get(gs)
        if hit is not None:
            return hit
        if gs.done:
            out: tuple[int, ...] = ()
        elif gs.pending:
            out = tuple(self.by_kind.get(gs.pending[0], ()))
        else:
            ids = []
            if gs.n_actions < self.max_len:
                remaining = self.max_len - gs.n_actions - 1
                for f in lang.FUNCTIONS:
                    if f not in self.funcs:
                        continue
                    nxt = lang.abstract_step(gs.abstract, f)
                    if nxt is not None and lang.can_finish(nxt, remaining, self.funcs):
                        ids.append(FUNC_INDEX[f])
            if gs.n_actions >= 1 and lang.abstract_final(gs.abstract):
                ids.append(EOS)
            out = tuple(ids)
        self._cache[gs] = out
        return out

    def advance(self, gs: GrammarState, tok: int) -> GrammarState:
        if tok not in self.allowed(gs):
            raise ValueError(f"token {tok} not allowed here")
        if tok == EOS:
            return GrammarState(gs.abstract, gs.n_actions, (), True)
        if tok >= N_FIXED:
            return GrammarState(gs.abstract, gs.n_actions, gs.pending[1:])
        f = lang.FUNCTIONS[tok]
        return GrammarState(lang.abstract_step(gs.abstract, f), gs.n_actions + 1, lang.SIGNATURES[f])

    def masks(self, target: Sequence[int]) -> list[tuple[int, ...]]:
        """Allowed sets along a teacher-forced path; raises if the path leaves the grammar."""
        gs, out = self.initial(), []
        for tok in target:
            out.append(self.allowed(gs))
            gs = self.advance(gs, tok)
        return out
