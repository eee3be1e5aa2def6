"""Question-to-question alignment and reward-guided candidate selection.

Training questions are kept in a memory as masked token lists with their
answers. At inference the closest ones (token edit distance, with antonym
zeroing) form a support set; each decoded candidate is re-targeted to every
support question and scored by how well it reproduces that question's answer.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from rapidfuzz.distance import Levenshtein

from . import lang
from .lang import CONSTANT, ENTITY, RELATION, TYPE, Action, Artifact, Candidate

MASK_TOKENS = {ENTITY: "[ENTITY]", TYPE: "[TYPE]", CONSTANT: "[CONSTANT]"}
# Opposing quantifier words: questions differing in one of these ask for different filters.
_QUANTIFIERS = ("atleast", "atmost", "exactly", "approximately")
_COMPARATIVES = ("lesser", "greater", "same")
DEFAULT_ANTONYMS = (
    (("atleast", "atmost"), ("less", "greater"), ("min", "max"))
    + tuple(itertools.combinations(_QUANTIFIERS, 2))
    + tuple(itertools.combinations(_COMPARATIVES, 2))
)
MAX_RELATION_SLOTS = 6

# Opening words that fix what kind of answer a question asks for.
_COUNT_OPENINGS = (("how", "many"), ("what", "is", "the", "number", "of"), ("what", "is", "the", "count", "of"))
_YES_NO_OPENINGS = ("does", "do", "did", "is", "are", "was", "were")


def answer_form(masked: Sequence[str]) -> str:
    """'count', 'yes_no' or 'list', read off the question's opening words."""
    toks = tuple(masked)
    if any(toks[: len(c)] == c for c in _COUNT_OPENINGS):
        return "count"
    if toks and toks[0] in _YES_NO_OPENINGS:
        return "yes_no"
    return "list"


class AntonymTable:
    def __init__(self, pairs: Iterable[tuple[str, str]] = DEFAULT_ANTONYMS, forms: bool = True):
        # forms: questions asking for different answer forms (count / yes-no / list) also contrast
        self.forms = forms
        self.pairs: list[tuple[str, str]] = []
        for a, b in pairs:
            if a == b:
                raise ValueError(f"antonym pair needs two distinct words: {a!r}")
            if (a, b) not in self.pairs and (b, a) not in self.pairs:
                self.pairs.append((a, b))

    @classmethod
    def load(cls, path: str | Path) -> "AntonymTable":
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                words = line.split()
                if len(words) != 2:
                    raise ValueError(f"{path}:{lineno}: expected two words")
                pairs.append((words[0], words[1]))
        return cls(pairs)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{a} {b}\n" for a, b in self.pairs), encoding="utf-8")

    def conflict(self, m1: Sequence[str], m2: Sequence[str]) -> bool:
        # only words one side has and the other lacks can contrast
        if self.forms and answer_form(m1) != answer_form(m2):
            return True
        s1, s2 = set(m1) - set(m2), set(m2) - set(m1)
        return any((a in s1 and b in s2) or (b in s1 and a in s2) for a, b in self.pairs)


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def mask_question(text: str, artifacts: Sequence[Artifact]) -> list[str]:
    """Replace entity/type/constant mentions with placeholders; relations stay."""
    spans = sorted((a.span, a.kind) for a in artifacts if a.kind in MASK_TOKENS)
    for (s1, e1), (s2, e2) in zip([s for s, _ in spans], [s for s, _ in spans[1:]]):
        if s2 < e1:
            raise ValueError(f"overlapping artifact spans {s1}:{e1} and {s2}:{e2}")
    out = text
    for (start, end), kind in reversed(spans):
        if not 0 <= start < end <= len(text):
            raise ValueError(f"span {start}:{end} outside the question")
        out = f"{out[:start]} {MASK_TOKENS[kind]} {out[end:]}"
    return [t if t in MASK_TOKENS.values() else t.lower() for t in out.split()]


def similarity(m1: Sequence[str], m2: Sequence[str], antonyms: AntonymTable | None = None) -> float:
    if antonyms is not None and antonyms.conflict(m1, m2):
        return 0.0
    longest = max(len(m1), len(m2))
    if longest == 0:
        return 1.0
    return 1.0 - Levenshtein.distance(list(m1), list(m2)) / longest


@dataclass(frozen=True)
class MemoryItem:
    question: object  # bench.QuestionRecord
    masked: tuple[str, ...]
    answer: object


@dataclass(frozen=True)
class SupportItem:
    question: object
    answer: object
    similarity: float


class Memory:
    def __init__(self, items: Sequence[MemoryItem]):
        self.items = list(items)
        self.by_id = {it.question.id: it for it in self.items}

    @classmethod
    def build(cls, records) -> "Memory":
        return cls([MemoryItem(r, tuple(mask_question(r.text, r.artifacts)), r.gold_answer) for r in records])

    def __len__(self):
        return len(self.items)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for it in self.items:
                rec = it.question.to_json()
                rec["gold_sequence"] = None
                fh.write(json.dumps({"masked": list(it.masked), "record": rec}, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Memory":
        from .bench import QuestionRecord

        items = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    q = QuestionRecord.from_json(d["record"])
                    items.append(MemoryItem(q, tuple(d["masked"]), q.gold_answer))
        return cls(items)


def retrieve(
    mem: Memory,
    q,
    k: int = 3,
    threshold: float = 0.6,
    antonyms: AntonymTable | None = None,
    exclude_id: str | None = None,
) -> list[SupportItem]:
    """Top-``k`` memory items with similarity >= ``threshold``, best first."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return []
    antonyms = antonyms if antonyms is not None else AntonymTable()
    masked = mask_question(q.text, q.artifacts)
    scored = []
    for i, it in enumerate(mem.items):
        if exclude_id is not None and it.question.id == exclude_id:
            continue
        d = similarity(masked, it.masked, antonyms)
        if d >= threshold:
            scored.append((-d, i, it))
    scored.sort(key=lambda x: (x[0], x[1]))
    return [SupportItem(it.question, it.answer, -neg) for neg, _, it in scored[:k]]


def _by_kind(args: Sequence[Artifact]) -> dict[str, list[Artifact]]:
    out: dict[str, list[Artifact]] = {ENTITY: [], TYPE: [], CONSTANT: [], RELATION: []}
    seen = set()
    for a in args:
        key = (a.kind, a.id)
        if key not in seen:
            seen.add(key)
            out[a.kind].append(a)
    return out


def adjust_candidate(cand, src: Sequence[Artifact], tgt: Sequence[Artifact], max_relations: int = MAX_RELATION_SLOTS):
    """Re-target ``cand`` from the question's arguments ``src`` to ``tgt``.

    Entities, types and constants are aligned by first-appearance order within
    their kind; the candidate's distinct relations are filled with every
    ordered choice of ``tgt``'s relations. Returns [] when the inventories do
    not line up.
    """
    seq = cand.sequence if isinstance(cand, Candidate) else tuple(cand)
    s_k, t_k = _by_kind(src), _by_kind(tgt)
    if len(t_k[RELATION]) > max_relations:
        raise ValueError(f"{len(t_k[RELATION])} relations exceed the permutation cap of {max_relations}")
    mapping: dict[tuple, Artifact] = {}
    for kind in (ENTITY, TYPE, CONSTANT):
        if len(s_k[kind]) != len(t_k[kind]):
            return []
        for a, b in zip(s_k[kind], t_k[kind]):
            mapping[(kind, a.id)] = b
    slots: list[tuple] = []
    for act in seq:
        for a in act.args:
            key = (a.kind, a.id)
            if a.kind == RELATION:
                if key not in slots:
                    slots.append(key)
            elif key not in mapping:
                return []
    out = []
    for perm in itertools.permutations(t_k[RELATION], len(slots)):
        rmap = dict(zip(slots, perm))
        out.append(
            tuple(
                Action(act.func, tuple(rmap[(a.kind, a.id)] if a.kind == RELATION else mapping[(a.kind, a.id)] for a in act.args))
                for act in seq
            )
        )
    return out


@dataclass(frozen=True)
class CandidateScore:
    rewards: tuple[float, ...]
    score: float


def weighted_score(similarities: Sequence[float], rewards: Sequence[float]) -> float:
    total = sum(similarities)
    if total <= 0:
        return 0.0
    return sum(d * r for d, r in zip(similarities, rewards)) / total


def score_candidate(kg, cand, src: Sequence[Artifact], support: Sequence[SupportItem], around_tolerance: int = lang.DEFAULT_AROUND_TOLERANCE) -> CandidateScore:
    rewards = []
    for item in support:
        best = 0.0
        for seq in adjust_candidate(cand, src, item.question.artifacts):
            ans = lang.try_execute(kg, seq, around_tolerance)
            if ans is not None:
                best = max(best, lang.f1(ans, item.answer))
                if best == 1.0:
                    break
        rewards.append(best)
    return CandidateScore(tuple(rewards), weighted_score([s.similarity for s in support], rewards))


def select(kg, cands: Sequence[Candidate], src: Sequence[Artifact], support: Sequence[SupportItem], around_tolerance: int = lang.DEFAULT_AROUND_TOLERANCE):
    """Best candidate by support score; without support, the top beam candidate."""
    if not cands:
        raise ValueError("no candidates")
    ser = {id(c): lang.serialize_sequence(c.sequence) for c in cands}
    if not support:
        return min(cands, key=lambda c: (-c.score, -c.log_prob, ser[id(c)]))
    scored = [(score_candidate(kg, c, src, support, around_tolerance).score, c) for c in cands]
    return min(scored, key=lambda sc: (-sc[0], -sc[1].log_prob, ser[id(sc[1])]))[1]
