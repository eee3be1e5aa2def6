"""Question rewriting into per-action utterances.

A corpus is built by peeling actions off the end of each pseudo sequence: the
shortened program is turned back into text, and the words of the current
question that the shorter text no longer explains become the utterance for
the removed action. At inference a question borrows the rewrite of its
nearest corpus neighbour with its own artifacts substituted in.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from . import lang
from .lang import CONSTANT, ENTITY, RELATION, TYPE, Action, Artifact
from .retrieval import AntonymTable, Memory, mask_question, similarity

UTTERANCE_SEP = "#"
REWRITE_SEP = "[SEP]"
KIND_TAGS = {ENTITY: "entity", RELATION: "relation", TYPE: "type", CONSTANT: "constant"}

BackTranslator = Callable[[Sequence[Action]], str]

_QUANT = {"AtLeast": "atleast", "AtMost": "atmost", "Exactly": "exactly", "Around": "approximately"}
_CMP = {"GreaterThan": ("greater", "than"), "LessThan": ("lesser", "than"), "EqualTo": ("same", "as")}


# -- template back-translation --------------------------------------------------


@dataclass
class _SetPhrase:
    head: str  # type label the question asks for
    body: str
    select: tuple | None = None  # (entity, relation) when produced by a bare Select


@dataclass
class _MapPhrase:
    subjects: list[str]
    relation: str
    objects: list[str]


@dataclass
class _NumPhrase:
    text: str


def _lab(a: Artifact) -> str:
    return a.surface()


def _join_or(words: list[str]) -> str:
    return " or ".join(dict.fromkeys(words))


def _render(item) -> str:
    if isinstance(item, _SetPhrase):
        return f"which {item.head} {item.body}"
    if isinstance(item, _MapPhrase):
        return f"which {_join_or(item.subjects)} {item.relation} {_join_or(item.objects)}"
    return item.text


def template_back_translate(prefix: Sequence[Action]) -> str:
    """Deterministic text for a (possibly incomplete) action prefix."""
    if not prefix:
        return ""
    stack: list = []
    bools: list[str] = []
    for act in prefix:
        f, args = act.func, act.args
        if f == "Select":
            e, r, t = (_lab(a) for a in args)
            stack.append(_SetPhrase(t, f"does {e} {r}", (e, r)))
        elif f == "SelectAll":
            t1, r, t2 = (_lab(a) for a in args)
            stack.append(_MapPhrase([t1], r, [t2]))
        elif f in lang.SET_OPS and len(stack) >= 2:
            b, a = stack.pop(), stack.pop()
            if isinstance(a, _MapPhrase) and isinstance(b, _MapPhrase):
                stack.append(_MapPhrase(a.subjects + b.subjects, a.relation, a.objects + b.objects))
            elif isinstance(a, _SetPhrase) and isinstance(b, _SetPhrase):
                stack.append(_SetPhrase(a.head, _combine(f, a, b)))
            else:
                stack += [a, b]
        elif f == "Bool":
            bools.append(_lab(args[0]))
        elif f in lang.MAP_CONSUMERS:
            if len(stack) >= 2 and isinstance(stack[-1], _MapPhrase) and isinstance(stack[-2], _MapPhrase):
                b, a = stack.pop(), stack.pop()
                stack.append(_MapPhrase(a.subjects + b.subjects, a.relation, a.objects + b.objects))
            if stack and isinstance(stack[-1], _MapPhrase):
                m = stack.pop()
                stack.append(_SetPhrase(_join_or(m.subjects), _filter_body(act, m)))
        elif f == "Count":
            if stack and isinstance(stack[-1], _SetPhrase):
                s = stack.pop()
                stack.append(_NumPhrase(f"how many {s.head} {s.body}"))
    if bools and stack and isinstance(stack[-1], _SetPhrase):
        top = stack.pop()
        listed = " and ".join(bools)
        if top.select is not None:
            e, r = top.select
            stack.append(_NumPhrase(f"does {e} {r} the {top.head} {listed}"))
        else:
            stack.append(_NumPhrase(f"are {listed} among the {top.head} that {top.body}"))
    return " and ".join(_render(x) for x in stack) + " ?"


def _combine(f: str, a: _SetPhrase, b: _SetPhrase) -> str:
    if a.select and b.select:
        (e1, r1), (e2, r2) = a.select, b.select
        if f == "Union":
            return f"does {e1} or {e2} {r1}" if r1 == r2 else f"does {e1} {r1} or {e2} {r2}"
        if f == "Inter":
            return f"does {e1} {r1} and {e2} {r2}"
        return f"does {e1} {r1} but not {e2}" if r1 == r2 else f"does {e1} {r1} but not {e2} {r2}"
    word = {"Union": "or", "Inter": "and", "Diff": "but not"}[f]
    return f"{a.body} {word} {b.body}"


def _filter_body(act: Action, m: _MapPhrase) -> str:
    objs, r = _join_or(m.objects), m.relation
    f = act.func
    if f in ("ArgMax", "ArgMin"):
        return f"{r} {'max' if f == 'ArgMax' else 'min'} number of {objs}"
    if f in _QUANT:
        return f"{r} {_QUANT[f]} {_lab(act.args[0])} {objs}"
    word, link = _CMP[f]
    return f"can {word} number of {objs} {r} {link} {_lab(act.args[0])}"


# -- corpus construction --------------------------------------------------------


def compare(q_orig: Sequence[str], q_del: Sequence[str]) -> list[str]:
    """Tokens of ``q_orig`` beyond their count in ``q_del``, in original order."""
    budget = Counter(q_del)
    out = []
    for tok in q_orig:
        if budget[tok] > 0:
            budget[tok] -= 1
        else:
            out.append(tok)
    return out if out else list(q_orig)


@dataclass(frozen=True)
class RewriteEntry:
    question_id: str
    original: str
    utterances: tuple[str, ...]

    @property
    def joined(self) -> str:
        return f" {UTTERANCE_SEP} ".join(self.utterances)

    def to_json(self) -> dict:
        return {
            "question_id": self.question_id,
            "original": self.original,
            "utterances": list(self.utterances),
            "joined": self.joined,
        }

    @classmethod
    def from_json(cls, d: dict) -> "RewriteEntry":
        e = cls(d["question_id"], d["original"], tuple(d["utterances"]))
        if "joined" in d and d["joined"] != e.joined:
            raise ValueError(f"{e.question_id}: joined form disagrees with utterances")
        return e


class RewriteCorpus:
    def __init__(self, entries: Sequence[RewriteEntry]):
        self.entries = sorted(entries, key=lambda e: e.question_id)
        self.by_id: dict[str, RewriteEntry] = {}
        for e in self.entries:
            if e.question_id in self.by_id:
                raise ValueError(f"duplicate corpus id {e.question_id}")
            self.by_id[e.question_id] = e

    def __len__(self):
        return len(self.entries)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_json(), ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RewriteCorpus":
        with open(path, encoding="utf-8") as fh:
            return cls([RewriteEntry.from_json(json.loads(l)) for l in fh if l.strip()])


def rewrite_pair(text: str, sequence: Sequence[Action], bt: BackTranslator = template_back_translate) -> list[str]:
    """Utterances q'_1..q'_k for one question and its action sequence."""
    if not sequence:
        raise ValueError("empty action sequence")
    q_ori = text.split()
    produced = []
    for j in range(len(sequence), 0, -1):
        q_del = bt(sequence[: j - 1]).split()
        produced.append(" ".join(compare(q_ori, q_del)))
        q_ori = q_del
    return produced[::-1]


def build_rewrite_corpus(pairs, bt: BackTranslator = template_back_translate) -> RewriteCorpus:
    """One entry per question; the first pair seen for a question wins."""
    entries: dict[str, RewriteEntry] = {}
    for p in pairs:
        q = p.question
        if q.id in entries:
            continue
        entries[q.id] = RewriteEntry(q.id, q.text, tuple(rewrite_pair(q.text, p.sequence, bt)))
    return RewriteCorpus(list(entries.values()))


# -- inference-time rewriting -------------------------------------------------------


def wrap(a: Artifact) -> str:
    tag = KIND_TAGS[a.kind]
    return f"<{tag}> {a.surface()} </{tag}>"


def _substitute(text: str, src: Sequence[Artifact], tgt: Sequence[Artifact]) -> str:
    """Replace every source artifact label by the aligned, wrapped target artifact."""
    pairs = sorted(zip(src, tgt), key=lambda p: -len(p[0].surface()))
    # Two passes via placeholders so a target label is never re-substituted.
    words = text.split()
    out: list[str] = []
    i = 0
    while i < len(words):
        for k, (s, t) in enumerate(pairs):
            lab = s.surface().split()
            if lab and words[i : i + len(lab)] == lab:
                out.append(f"\x00{k}")
                i += len(lab)
                break
        else:
            out.append(words[i])
            i += 1
    return " ".join(wrap(pairs[int(w[1:])][1]) if w.startswith("\x00") else w for w in out)


def _aligned(src: Sequence[Artifact], tgt: Sequence[Artifact]):
    from .search import unique_artifacts

    s_u, t_u = unique_artifacts(src), unique_artifacts(tgt)
    kinds = (ENTITY, TYPE, CONSTANT, RELATION)
    s_k = {k: [a for a in s_u if a.kind == k] for k in kinds}
    t_k = {k: [a for a in t_u if a.kind == k] for k in kinds}
    if any(len(s_k[k]) != len(t_k[k]) for k in kinds):
        return None
    return [a for k in kinds for a in s_k[k]], [a for k in kinds for a in t_k[k]]


def rewrite(
    q,
    corpus: RewriteCorpus,
    memory: Memory,
    threshold: float = 0.6,
    antonyms: AntonymTable | None = None,
    exclude_id: str | None = None,
) -> str:
    """Question text, plus ``[SEP]`` and the borrowed rewrite when one applies."""
    if not len(corpus):
        raise ValueError("empty rewrite corpus")
    antonyms = antonyms if antonyms is not None else AntonymTable()
    masked = mask_question(q.text, q.artifacts)
    best, best_d = None, -1.0
    for item in memory.items:
        qid = item.question.id
        if qid == exclude_id or qid not in corpus.by_id:
            continue
        d = similarity(masked, item.masked, antonyms)
        if d > best_d:
            best, best_d = item, d
    if best is None or best_d < threshold:
        return q.text
    al = _aligned(best.question.artifacts, q.artifacts)
    if al is None:
        return q.text
    src, tgt = al
    entry = corpus.by_id[best.question.id]
    utts = [_substitute(u, src, tgt) for u in entry.utterances]
    return f"{q.text} {REWRITE_SEP} " + f" {UTTERANCE_SEP} ".join(utts)
