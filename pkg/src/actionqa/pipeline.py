"""End-to-end wiring: rewrite, decode candidates, pick one by support-set reward.

Also holds training orchestration and the measurement side (per-category F1
reports, ablations and the support-size / candidate-count sweep).

Macro F1 is the unweighted mean of per-category mean F1. Micro F1 is the mean
per-question F1 over all questions.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import torch

from . import bench, encoding, lang, model as mdl, retrieval, rewrite, search
from .kg import KnowledgeGraph

log = logging.getLogger(__name__)

# Which search hit becomes a question's training sequence: the first (shortest,
# enumeration order) or the one covering most of the question's artifacts.
PAIR_POLICIES = ("first", "coverage")

REPORT_NOTE = (
    "macro_f1 = unweighted mean of per-category mean F1; "
    "micro_f1 = mean per-question F1 over all questions"
)


@dataclass
class PipelineConfig:
    kg: str | None = None
    dataset: str | None = None
    pairs: str | None = None
    corpus: str | None = None
    memory: str | None = None
    antonyms: str | None = None
    checkpoint: str | None = None
    beam: int = 10
    n_candidates: int = 5
    k: int = 3
    threshold: float = 0.6
    around_tolerance: int = lang.DEFAULT_AROUND_TOLERANCE
    max_len: int = lang.DEFAULT_MAX_LEN
    seed: int = 0
    no_rewrite: bool = False
    no_select: bool = False
    bfs_max_results: int = 20
    pair_policy: str = "first"
    pretrain_epochs: int = 30
    pretrain_lr: float = 1e-4
    rl_epochs: int = 50
    rl_lr: float = 1e-5
    batch_size: int = 32
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.beam >= self.n_candidates >= 1:
            raise ValueError("need beam >= n_candidates >= 1")
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.pair_policy not in PAIR_POLICIES:
            raise ValueError(f"pair_policy must be one of {PAIR_POLICIES}")

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "PipelineConfig":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def model_config(self) -> mdl.ModelConfig:
        return mdl.ModelConfig(**{"max_len": self.max_len, **self.model})


@dataclass
class Resources:
    """Everything inference needs besides the model."""

    kg: KnowledgeGraph
    memory: retrieval.Memory
    corpus: rewrite.RewriteCorpus | None
    antonyms: retrieval.AntonymTable


def load_antonyms(cfg: PipelineConfig) -> retrieval.AntonymTable:
    return retrieval.AntonymTable.load(cfg.antonyms) if cfg.antonyms else retrieval.AntonymTable()


# -- data preparation -----------------------------------------------------------------


def find_pairs(kg, questions, cfg: PipelineConfig) -> list[search.PseudoPair]:
    """Per question, the training hit first, then the rest in search order."""
    scfg = search.SearchConfig(
        max_len=cfg.max_len,
        max_results=cfg.bfs_max_results,
        around_tolerance=cfg.around_tolerance,
        track_usage=cfg.pair_policy == "coverage",
    )
    out = []
    for q in questions:
        hits = search.search_pseudo_sequences(kg, q, scfg)
        if cfg.pair_policy == "coverage":
            best = search.preferred_pair(kg, hits, cfg.around_tolerance)
        else:
            best = hits[0] if hits else None
        if best is not None:
            out.append(best)
            out.extend(h for h in hits if h is not best)
    return out


def first_per_question(pairs: Sequence[search.PseudoPair]) -> list[search.PseudoPair]:
    seen, out = set(), []
    for p in pairs:
        if p.question.id not in seen:
            seen.add(p.question.id)
            out.append(p)
    return out


def save_pairs(pairs: Sequence[search.PseudoPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {"question_id": p.question.id, "sequence": lang.serialize_sequence(p.sequence), "reward": p.reward}
            fh.write(json.dumps(rec) + "\n")


def load_pairs(path: str | Path, questions) -> list[search.PseudoPair]:
    by_id = {q.id: q for q in questions}
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            d = json.loads(line)
            q = by_id.get(d["question_id"])
            if q is None:
                raise ValueError(f"{path}:{lineno}: unknown question {d['question_id']!r}")
            out.append(search.PseudoPair(q, lang.parse_sequence(d["sequence"], q.artifacts), float(d["reward"])))
    return out


def input_text(q, res: Resources, cfg: PipelineConfig, exclude_self: bool = False) -> str | None:
    if cfg.no_rewrite or res.corpus is None or not len(res.corpus):
        return None
    return rewrite.rewrite(
        q, res.corpus, res.memory, cfg.threshold, res.antonyms, exclude_id=q.id if exclude_self else None
    )


def training_examples(pairs: Sequence[search.PseudoPair], res: Resources, cfg: PipelineConfig) -> list[encoding.Example]:
    # Training questions sit in the memory, so they borrow a neighbour's rewrite, not their own.
    return [
        encoding.make_example(p.question, input_text(p.question, res, cfg, exclude_self=True), p.sequence)
        for p in first_per_question(pairs)
    ]


def train_model(cfg: PipelineConfig, res: Resources, pairs, train_questions, pretrain_log=None, rl_log=None):
    """Pretrain on pseudo pairs, then policy-gradient epochs on all training questions."""
    mdl.seed_everything(cfg.seed)
    exs = training_examples(pairs, res, cfg)
    rl_exs = [encoding.make_example(q, input_text(q, res, cfg, exclude_self=True)) for q in train_questions]
    vocab = encoding.Vocab.build(exs + rl_exs)
    m = mdl.ActionGenerator(vocab, cfg.model_config())
    tcfg = mdl.TrainConfig(epochs=cfg.pretrain_epochs, lr=cfg.pretrain_lr, batch_size=cfg.batch_size, seed=cfg.seed)
    pre = mdl.pretrain(m, exs, tcfg, pretrain_log)
    rl = []
    if cfg.rl_epochs:
        rl = mdl.train_rl(
            m, rl_exs, train_questions, res.kg, cfg.rl_epochs, cfg.rl_lr, cfg.batch_size, cfg.seed,
            cfg.around_tolerance, rl_log,
        )
    return m, {"pretrain_loss": pre, "rl_reward": rl}


# -- inference ---------------------------------------------------------------------------


@dataclass
class Prediction:
    question_id: str
    sequence: tuple
    answer: object
    support: int
    note: str = ""


def candidates(cfg: PipelineConfig, res: Resources, model, q, n: int | None = None) -> list[lang.Candidate]:
    ex = encoding.make_example(q, input_text(q, res, cfg))
    n = cfg.n_candidates if n is None else n
    return model.beam_search(ex, cfg.beam, n)


def choose(cfg: PipelineConfig, res: Resources, q, cands, support) -> Prediction:
    if not cands:
        return Prediction(q.id, (), frozenset(), len(support), "no candidate decoded")
    if cfg.no_select:
        support = []
    best = retrieval.select(res.kg, cands, q.artifacts, support, cfg.around_tolerance)
    ans = lang.try_execute(res.kg, best.sequence, cfg.around_tolerance)
    note = "" if ans is not None else "chosen sequence failed to execute"
    return Prediction(q.id, best.sequence, frozenset() if ans is None else ans, len(support), note)


def answer_question(cfg: PipelineConfig, res: Resources, model, q) -> Prediction:
    cands = candidates(cfg, res, model, q)
    support = [] if cfg.no_select else retrieval.retrieve(res.memory, q, cfg.k, cfg.threshold, res.antonyms)
    return choose(cfg, res, q, cands, support)


# -- reports ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    per_category: dict[str, float]
    counts: dict[str, int]
    macro_f1: float
    micro_f1: float
    config_hash: str = ""
    label: str = ""

    @classmethod
    def from_scores(cls, scores: Sequence[tuple[str, float]], config_hash: str = "", label: str = "") -> "EvalReport":
        if not scores:
            raise ValueError("nothing to evaluate")
        sums: dict[str, float] = {}
        counts: dict[str, int] = {}
        for cat, s in scores:
            sums[cat] = sums.get(cat, 0.0) + s
            counts[cat] = counts.get(cat, 0) + 1
        cats = sorted(counts, key=lambda c: (bench.CATEGORIES.index(c) if c in bench.CATEGORIES else 99, c))
        per = {c: sums[c] / counts[c] for c in cats}
        macro = sum(per.values()) / len(per)
        micro = sum(s for _, s in scores) / len(scores)
        return cls(per, {c: counts[c] for c in cats}, macro, micro, config_hash, label)

    def check(self) -> None:
        """Raise if the report violates its own consistency identities."""
        n = sum(self.counts.values())
        weighted = sum(self.per_category[c] * self.counts[c] for c in self.counts) / n
        if abs(weighted - self.micro_f1) > 1e-9:
            raise AssertionError(f"micro F1 {self.micro_f1} != count-weighted category mean {weighted}")
        for v in (self.macro_f1, self.micro_f1, *self.per_category.values()):
            if not 0.0 <= v <= 1.0:
                raise AssertionError(f"F1 {v} outside [0, 1]")

    def to_json(self) -> str:
        d = {
            "note": REPORT_NOTE,
            "label": self.label,
            "config_hash": self.config_hash,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "per_category": self.per_category,
            "counts": self.counts,
            "total": sum(self.counts.values()),
        }
        return json.dumps(d, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "count", "mean_f1"])
        for c in self.per_category:
            w.writerow([c, self.counts[c], repr(self.per_category[c])])
        w.writerow(["macro", sum(self.counts.values()), repr(self.macro_f1)])
        w.writerow(["micro", sum(self.counts.values()), repr(self.micro_f1)])
        return buf.getvalue()

    def write(self, prefix: str | Path) -> None:
        Path(f"{prefix}.json").write_text(self.to_json(), encoding="utf-8")
        Path(f"{prefix}.csv").write_text(self.to_csv(), encoding="utf-8")


def evaluate(cfg: PipelineConfig, res: Resources, model, questions, label: str = "") -> tuple[EvalReport, list[Prediction]]:
    preds, scores = [], []
    for q in questions:
        p = answer_question(cfg, res, model, q)
        preds.append(p)
        scores.append((q.category, lang.f1(p.answer, q.gold_answer)))
    rep = EvalReport.from_scores(scores, cfg.digest(), label)
    rep.check()
    return rep, preds


def evaluate_oracle(kg, questions, around_tolerance: int = lang.DEFAULT_AROUND_TOLERANCE) -> EvalReport:
    """Score the gold sequences themselves (upper bound)."""
    return EvalReport.from_scores(
        [(q.category, lang.f1(lang.try_execute(kg, q.gold_sequence, around_tolerance), q.gold_answer)) for q in questions],
        label="oracle",
    )


def sweep(cfg: PipelineConfig, res: Resources, model, questions, ks: Sequence[int], ns: Sequence[int]) -> list[dict]:
    """Macro/micro F1 over a grid of support sizes and candidate counts."""
    if not ks or not ns:
        raise ValueError("empty sweep grid")
    if max(ns) > cfg.beam:
        raise ValueError("candidate count exceeds the beam size")
    per_q = []
    for q in questions:
        cands = candidates(cfg, res, model, q, max(ns))
        support = retrieval.retrieve(res.memory, q, max(ks), cfg.threshold, res.antonyms) if max(ks) > 0 else []
        per_q.append((q, cands, support))
    rows = []
    for k in ks:
        for n in ns:
            sub = replace(cfg, k=k, n_candidates=n, no_select=cfg.no_select or k == 0)
            scores = []
            for q, cands, support in per_q:
                p = choose(sub, res, q, cands[:n], support[:k])
                scores.append((q.category, lang.f1(p.answer, q.gold_answer)))
            rep = EvalReport.from_scores(scores, sub.digest())
            rows.append({"k": k, "n_candidates": n, "macro_f1": rep.macro_f1, "micro_f1": rep.micro_f1})
    return rows


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def run_ablations(cfg: PipelineConfig, res: Resources, full_model, questions, no_rewrite_model=None) -> list[dict]:
    """Rows for the full pipeline and the two ablations.

    ``no_rewrite_model`` should be trained on unrewritten input; without it the
    full model is fed raw questions.
    """
    settings = [
        ("full", replace(cfg, no_rewrite=False, no_select=False), full_model),
        ("no_rewrite", replace(cfg, no_rewrite=True, no_select=False), no_rewrite_model or full_model),
        ("no_select", replace(cfg, no_rewrite=False, no_select=True), full_model),
    ]
    rows = []
    for name, sub, m in settings:
        rep, _ = evaluate(sub, res, m, questions, name)
        rows.append({"setting": name, "macro_f1": rep.macro_f1, "micro_f1": rep.micro_f1})
    return rows
