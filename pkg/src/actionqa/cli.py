"""Command-line entry point (``actionqa <subcommand>``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import bench, encoding, lang, model as mdl, pipeline as P, retrieval, rewrite, search
from .kg import dump_kg, load_kg

log = logging.getLogger("actionqa")


class InvariantViolation(RuntimeError):
    pass


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _load_cfg(args) -> P.PipelineConfig:
    over = {
        "kg": getattr(args, "kg", None),
        "dataset": getattr(args, "dataset", None),
        "checkpoint": getattr(args, "checkpoint", None),
        "seed": getattr(args, "seed", None),
    }
    if args.config:
        return P.PipelineConfig.load(args.config, **over)
    return P.PipelineConfig(**{k: v for k, v in over.items() if v is not None})


def _require(cfg: P.PipelineConfig, *names: str) -> None:
    missing = [n for n in names if not getattr(cfg, n)]
    if missing:
        raise SystemExit(f"missing required path(s): {', '.join(missing)} (set in --config or via flags)")


def _resources(cfg: P.PipelineConfig, need_corpus: bool = True):
    _require(cfg, "kg", "dataset")
    kg = load_kg(cfg.kg)
    records = bench.load_dataset(cfg.dataset)
    train = bench.split(records, "train")
    memory = retrieval.Memory.load(cfg.memory) if cfg.memory else retrieval.Memory.build(train)
    corpus = None
    if need_corpus and not cfg.no_rewrite:
        if cfg.corpus:
            corpus = rewrite.RewriteCorpus.load(cfg.corpus)
        elif cfg.pairs:
            corpus = rewrite.build_rewrite_corpus(P.load_pairs(cfg.pairs, records))
    return P.Resources(kg, memory, corpus, P.load_antonyms(cfg)), records


def _model(cfg: P.PipelineConfig, path: str | None = None):
    path = path or cfg.checkpoint
    if not path:
        raise SystemExit("no checkpoint given")
    mdl.seed_everything(cfg.seed)
    return mdl.load_checkpoint(path)


# -- subcommands --------------------------------------------------------------------------


def cmd_gen(args) -> int:
    bcfg = bench.BenchConfig.from_dict(json.loads(Path(args.bench_config).read_text())) if args.bench_config else bench.BenchConfig()
    bcfg = replace(bcfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kg = bench.generate_kg(bcfg)
    records = bench.generate_questions(kg, bcfg)
    dump_kg(kg, out / "kg.jsonl")
    bench.save_dataset(records, out / "dataset.jsonl")
    (out / "bench_config.json").write_text(json.dumps(bcfg.to_dict(), indent=2) + "\n")
    for name in bench.SPLITS:
        cats = {r.category for r in bench.split(records, name)}
        if cats != set(bench.CATEGORIES):
            raise InvariantViolation(f"split {name} lacks categories {sorted(set(bench.CATEGORIES) - cats)}")
    print(f"wrote {len(kg.triples)} triples and {len(records)} questions to {out}")
    return 0


def cmd_bfs(args) -> int:
    kg = load_kg(args.kg)
    records = bench.load_dataset(args.dataset)
    if args.split != "all":
        records = bench.split(records, args.split)
    if args.sample < 1.0:
        import random

        rng = random.Random(args.seed)
        records = [r for r in records if rng.random() < args.sample]
    cfg = P.PipelineConfig(max_len=args.max_len, bfs_max_results=args.max_results, pair_policy=args.policy)
    pairs = P.find_pairs(kg, records, cfg)
    for p in pairs:
        if lang.f1(lang.try_execute(kg, p.sequence, cfg.around_tolerance), p.question.gold_answer) < 1.0:
            raise InvariantViolation(f"{p.question.id}: returned sequence does not reproduce the answer")
    P.save_pairs(pairs, args.out)
    covered = len({p.question.id for p in pairs})
    print(f"{covered}/{len(records)} questions have a pseudo sequence; {len(pairs)} pairs written to {args.out}")
    return 0


def cmd_rewrite_corpus(args) -> int:
    records = bench.load_dataset(args.dataset)
    pairs = P.load_pairs(args.pairs, records)
    corpus = rewrite.build_rewrite_corpus(pairs)
    first = {p.question.id: p for p in P.first_per_question(pairs)}
    for e in corpus.entries:
        if len(e.utterances) != len(first[e.question_id].sequence):
            raise InvariantViolation(f"{e.question_id}: utterance count differs from sequence length")
    corpus.save(args.out)
    print(f"{len(corpus)} rewrite entries written to {args.out}")
    return 0


def _train_inputs(cfg):
    _require(cfg, "pairs")
    res, records = _resources(cfg)
    train = bench.split(records, "train")
    return res, train, P.load_pairs(cfg.pairs, records)


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    if args.no_rewrite:
        cfg = replace(cfg, no_rewrite=True)
    cfg = replace(cfg, rl_epochs=0)
    res, train, pairs = _train_inputs(cfg)
    m, hist = P.train_model(cfg, res, pairs, train)
    mdl.save_checkpoint(m, args.out)
    print(json.dumps({"pretrain_loss": hist["pretrain_loss"]}))
    return 0


def cmd_train_rl(args) -> int:
    cfg = _load_cfg(args)
    if args.no_rewrite:
        cfg = replace(cfg, no_rewrite=True)
    res, records = _resources(cfg)
    train = bench.split(records, "train")
    m = _model(cfg)
    exs = [encoding.make_example(q, P.input_text(q, res, cfg, exclude_self=True)) for q in train]
    hist = mdl.train_rl(m, exs, train, res.kg, cfg.rl_epochs, cfg.rl_lr, cfg.batch_size, cfg.seed, cfg.around_tolerance)
    mdl.save_checkpoint(m, args.out)
    print(json.dumps({"rl_reward": hist}))
    return 0


def cmd_infer(args) -> int:
    cfg = _load_cfg(args)
    cfg = replace(cfg, no_rewrite=args.no_rewrite or cfg.no_rewrite, no_select=args.no_select or cfg.no_select)
    res, records = _resources(cfg)
    m = _model(cfg)
    qs = [r for r in records if (args.ids is None or r.id in args.ids) and (args.split == "all" or r.split == args.split)]
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for q in qs:
            p = P.answer_question(cfg, res, m, q)
            rec = {
                "question_id": q.id,
                "sequence": lang.serialize_sequence(p.sequence),
                "answer": lang.answer_to_json(p.answer),
                "f1": lang.f1(p.answer, q.gold_answer),
                "support": p.support,
            }
            if p.note:
                rec["note"] = p.note
            out.write(json.dumps(rec) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    cfg = replace(cfg, no_rewrite=args.no_rewrite or cfg.no_rewrite, no_select=args.no_select or cfg.no_select)
    res, records = _resources(cfg)
    qs = bench.split(records, args.split)
    if args.oracle:
        rep = P.evaluate_oracle(res.kg, qs, cfg.around_tolerance)
    else:
        rep, _ = P.evaluate(cfg, res, _model(cfg), qs, args.split)
    rep.check()
    print(rep.to_json(), end="")
    if args.out:
        rep.write(args.out)
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    res, records = _resources(cfg)
    qs = bench.split(records, args.split)
    full = _model(cfg)
    nr = _model(cfg, args.no_rewrite_checkpoint) if args.no_rewrite_checkpoint else None
    rows = P.run_ablations(cfg, res, full, qs, nr)
    text = P.rows_to_csv(rows)
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    res, records = _resources(cfg)
    qs = bench.split(records, args.split)
    m = _model(cfg)
    ks, ns = _ints(args.k), _ints(args.n)
    rows = P.sweep(cfg, res, m, qs, ks, ns)
    if 0 in ks:
        for n in ns:
            ref, _ = P.evaluate(replace(cfg, no_select=True, n_candidates=n), res, m, qs)
            row = next(r for r in rows if r["k"] == 0 and r["n_candidates"] == n)
            if row["macro_f1"] != ref.macro_f1:
                raise InvariantViolation(f"k=0 column ({row['macro_f1']}) differs from the no-select run ({ref.macro_f1})")
    text = P.rows_to_csv(rows)
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text)
    return 0


def cmd_grad_check(args) -> int:
    import torch

    mdl.seed_everything(args.seed)
    ex, vocab = toy_example()
    m = mdl.ActionGenerator(vocab, mdl.ModelConfig(d_e=args.dim, d_h=args.dim, d_s=args.dim, d_type=args.dim)).double()
    err = mdl.gradient_check(m, [ex], n_params=args.n_params, seed=args.seed)
    print(f"max relative error {err:.3e} over {args.n_params} parameters")
    if err >= args.tol:
        raise InvariantViolation(f"gradient check failed: {err:.3e} >= {args.tol:g}")
    return 0


def toy_example():
    """A two-action question used by the gradient check."""
    text = "how many instruments does bob play ?"
    arts = [
        lang.T("instrument", span=(9, 20), label="instruments"),
        lang.E("bob", span=(26, 29), label="bob"),
        lang.R("plays", span=(30, 34), label="play"),
    ]
    q = bench.QuestionRecord("toy", text, "quantitative_count", arts, 2)
    seq = (lang.Action("Select", (arts[1], arts[2], arts[0])), lang.Action("Count"))
    ex = encoding.make_example(q, None, seq)
    return ex, encoding.Vocab.build([ex])


# -- parser --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="actionqa", description="Question answering over a knowledge graph via action sequences.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def with_config(p):
        p.add_argument("--config", help="pipeline config (JSON)")
        p.add_argument("--kg")
        p.add_argument("--dataset")
        p.add_argument("--checkpoint")
        p.add_argument("--seed", type=int)
        return p

    p = sub.add_parser("gen", help="generate a synthetic graph and question set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bench-config", help="JSON benchmark config (seed flag wins)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("bfs", help="search pseudo action sequences")
    p.add_argument("--kg", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--max-len", type=int, default=lang.DEFAULT_MAX_LEN)
    p.add_argument("--max-results", type=int, default=20)
    p.add_argument("--split", default="train", choices=list(bench.SPLITS) + ["all"])
    p.add_argument("--sample", type=float, default=1.0, help="fraction of questions to search")
    p.add_argument("--policy", default="first", choices=P.PAIR_POLICIES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bfs)

    p = sub.add_parser("rewrite-corpus", help="build the question rewriting corpus")
    p.add_argument("--pairs", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_rewrite_corpus)

    p = with_config(sub.add_parser("pretrain", help="teacher-forced pretraining on pseudo pairs"))
    p.add_argument("--no-rewrite", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pretrain)

    p = with_config(sub.add_parser("train-rl", help="policy-gradient fine-tuning"))
    p.add_argument("--no-rewrite", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_rl)

    p = with_config(sub.add_parser("infer", help="answer questions"))
    p.add_argument("--split", default="test", choices=list(bench.SPLITS) + ["all"])
    p.add_argument("--ids", nargs="*")
    p.add_argument("--no-rewrite", action="store_true")
    p.add_argument("--no-select", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_infer)

    p = with_config(sub.add_parser("evaluate", help="per-category F1 report"))
    p.add_argument("--split", default="test", choices=bench.SPLITS)
    p.add_argument("--no-rewrite", action="store_true")
    p.add_argument("--no-select", action="store_true")
    p.add_argument("--oracle", action="store_true", help="score gold sequences instead of a model")
    p.add_argument("--out", help="write <out>.json and <out>.csv")
    p.set_defaults(fn=cmd_evaluate)

    p = with_config(sub.add_parser("ablate", help="full vs no-rewrite vs no-select"))
    p.add_argument("--split", default="test", choices=bench.SPLITS)
    p.add_argument("--no-rewrite-checkpoint")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_ablate)

    p = with_config(sub.add_parser("sweep", help="grid over support size and candidate count"))
    p.add_argument("--split", default="test", choices=bench.SPLITS)
    p.add_argument("--k", default="0,1,3,6")
    p.add_argument("--n", default="1,3,5")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("grad-check", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--n-params", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_grad_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
