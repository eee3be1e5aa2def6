"""Encoder-decoder over question tokens that emits action sequences.

The decoder chooses at every step from two vocabularies: the fixed one (the
functions plus end-of-sequence) and the per-question arguments. A gate driven
by the attention context mixes the two distributions. Decoding is restricted
to tokens that keep the program well-typed; the allowed set is renormalised.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from . import lang
from .encoding import EOS, N_FIXED, Example, Grammar, GrammarState, Vocab, targets_to_sequence
from .lang import Candidate

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "actionqa-checkpoint"
CHECKPOINT_VERSION = 1
FUNC_KIND, ARG_KIND = 0, 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelConfig:
    d_e: int = 100
    d_h: int = 300
    d_s: int = 300
    d_type: int = 100
    max_len: int = lang.DEFAULT_MAX_LEN

    def __post_init__(self):
        if self.d_h % 2:
            raise ValueError("d_h must be even (two directions)")
        if min(self.d_e, self.d_h, self.d_s, self.d_type) < 1:
            raise ValueError("dimensions must be positive")


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.set_num_threads(1)


@dataclass
class Batch:
    tokens: torch.Tensor  # B x N
    lengths: torch.Tensor  # B
    arg_tokens: torch.Tensor  # B x M x L
    arg_counts: torch.Tensor  # B x M
    arg_mask: torch.Tensor  # B x M
    examples: list[Example]


@dataclass
class EncoderOutput:
    H: torch.Tensor  # B x N x d_h
    H_mask: torch.Tensor  # B x N
    E_G: torch.Tensor  # B x M x d_e
    G_mask: torch.Tensor  # B x M
    h0: torch.Tensor
    c0: torch.Tensor

    def index(self, idx: torch.Tensor) -> "EncoderOutput":
        return EncoderOutput(*(t[idx] for t in (self.H, self.H_mask, self.E_G, self.G_mask, self.h0, self.c0)))


@dataclass
class StepOutput:
    log_probs: torch.Tensor  # B x (N_FIXED + M), unmasked mixture
    p_fix: torch.Tensor
    p_dyn: torch.Tensor
    gate: torch.Tensor  # B
    alpha: torch.Tensor  # B x N
    h: torch.Tensor
    c: torch.Tensor


class ActionGenerator(nn.Module):
    def __init__(self, vocab: Vocab, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.vocab = vocab
        self.cfg = cfg
        d_e, d_h, d_s, d_t = cfg.d_e, cfg.d_h, cfg.d_s, cfg.d_type
        self.embedding = nn.Embedding(len(vocab), d_e, padding_idx=0)
        self.encoder = nn.LSTM(d_e, d_h // 2, batch_first=True, bidirectional=True)
        self.bridge = nn.Linear(d_h, d_s)
        self.W_func = nn.Parameter(torch.randn(N_FIXED, d_e) * 0.1)
        self.go = nn.Parameter(torch.randn(d_e) * 0.1)
        self.W_type = nn.Parameter(torch.randn(2, d_t) * 0.1)
        self.decoder = nn.LSTMCell(d_e + d_t + d_h, d_s)
        self.W_a = nn.Parameter(torch.randn(d_s, d_h) / math.sqrt(d_h))
        self.W_p = nn.Parameter(torch.randn(d_s, d_e) / math.sqrt(d_e))
        self.W_o = nn.Parameter(torch.randn(d_s, N_FIXED) / math.sqrt(d_s))
        self.W_f = nn.Parameter(torch.randn(d_h) / math.sqrt(d_h))

    @property
    def dtype(self):
        return self.W_o.dtype

    # -- batching ------------------------------------------------------------------

    def batch(self, examples: Sequence[Example]) -> Batch:
        B = len(examples)
        if B == 0:
            raise ValueError("empty batch")
        for ex in examples:
            if not ex.tokens:
                raise ValueError(f"{ex.qid}: no tokens")
            if not ex.args:
                raise ValueError(f"{ex.qid}: no arguments")
        N = max(len(ex.tokens) for ex in examples)
        M = max(len(ex.args) for ex in examples)
        L = max(len(t) for ex in examples for t in ex.arg_tokens)
        tok = torch.zeros(B, N, dtype=torch.long)
        arg = torch.zeros(B, M, L, dtype=torch.long)
        cnt = torch.ones(B, M, dtype=torch.long)
        amask = torch.zeros(B, M, dtype=torch.bool)
        for b, ex in enumerate(examples):
            tok[b, : len(ex.tokens)] = torch.tensor(self.vocab.ids(ex.tokens))
            for j, at in enumerate(ex.arg_tokens):
                arg[b, j, : len(at)] = torch.tensor(self.vocab.ids(at))
                cnt[b, j] = len(at)
                amask[b, j] = True
        lengths = torch.tensor([len(ex.tokens) for ex in examples])
        return Batch(tok, lengths, arg, cnt, amask, list(examples))

    # -- network -------------------------------------------------------------------

    def encode(self, batch: Batch) -> EncoderOutput:
        n_vocab = len(self.vocab)
        if int(batch.tokens.max()) >= n_vocab or int(batch.arg_tokens.max()) >= n_vocab:
            raise ValueError("token id outside the vocabulary")
        emb = self.embedding(batch.tokens)
        packed = pack_padded_sequence(emb, batch.lengths, batch_first=True, enforce_sorted=False)
        out, _ = self.encoder(packed)
        H, _ = pad_packed_sequence(out, batch_first=True, total_length=batch.tokens.shape[1])
        H_mask = batch.tokens.new_zeros(batch.tokens.shape, dtype=torch.bool)
        for b, n in enumerate(batch.lengths.tolist()):
            H_mask[b, :n] = True
        a_emb = self.embedding(batch.arg_tokens)  # B x M x L x d_e (padding rows are zero)
        E_G = a_emb.sum(2) / batch.arg_counts.unsqueeze(-1).to(a_emb.dtype)
        mean_H = (H * H_mask.unsqueeze(-1)).sum(1) / batch.lengths.unsqueeze(-1).to(H.dtype)
        h0 = torch.tanh(self.bridge(mean_H))
        return EncoderOutput(H, H_mask, E_G, batch.arg_mask, h0, torch.zeros_like(h0))

    def input_embedding(self, enc: EncoderOutput, prev: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Embedding and kind index of the previous token; -1 stands for the start symbol."""
        B = prev.shape[0]
        is_arg = prev >= N_FIXED
        fix_idx = prev.clamp(0, N_FIXED - 1)
        arg_idx = (prev - N_FIXED).clamp(min=0)
        o_fix = self.W_func[fix_idx]
        o_arg = enc.E_G[torch.arange(B), arg_idx.clamp(max=enc.E_G.shape[1] - 1)]
        o = torch.where(is_arg.unsqueeze(-1), o_arg, o_fix)
        o = torch.where((prev < 0).unsqueeze(-1), self.go.expand(B, -1), o)
        return o, is_arg.long()

    def decode_step(self, enc: EncoderOutput, h, c, prev: torch.Tensor) -> StepOutput:
        o, kind = self.input_embedding(enc, prev)
        tau = self.W_type[kind]
        e = torch.einsum("bs,sh,bnh->bn", h, self.W_a, enc.H)
        e = e.masked_fill(~enc.H_mask, float("-inf"))
        alpha = torch.softmax(e, dim=-1)
        ctx = torch.einsum("bn,bnh->bh", alpha, enc.H)
        h, c = self.decoder(torch.cat([o, tau, ctx], dim=-1), (h, c))
        logit_fix = h @ self.W_o
        logit_dyn = torch.einsum("bs,se,bme->bm", h, self.W_p, enc.E_G)
        logit_dyn = logit_dyn.masked_fill(~enc.G_mask, float("-inf"))
        g_logit = ctx @ self.W_f
        log_fix = F.log_softmax(logit_fix, dim=-1)
        log_dyn = F.log_softmax(logit_dyn, dim=-1)
        log_probs = torch.cat(
            [F.logsigmoid(g_logit).unsqueeze(-1) + log_fix, F.logsigmoid(-g_logit).unsqueeze(-1) + log_dyn], dim=-1
        )
        return StepOutput(log_probs, log_fix.exp(), log_dyn.exp(), torch.sigmoid(g_logit), alpha, h, c)

    # -- teacher forcing -----------------------------------------------------------

    def sequence_log_probs(self, batch: Batch, targets: Sequence[Sequence[int]], grammars=None) -> torch.Tensor:
        """Masked, renormalised log P of each target path (B,)."""
        B = len(targets)
        T = max(len(t) for t in targets)
        M = batch.arg_mask.shape[1]
        V = N_FIXED + M
        tgt = torch.full((B, T), -1, dtype=torch.long)
        allowed = torch.zeros(B, T, V, dtype=torch.bool)
        for b, (ex, t) in enumerate(zip(batch.examples, targets)):
            g = grammars[b] if grammars is not None else Grammar(ex.args, self.cfg.max_len)
            tgt[b, : len(t)] = torch.tensor(t)
            for i, ids in enumerate(g.masks(t)):
                allowed[b, i, list(ids)] = True
        enc = self.encode(batch)
        h, c = enc.h0, enc.c0
        prev = torch.full((B,), -1, dtype=torch.long)
        total = torch.zeros(B, dtype=self.dtype)
        for i in range(T):
            st = self.decode_step(enc, h, c, prev)
            h, c = st.h, st.c
            live = tgt[:, i] >= 0
            lp = st.log_probs.masked_fill(~allowed[:, i], float("-inf"))
            norm = torch.logsumexp(lp.masked_fill(~live.unsqueeze(-1), 0.0), dim=-1)
            picked = lp.gather(1, tgt[:, i].clamp(min=0).unsqueeze(-1)).squeeze(-1)
            total = total + torch.where(live, picked - norm, torch.zeros_like(norm))
            prev = torch.where(live, tgt[:, i], prev)
        return total

    def loss(self, examples: Sequence[Example]) -> torch.Tensor:
        """Mean negative log-likelihood of the examples' targets."""
        batch = self.batch(examples)
        return -self.sequence_log_probs(batch, [ex.target for ex in examples]).mean()

    # -- decoding ------------------------------------------------------------------

    def _masked(self, st: StepOutput, allowed: Sequence[Sequence[int]]) -> torch.Tensor:
        mask = torch.zeros_like(st.log_probs, dtype=torch.bool)
        for b, ids in enumerate(allowed):
            mask[b, list(ids)] = True
        lp = st.log_probs.masked_fill(~mask, float("-inf"))
        return lp - torch.logsumexp(lp, dim=-1, keepdim=True)

    @torch.no_grad()
    def greedy(self, ex: Example) -> Candidate | None:
        g = Grammar(ex.args, self.cfg.max_len)
        enc = self.encode(self.batch([ex]))
        h, c = enc.h0, enc.c0
        gs, prev, toks, total = g.initial(), -1, [], 0.0
        while not gs.done:
            allowed = g.allowed(gs)
            if not allowed:
                return None
            st = self.decode_step(enc, h, c, torch.tensor([prev]))
            h, c = st.h, st.c
            lp = self._masked(st, [allowed])[0]
            best = max(allowed, key=lambda t: (float(lp[t]), -t))
            total += float(lp[best])
            toks.append(best)
            gs = g.advance(gs, best)
            prev = best
        return Candidate(targets_to_sequence(toks, ex.args), total, total / len(toks))

    @torch.no_grad()
    def beam_search(self, ex: Example, beam: int = 10, n_best: int = 5) -> list[Candidate]:
        if not beam >= n_best >= 1:
            raise ValueError("need beam >= n_best >= 1")
        g = Grammar(ex.args, self.cfg.max_len)
        enc1 = self.encode(self.batch([ex]))

        def step(hyps):
            idx = torch.zeros(len(hyps), dtype=torch.long)
            enc = enc1.index(idx)
            h = torch.cat([s[0] for s in (hy.state for hy in hyps)])
            c = torch.cat([s[1] for s in (hy.state for hy in hyps)])
            prev = torch.tensor([hy.state[3] for hy in hyps])
            st = self.decode_step(enc, h, c, prev)
            allowed = [g.allowed(hy.state[2]) for hy in hyps]
            lp = self._masked(st, allowed)
            out = []
            for b, hy in enumerate(hyps):
                exps = []
                for t in allowed[b]:
                    gs2 = g.advance(hy.state[2], t)
                    exps.append((t, float(lp[b, t]), gs2.done, (st.h[b : b + 1], st.c[b : b + 1], gs2, t)))
                out.append(exps)
            return out

        init = (enc1.h0, enc1.c0, g.initial(), -1)
        max_steps = self.cfg.max_len * 4 + 1
        found = beam_search_core(init, step, beam, max_steps)
        cands = [
            Candidate(targets_to_sequence(toks, ex.args), lp, lp / len(toks)) for toks, lp in found
        ]
        cands.sort(key=lambda c: (-c.score, lang.serialize_sequence(c.sequence)))
        return cands[:n_best]

    @torch.no_grad()
    def sample(self, examples: Sequence[Example], generator: torch.Generator) -> list[list[int]]:
        """One type-valid token path per example drawn from the masked distribution."""
        grammars = [Grammar(ex.args, self.cfg.max_len) for ex in examples]
        enc = self.encode(self.batch(examples))
        B = len(examples)
        h, c = enc.h0, enc.c0
        states = [g.initial() for g in grammars]
        prev = torch.full((B,), -1, dtype=torch.long)
        paths: list[list[int]] = [[] for _ in range(B)]
        while not all(s.done for s in states):
            st = self.decode_step(enc, h, c, prev)
            h, c = st.h, st.c
            allowed = [g.allowed(s) if not s.done else (EOS,) for g, s in zip(grammars, states)]
            probs = self._masked(st, allowed).exp()
            draws = torch.multinomial(probs, 1, generator=generator).squeeze(-1)
            for b in range(B):
                if states[b].done:
                    continue
                t = int(draws[b])
                paths[b].append(t)
                states[b] = grammars[b].advance(states[b], t)
            prev = draws
        return paths


# -- generic beam search -----------------------------------------------------------------


@dataclass(frozen=True)
class Hyp:
    tokens: tuple
    log_prob: float
    state: object


def beam_search_core(init_state, step: Callable, beam: int, max_steps: int) -> list[tuple[tuple, float]]:
    """Token-level beam search.

    ``step(hyps)`` returns, for each live hypothesis, its expansions as
    ``(token, log_prob, finished, new_state)``. The ``beam`` best expansions
    by cumulative log-prob (ties: token tuple) survive each round; finished
    ones leave the beam. Returns every finished ``(tokens, log_prob)``.
    """
    alive = [Hyp((), 0.0, init_state)]
    finished: list[tuple[tuple, float]] = []
    for _ in range(max_steps):
        if not alive:
            break
        pool = []
        for hy, exps in zip(alive, step(alive)):
            for tok, lp, done, st in exps:
                pool.append((hy.log_prob + lp, hy.tokens + (tok,), done, st))
        pool.sort(key=lambda x: (-x[0], x[1]))
        alive = []
        for lp, toks, done, st in pool[:beam]:
            if done:
                finished.append((toks, lp))
            else:
                alive.append(Hyp(toks, lp, st))
    return finished


# -- training --------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-4
    batch_size: int = 32
    seed: int = 0
    clip: float = 5.0


def _check_finite(loss: torch.Tensor, where: str) -> None:
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {float(loss.detach())} at {where}")


def pretrain(model: ActionGenerator, examples: Sequence[Example], cfg: TrainConfig = TrainConfig(), on_epoch=None) -> list[float]:
    """Teacher-forced training; returns the mean loss of each epoch."""
    if not examples:
        raise ValueError("no training pairs")
    if any(ex.target is None for ex in examples):
        raise ValueError("every pretraining example needs a target")
    rng = random.Random(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    grammars = {id(ex): Grammar(ex.args, model.cfg.max_len) for ex in examples}
    history = []
    order = list(range(len(examples)))
    model.train()
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        total, n = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            chunk = [examples[i] for i in order[s : s + cfg.batch_size]]
            batch = model.batch(chunk)
            lp = model.sequence_log_probs(batch, [ex.target for ex in chunk], [grammars[id(ex)] for ex in chunk])
            loss = -lp.mean()
            _check_finite(loss, f"epoch {epoch} batch {s // cfg.batch_size}")
            opt.zero_grad()
            loss.backward()
            if cfg.clip:
                nn.utils.clip_grad_norm_(model.parameters(), cfg.clip)
            opt.step()
            total += float(-lp.detach().sum())
            n += len(chunk)
        history.append(total / n)
        log.info("pretrain epoch %d loss %.4f", epoch + 1, history[-1])
        if on_epoch:
            on_epoch(epoch, history[-1])
    model.eval()
    return history


@dataclass
class Baselines:
    """Per-question exponential moving average of past rewards."""

    decay: float = 0.9
    bonus: float = 0.5
    values: dict = field(default_factory=dict)

    def get(self, qid: str) -> float:
        return self.values.get(qid, 0.0)


def adaptive_reward(R: float, baseline: float, decay: float = 0.9, bonus: float = 0.5) -> tuple[float, float]:
    """(adjusted reward, updated baseline)."""
    if not 0.0 <= R <= 1.0:
        raise ValueError("reward must lie in [0, 1]")
    adj = R - baseline + (bonus if R == 1.0 else 0.0)
    return adj, decay * baseline + (1 - decay) * R


def reinforce_batch(model, opt, examples: Sequence[Example], questions, kg, baselines: Baselines, generator, around_tolerance=lang.DEFAULT_AROUND_TOLERANCE, clip: float = 5.0):
    """Sample, score, and apply one policy-gradient update for a batch. Returns raw rewards."""
    paths = model.sample(examples, generator)
    rewards, adjusted = [], []
    for ex, q, path in zip(examples, questions, paths):
        seq = targets_to_sequence(path, ex.args)
        R = lang.f1(lang.try_execute(kg, seq, around_tolerance), q.gold_answer)
        adj, baselines.values[q.id] = adaptive_reward(R, baselines.get(q.id), baselines.decay, baselines.bonus)
        rewards.append(R)
        adjusted.append(adj)
    weights = torch.tensor(adjusted, dtype=model.dtype)
    model.train()
    if torch.any(weights != 0):
        lp = model.sequence_log_probs(model.batch(examples), paths)
        loss = -(weights * lp).sum() / len(examples)
        _check_finite(loss, "policy-gradient step")
        opt.zero_grad()
        loss.backward()
        if clip:
            nn.utils.clip_grad_norm_(model.parameters(), clip)
        opt.step()
    model.eval()
    return rewards, paths


def reinforce_step(model, opt, ex: Example, q, kg, baselines: Baselines, generator, around_tolerance=lang.DEFAULT_AROUND_TOLERANCE):
    rewards, paths = reinforce_batch(model, opt, [ex], [q], kg, baselines, generator, around_tolerance)
    return rewards[0], paths[0]


def train_rl(model, examples: Sequence[Example], questions, kg, epochs: int = 50, lr: float = 1e-5, batch_size: int = 32, seed: int = 0, around_tolerance=lang.DEFAULT_AROUND_TOLERANCE, on_epoch=None) -> list[float]:
    """REINFORCE epochs; returns mean raw reward per epoch."""
    rng = random.Random(seed)
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    baselines = Baselines()
    order = list(range(len(examples)))
    history = []
    for epoch in range(epochs):
        rng.shuffle(order)
        total = 0.0
        for s in range(0, len(order), batch_size):
            idx = order[s : s + batch_size]
            r, _ = reinforce_batch(
                model, opt, [examples[i] for i in idx], [questions[i] for i in idx], kg, baselines, gen, around_tolerance
            )
            total += sum(r)
        history.append(total / max(1, len(order)))
        log.info("rl epoch %d reward %.4f", epoch + 1, history[-1])
        if on_epoch:
            on_epoch(epoch, history[-1])
    return history


# -- gradient check -------------------------------------------------------------------


def gradient_check(model: ActionGenerator, examples: Sequence[Example], n_params: int = 200, h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error of autograd vs central differences on sampled scalars."""
    if model.dtype != torch.float64:
        raise ValueError("gradient check needs a float64 model")
    model.zero_grad()
    loss = model.loss(examples)
    loss.backward()
    named = [(n, p) for n, p in model.named_parameters()]
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for _ in range(n_params):
            name, p = named[int(rng.integers(len(named)))]
            i = int(rng.integers(p.numel()))
            flat = p.view(-1)
            old = float(flat[i])
            flat[i] = old + h
            up = float(model.loss(examples))
            flat[i] = old - h
            down = float(model.loss(examples))
            flat[i] = old
            num = (up - down) / (2 * h)
            ana = float(p.grad.view(-1)[i]) if p.grad is not None else 0.0
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


# -- checkpoints -------------------------------------------------------------------


def save_checkpoint(model: ActionGenerator, path: str | Path) -> None:
    state = {k: v.detach().cpu() for k, v in model.state_dict().items()}
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(model.cfg),
            "vocab": list(model.vocab.itos),
            "shapes": {k: list(v.shape) for k, v in state.items()},
            "state": state,
        },
        path,
    )


def load_checkpoint(path: str | Path) -> ActionGenerator:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT or blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    vocab = Vocab([])
    vocab.itos = list(blob["vocab"])
    vocab.stoi = {t: i for i, t in enumerate(vocab.itos)}
    model = ActionGenerator(vocab, ModelConfig(**blob["config"]))
    for k, v in blob["state"].items():
        if list(v.shape) != blob["shapes"][k]:
            raise ValueError(f"{path}: tensor {k} does not match its shape manifest")
    model.load_state_dict(blob["state"])
    if blob["state"]["W_o"].dtype == torch.float64:
        model.double()
    model.eval()
    return model
