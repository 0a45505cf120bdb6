"""Decoder-only causal LM: supplies the native embedding table, scores
spliced embedding sequences, and generates greedily. Pretrained once on
the generated corpus, then frozen for every later stage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, numerics as nm
from .numerics import Tensor, Tape
from .schedule import ScheduleCfg, lr_at
from .tokenizer import EOS


class ContextOverflowError(ValueError):
    pass


@dataclass
class LMConfig:
    vocab_size: int = 128
    d_m: int = 96
    n_blocks: int = 3
    n_heads: int = 4
    context: int = 256


class DecoderLM:
    def __init__(self, rng, cfg: LMConfig):
        self.cfg = cfg
        self.emb = Tensor(
            (rng.standard_normal((cfg.vocab_size, cfg.d_m)) * 0.1).astype(np.float32),
            requires_grad=True)
        self.pos = nn.sinusoidal_positions(cfg.context, cfg.d_m)
        self.blocks = [nn.TransformerBlock(rng, cfg.d_m, cfg.n_heads, causal=True)
                       for _ in range(cfg.n_blocks)]
        self.ln_g = Tensor(np.ones(cfg.d_m, dtype=np.float32), requires_grad=True)
        self.ln_b = Tensor(np.zeros(cfg.d_m, dtype=np.float32), requires_grad=True)
        self.head = nn.Linear(rng, cfg.d_m, cfg.vocab_size)  # untied output head
        self.frozen = False
        self.truncation_warnings = 0

    def embed_tokens(self, ids) -> Tensor:
        return nm.embedding(self.emb, ids)

    def forward_embeddings(self, embeds: Tensor) -> Tensor:
        E = embeds.shape[0]
        if E == 0:
            raise ValueError("forward_embeddings: zero-length input")
        if E > self.cfg.context:
            raise ContextOverflowError(f"sequence length {E} > context {self.cfg.context}")
        x = nm.add(embeds, Tensor(self.pos[:E]))
        for b in self.blocks:
            x = b(x)
        x = nm.layer_norm(x, self.ln_g, self.ln_b)
        return self.head(x)

    def forward_tokens(self, ids) -> Tensor:
        return self.forward_embeddings(self.embed_tokens(ids))

    def generate(self, prefix_embeds: Tensor, max_new: int) -> list[int]:
        """Greedy decoding; new tokens re-enter via the native table."""
        if prefix_embeds.shape[0] == 0:
            raise ValueError("generate: empty prefix")
        embeds = prefix_embeds
        out = []
        for _ in range(max_new):
            if embeds.shape[0] >= self.cfg.context:
                raise ContextOverflowError(
                    f"generate: context {self.cfg.context} exhausted")
            logits = self.forward_embeddings(embeds)
            nxt = int(np.argmax(logits.data[-1]))
            if nxt == EOS:
                break
            out.append(nxt)
            embeds = nm.concat_rows([embeds, nm.embedding(self.emb, [nxt])])
        return out

    def parameters(self):
        ps = [self.emb]
        for b in self.blocks:
            ps.extend(b.parameters())
        ps.extend([self.ln_g, self.ln_b])
        ps.extend(self.head.parameters())
        return ps

    def named_parameters(self):
        return {f"lm.{i}": p for i, p in enumerate(self.parameters())}

    def freeze(self):
        self.frozen = True
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None


def perplexity(model: DecoderLM, sequences) -> float:
    """exp of mean next-token CE over the given token sequences."""
    total, count = 0.0, 0
    for ids in sequences:
        ids = _truncate(model, ids)
        if len(ids) < 2:
            continue
        logits = model.forward_tokens(ids[:-1])
        loss = nm.masked_cross_entropy(
            logits, ids[1:], np.ones(len(ids) - 1, dtype=bool))
        total += loss.item() * (len(ids) - 1)
        count += len(ids) - 1
    return float(np.exp(total / max(count, 1)))


def _truncate(model: DecoderLM, ids):
    if len(ids) > model.cfg.context:
        model.truncation_warnings += 1
        return ids[: model.cfg.context]
    return ids


def pretrain_lm(model: DecoderLM, corpus, cfg: ScheduleCfg, seed: int = 0,
                heldout=None):
    """Next-token CE over the corpus; returns (per-epoch loss curve,
    final held-out perplexity). The model is frozen on exit."""
    corpus = [list(ids) for ids in corpus if len(ids) >= 2]
    if not corpus:
        raise ValueError("pretrain_lm: empty corpus")
    rng = np.random.default_rng(seed)
    steps_per_epoch = max(1, len(corpus) // cfg.batch_size)
    total = ScheduleCfg(cfg.base_lr, cfg.warmup_frac,
                        steps_per_epoch * cfg.epochs, cfg.batch_size, cfg.epochs)
    opt = nm.Adam(model.parameters(), lr=cfg.base_lr)
    step = 0
    curve = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(corpus))
        losses = []
        for bi in range(steps_per_epoch):
            batch = [corpus[j] for j in order[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]]
            opt.zero_grad()
            batch_loss = 0.0
            with Tape() as tape:
                parts = []
                for ids in batch:
                    ids = _truncate(model, ids)
                    logits = model.forward_tokens(ids[:-1])
                    parts.append(nm.masked_cross_entropy(
                        logits, ids[1:], np.ones(len(ids) - 1, dtype=bool)))
                total_loss = parts[0]
                for p in parts[1:]:
                    total_loss = nm.add(total_loss, p)
                total_loss = nm.scale(total_loss, 1.0 / len(parts))
                tape.backward(total_loss)
                batch_loss = total_loss.item()
            opt.step(lr=lr_at(step, total))
            step += 1
            losses.append(batch_loss)
        curve.append(float(np.mean(losses)))
    model.freeze()
    ppl = perplexity(model, heldout) if heldout is not None else float("nan")
    return curve, ppl
