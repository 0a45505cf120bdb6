"""Dual-modality encoder: a text branch, an acoustic branch, and a shared
mapper that places both in one latent space.

The mapper is a single parameter set used verbatim by both branches, so
closeness in latent space has to come from training the branches toward
each other, not from copied weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn, numerics as nm
from .numerics import Tensor, Tape
from .schedule import ScheduleCfg, lr_at
from .synthspeech import AcousticSeq
from .tokenizer import TokenSeq


@dataclass
class EncoderConfig:
    vocab_size: int = 128
    d_t: int = 64
    d_a: int = 32
    d_u: int = 64
    n_blocks: int = 2
    n_mapper: int = 2
    n_heads: int = 4
    r: int = 4
    max_len: int = 128


@dataclass
class LatentSeq:
    vectors: np.ndarray  # L x d_u

    def __len__(self):
        return self.vectors.shape[0]


class TextEncoder:
    def __init__(self, rng, cfg: EncoderConfig):
        self.cfg = cfg
        self.emb = Tensor(
            (rng.standard_normal((cfg.vocab_size, cfg.d_t)) * 0.5).astype(np.float32),
            requires_grad=True)
        # learned positions, branch-specific init: a shared deterministic
        # encoding would hand both branches a large common latent component
        # and fake alignment before any training happens
        self.pos = Tensor((rng.standard_normal((cfg.max_len, cfg.d_t)) * 0.3).astype(np.float32),
                          requires_grad=True)
        self.blocks = [nn.TransformerBlock(rng, cfg.d_t, cfg.n_heads) for _ in range(cfg.n_blocks)]

    def __call__(self, ids) -> Tensor:
        if len(ids) == 0:
            raise ValueError("text encoder: empty input")
        x = nm.embedding(self.emb, ids)
        x = nm.add(x, nm.slice_rows(self.pos, 0, len(ids)))
        for b in self.blocks:
            x = b(x)
        return x

    def parameters(self):
        ps = [self.emb, self.pos]
        for b in self.blocks:
            ps.extend(b.parameters())
        return ps


class SpeechEncoder:
    def __init__(self, rng, cfg: EncoderConfig):
        self.cfg = cfg
        self.proj = nn.Linear(rng, cfg.d_a, cfg.d_t)
        self.pos = Tensor((rng.standard_normal((cfg.max_len, cfg.d_t)) * 0.3).astype(np.float32),
                          requires_grad=True)
        self.blocks = [nn.TransformerBlock(rng, cfg.d_t, cfg.n_heads) for _ in range(cfg.n_blocks)]

    def __call__(self, frames: np.ndarray, r: int) -> Tensor:
        if frames.shape[0] < r:
            raise ValueError(f"speech encoder: {frames.shape[0]} frames < r={r}")
        x = self.proj(Tensor(frames))
        x = nm.pool_rows_mean(x, r)
        x = nm.add(x, nm.slice_rows(self.pos, 0, x.shape[0]))
        for b in self.blocks:
            x = b(x)
        return x

    def parameters(self):
        ps = list(self.proj.parameters()) + [self.pos]
        for b in self.blocks:
            ps.extend(b.parameters())
        return ps


class UnifiedMapper:
    def __init__(self, rng, cfg: EncoderConfig):
        self.blocks = [nn.TransformerBlock(rng, cfg.d_t, cfg.n_heads) for _ in range(cfg.n_mapper)]
        self.out = nn.Linear(rng, cfg.d_t, cfg.d_u)

    def __call__(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        return self.out(x)

    def parameters(self):
        ps = []
        for b in self.blocks:
            ps.extend(b.parameters())
        ps.extend(self.out.parameters())
        return ps


class UnifiedEncoder:
    """Text branch + acoustic branch + shared mapper.

    ``speech_invocations`` counts every pass through the acoustic branch;
    the text-only training stages assert it stays untouched.
    """

    def __init__(self, rng, cfg: EncoderConfig):
        self.cfg = cfg
        self.text = TextEncoder(rng, cfg)
        self.speech = SpeechEncoder(rng, cfg)
        self.mapper = UnifiedMapper(rng, cfg)
        self.frozen = False
        self.speech_invocations = 0

    def forward_text(self, ids) -> Tensor:
        return self.mapper(self.text(ids))

    def forward_speech(self, frames: np.ndarray, r: int | None = None) -> Tensor:
        self.speech_invocations += 1
        return self.mapper(self.speech(frames, r if r is not None else self.cfg.r))

    def encode_text(self, x: TokenSeq) -> LatentSeq:
        if len(x) == 0:
            raise ValueError("encode_text: empty sequence")
        return LatentSeq(self.forward_text(x.ids).data.copy())

    def encode_speech(self, x: AcousticSeq) -> LatentSeq:
        r = x.frames_per_token if x.frames_per_token >= 1 else self.cfg.r
        if x.num_frames < r:
            raise ValueError(f"encode_speech: {x.num_frames} frames < r={r}")
        return LatentSeq(self.forward_speech(x.frames, r).data.copy())

    def parameters(self):
        return self.text.parameters() + self.speech.parameters() + self.mapper.parameters()

    def named_parameters(self):
        out = {}
        for tag, mod in (("text", self.text), ("speech", self.speech), ("mapper", self.mapper)):
            for i, p in enumerate(mod.parameters()):
                out[f"{tag}.{i}"] = p
        return out

    def freeze(self):
        self.frozen = True
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None


def alignment_residual(enc: UnifiedEncoder, text: TokenSeq, speech: AcousticSeq):
    """(positionwise MSE, mean positionwise cosine) between the two latents."""
    lt = enc.encode_text(text).vectors
    ls = enc.encode_speech(speech).vectors
    return latent_residual(lt, ls)


def latent_residual(lt: np.ndarray, ls: np.ndarray):
    if lt.shape != ls.shape:
        raise ValueError(f"alignment_residual: latent shapes {lt.shape} vs {ls.shape}")
    mse = float(((lt - ls) ** 2).mean())
    nt = lt / (np.linalg.norm(lt, axis=1, keepdims=True) + 1e-12)
    ns = ls / (np.linalg.norm(ls, axis=1, keepdims=True) + 1e-12)
    cos = float((nt * ns).sum(axis=1).mean())
    return mse, cos


@dataclass
class AlignCfg:
    schedule: ScheduleCfg = field(default_factory=lambda: ScheduleCfg(base_lr=1e-3, batch_size=32, epochs=4))
    mse_weight: float = 1.0
    contrastive_weight: float = 0.5
    temperature: float = 0.07
    # auxiliary token-identity CE on both branches; keeps latents linearly
    # decodable while the MSE/contrastive terms pull the branches together.
    # Without it the branches can satisfy alignment with position-heavy
    # codes that a small projector cannot turn back into words.
    token_ce_weight: float = 0.5


def _mean_of(scalars):
    total = scalars[0]
    for s in scalars[1:]:
        total = nm.add(total, s)
    return nm.scale(total, 1.0 / len(scalars))


def train_alignment(enc: UnifiedEncoder, pairs, cfg: AlignCfg, seed: int = 0):
    """Pull paired text/speech latents together (positionwise regression)
    while keeping positions discriminable (in-batch contrastive term) and
    latents token-decodable (auxiliary CE head, dropped after training).

    Pairs must come from fixed-duration rendering so latent lengths match.
    Returns the per-epoch mean loss curve; the encoder is frozen on exit.
    """
    pairs = list(pairs)
    rng = np.random.default_rng(seed)
    sched = cfg.schedule
    tok_head = None
    params = enc.parameters()
    if cfg.token_ce_weight > 0:
        tok_head = nn.Linear(np.random.default_rng((seed, 0x70CE)),
                             enc.cfg.d_u, enc.cfg.vocab_size)
        params = params + tok_head.parameters()
    steps_per_epoch = max(1, len(pairs) // sched.batch_size)
    total = ScheduleCfg(sched.base_lr, sched.warmup_frac,
                        steps_per_epoch * sched.epochs, sched.batch_size, sched.epochs)
    opt = nm.Adam(params, lr=sched.base_lr)
    step = 0
    curve = []
    for _ in range(sched.epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for bi in range(steps_per_epoch):
            batch = [pairs[j] for j in order[bi * sched.batch_size:(bi + 1) * sched.batch_size]]
            with Tape() as tape:
                mses, ces, t_rows, s_rows = [], [], [], []
                for text, speech in batch:
                    lt = enc.forward_text(text.ids)
                    ls = enc.forward_speech(speech.frames, speech.frames_per_token)
                    if lt.shape != ls.shape:
                        raise ValueError(
                            f"train_alignment: latent length mismatch {lt.shape} vs {ls.shape}")
                    mses.append(nm.mse(lt, ls))
                    if tok_head is not None:
                        ids = np.asarray(text.ids)
                        sup = np.ones(len(ids), dtype=bool)
                        ces.append(nm.masked_cross_entropy(tok_head(lt), ids, sup))
                        ces.append(nm.masked_cross_entropy(tok_head(ls), ids, sup))
                    t_rows.append(lt)
                    s_rows.append(ls)
                loss = nm.scale(_mean_of(mses), cfg.mse_weight)
                if ces:
                    loss = nm.add(loss, nm.scale(_mean_of(ces), cfg.token_ce_weight))
                if cfg.contrastive_weight > 0:
                    tn = nm.normalize_rows(nm.concat_rows(t_rows))
                    sn = nm.normalize_rows(nm.concat_rows(s_rows))
                    logits = nm.scale(nm.matmul(tn, nm.transpose(sn)), 1.0 / cfg.temperature)
                    idx = np.arange(logits.shape[0])
                    ones = np.ones(logits.shape[0], dtype=bool)
                    ce_ts = nm.masked_cross_entropy(logits, idx, ones)
                    ce_st = nm.masked_cross_entropy(nm.transpose(logits), idx, ones)
                    nce = nm.scale(nm.add(ce_ts, ce_st), 0.5)
                    loss = nm.add(loss, nm.scale(nce, cfg.contrastive_weight))
                opt.zero_grad()
                tape.backward(loss)
            opt.step(lr=lr_at(step, total))
            step += 1
            losses.append(loss.item())
        curve.append(float(np.mean(losses)))
    enc.freeze()
    return curve


def train_control(enc: UnifiedEncoder, pairs, cfg: AlignCfg, seed: int = 0):
    """Ablation control: per-modality autoencoding only, no cross-modal
    objective. Latents stay informative but the two branches never meet."""
    pairs = list(pairs)
    rng = np.random.default_rng(seed)
    d_u = enc.cfg.d_u
    head_rng = np.random.default_rng(seed + 1)
    tok_head = nn.Linear(head_rng, d_u, enc.cfg.vocab_size)
    frame_head = nn.Linear(head_rng, d_u, enc.cfg.d_a)
    sched = cfg.schedule
    steps_per_epoch = max(1, len(pairs) // sched.batch_size)
    total = ScheduleCfg(sched.base_lr, sched.warmup_frac,
                        steps_per_epoch * sched.epochs, sched.batch_size, sched.epochs)
    opt = nm.Adam(enc.parameters() + tok_head.parameters() + frame_head.parameters(),
                  lr=sched.base_lr)
    step = 0
    curve = []
    for _ in range(sched.epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for bi in range(steps_per_epoch):
            batch = [pairs[j] for j in order[bi * sched.batch_size:(bi + 1) * sched.batch_size]]
            with Tape() as tape:
                parts = []
                for text, speech in batch:
                    lt = enc.forward_text(text.ids)
                    ids = np.asarray(text.ids)
                    parts.append(nm.masked_cross_entropy(
                        tok_head(lt), ids, np.ones(len(ids), dtype=bool)))
                    ls = enc.forward_speech(speech.frames, speech.frames_per_token)
                    pooled = np.stack([
                        speech.frames[i * speech.frames_per_token:(i + 1) * speech.frames_per_token].mean(axis=0)
                        for i in range(ls.shape[0])])
                    parts.append(nm.mse(frame_head(ls), Tensor(pooled)))
                loss = _mean_of(parts)
                opt.zero_grad()
                tape.backward(loss)
            opt.step(lr=lr_at(step, total))
            step += 1
            losses.append(loss.item())
        curve.append(float(np.mean(losses)))
    enc.freeze()
    return curve
