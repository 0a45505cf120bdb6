"""Training-stage orchestration: span-interleaved projector pretraining,
SFT with the repetition task, and the two-path inference flow.

Only the projector receives gradient in either stage; the encoder and LM
enter frozen and are asserted to stay byte-identical by the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .corpus import ANSWER_MARKER, INSTRUCTION_PROMPT, REPETITION_PROMPT
from .encoder import UnifiedEncoder
from .lm import DecoderLM
from .numerics import Tensor, Tape
from .projector import Projector
from .schedule import ScheduleCfg, lr_at
from .synthspeech import AcousticSeq
from .tokenizer import BOS, EOS, TokenSeq, Vocab, encode


@dataclass
class SpanPlan:
    spans: list  # sorted, disjoint (start_word, length), each length in [3,10]

    def __len__(self):
        return len(self.spans)


def sample_spans(word_count: int, rng: np.random.Generator, max_spans: int = 3,
                 min_gap: int = 2, min_len: int = 3, max_len: int = 10,
                 attempts_per_span: int = 12) -> SpanPlan:
    """Up to max_spans disjoint spans, lengths uniform on the feasible part
    of [min_len, max_len], starts uniform over positions that keep the span
    in bounds and min_gap words away from every accepted span."""
    accepted = []
    if word_count >= min_len:
        top = min(max_len, word_count)
        for _ in range(max_spans):
            for _ in range(attempts_per_span):
                length = int(rng.integers(min_len, top + 1))
                starts = _valid_starts(word_count, length, accepted, min_gap)
                if starts:
                    accepted.append((starts[int(rng.integers(len(starts)))], length))
                    break
    return SpanPlan(spans=sorted(accepted))


def _valid_starts(word_count, length, accepted, min_gap):
    out = []
    for s in range(word_count - length + 1):
        ok = True
        for s0, l0 in accepted:
            if not (s >= s0 + l0 + min_gap or s + length + min_gap <= s0):
                ok = False
                break
        if ok:
            out.append(s)
    return out


@dataclass
class InterleavedBatch:
    embeds: Tensor          # T x d_m spliced input rows
    targets: np.ndarray     # T-1 next-token ids
    mask: np.ndarray        # T-1 bits; 0 where the target token sits inside a span


def build_interleaved(text: TokenSeq, plan: SpanPlan, enc: UnifiedEncoder,
                      proj: Projector, lm: DecoderLM) -> InterleavedBatch:
    """Frame with BOS/EOS, replace span word embeddings with projected
    text-path latents, and mask every target that falls inside a span.

    A target position stays supervised when its target token is the first
    token after a span, so span-exit continuation is always trained.
    """
    ids = [BOS] + list(text.ids) + [EOS]
    segments = []
    cursor = 0  # position in the framed sequence
    in_span = np.zeros(len(ids), dtype=bool)
    for start, length in plan.spans:
        seg_end = start + 1  # word i sits at framed position i + 1
        if seg_end > cursor:
            segments.append(lm.embed_tokens(ids[cursor:seg_end]).detach())
        sub = TokenSeq(ids=list(text.ids[start:start + length]))
        latents = enc.encode_text(sub)
        if len(latents) != length:
            raise RuntimeError(
                f"build_interleaved: span latent length {len(latents)} != {length}")
        segments.append(proj(latents))
        in_span[start + 1:start + 1 + length] = True
        cursor = start + 1 + length
    if cursor < len(ids):
        segments.append(lm.embed_tokens(ids[cursor:]).detach())
    embeds = segments[0] if len(segments) == 1 else nm.concat_rows(segments)
    targets = np.asarray(ids[1:], dtype=np.int64)
    mask = ~in_span[1:]
    return InterleavedBatch(embeds=embeds, targets=targets, mask=mask)


def pretrain_projector(samples, enc: UnifiedEncoder, proj: Projector,
                       lm: DecoderLM, cfg: ScheduleCfg, seed: int = 0,
                       max_spans: int = 3, min_gap: int = 2):
    """Masked-CE training of the projector on span-spliced long-form text.

    Spans are re-randomized every epoch. Returns (per-epoch mean loss,
    count of degenerate batches skipped).
    """
    samples = [s for s in samples if len(s) >= 1]
    if not samples:
        raise ValueError("pretrain_projector: no usable samples")
    rng = np.random.default_rng(seed)
    steps_per_epoch = max(1, len(samples) // cfg.batch_size)
    total = ScheduleCfg(cfg.base_lr, cfg.warmup_frac,
                        steps_per_epoch * cfg.epochs, cfg.batch_size, cfg.epochs)
    opt = nm.Adam(proj.parameters(), lr=cfg.base_lr)
    step = 0
    curve, skipped = [], 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(samples))
        losses = []
        for bi in range(steps_per_epoch):
            batch = [samples[j] for j in order[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]]
            opt.zero_grad()
            with Tape() as tape:
                parts = []
                for text in batch:
                    plan = sample_spans(len(text.words) or len(text.ids), rng,
                                        max_spans=max_spans, min_gap=min_gap)
                    built = build_interleaved(text, plan, enc, proj, lm)
                    try:
                        logits = lm.forward_embeddings(built.embeds)
                        logits = nm.slice_rows(logits, 0, logits.shape[0] - 1)
                        parts.append(nm.masked_cross_entropy(
                            logits, built.targets, built.mask))
                    except nm.EmptySupervisionError:
                        skipped += 1
                if not parts:
                    continue
                loss = parts[0]
                for p in parts[1:]:
                    loss = nm.add(loss, p)
                loss = nm.scale(loss, 1.0 / len(parts))
                tape.backward(loss)
            opt.step(lr=lr_at(step, total))
            step += 1
            losses.append(loss.item())
        curve.append(float(np.mean(losses)))
    return curve, skipped


@dataclass
class SftExample:
    system_prompt: str
    query: str
    response_ids: list
    kind: str  # "repetition" | "instruction"


def build_sft_dataset(instruction_pairs, repetition_sentences, mix_ratio: float,
                      vocab: Vocab, lm: DecoderLM, seed: int = 0,
                      n_examples: int | None = None, max_response: int = 16):
    """Mix repetition and instruction examples.

    Repetition responses are the normalized query itself; instruction
    responses are regenerated by the frozen LM (greedy) from the chat
    prefix, falling back to the template when generation is empty.
    """
    if not instruction_pairs or not repetition_sentences:
        raise ValueError("build_sft_dataset: both sources must be nonempty")
    rng = np.random.default_rng(seed)
    if n_examples is None:
        n_examples = len(repetition_sentences)
    out = []
    for i in range(n_examples):
        if rng.random() < mix_ratio:
            q = repetition_sentences[int(rng.integers(len(repetition_sentences)))]
            out.append(SftExample(REPETITION_PROMPT, q, encode(q, vocab).ids, "repetition"))
        else:
            q, template = instruction_pairs[int(rng.integers(len(instruction_pairs)))]
            prefix_ids = ([BOS] + encode(INSTRUCTION_PROMPT, vocab).ids
                          + encode(q, vocab).ids + [vocab.id_of(ANSWER_MARKER)])
            resp = lm.generate(lm.embed_tokens(prefix_ids), max_new=max_response)
            if not resp:
                resp = encode(template, vocab).ids
            out.append(SftExample(INSTRUCTION_PROMPT, q, resp, "instruction"))
    return out


def _sft_rows(example: SftExample, enc: UnifiedEncoder, proj: Projector,
              lm: DecoderLM, vocab: Vocab):
    """Spliced rows for one SFT example plus targets/mask.

    Layout: BOS, prompt tokens (native), projected query latents, marker
    token, response tokens; every row's target is the next row's token id
    (EOS after the last response token). Only marker-onward targets are
    supervised.
    """
    prompt_ids = [BOS] + encode(example.system_prompt, vocab).ids
    latents = enc.encode_text(encode(example.query, vocab))
    marker = vocab.id_of(ANSWER_MARKER)
    resp = list(example.response_ids)
    segments = [lm.embed_tokens(prompt_ids).detach(),
                proj(latents),
                lm.embed_tokens([marker] + resp).detach()]
    embeds = nm.concat_rows(segments)
    T = embeds.shape[0]
    targets = np.zeros(T, dtype=np.int64)
    mask = np.zeros(T, dtype=bool)
    marker_pos = len(prompt_ids) + len(latents)
    tail = resp + [EOS]
    for k, tok in enumerate(tail):
        targets[marker_pos + k] = tok
        mask[marker_pos + k] = True
    return embeds, targets, mask


def sft(dataset, enc: UnifiedEncoder, proj: Projector, lm: DecoderLM,
        vocab: Vocab, cfg: ScheduleCfg, seed: int = 0):
    """Projector-only supervised fine-tuning; loss on response targets only."""
    dataset = [ex for ex in dataset if ex.response_ids]
    if not dataset:
        raise ValueError("sft: empty dataset")
    if not any(ex.kind == "repetition" for ex in dataset):
        # legal, but the repetition eval will have nothing to stand on
        pass
    rng = np.random.default_rng(seed)
    steps_per_epoch = max(1, len(dataset) // cfg.batch_size)
    total = ScheduleCfg(cfg.base_lr, cfg.warmup_frac,
                        steps_per_epoch * cfg.epochs, cfg.batch_size, cfg.epochs)
    opt = nm.Adam(proj.parameters(), lr=cfg.base_lr)
    step = 0
    curve = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for bi in range(steps_per_epoch):
            batch = [dataset[j] for j in order[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]]
            opt.zero_grad()
            with Tape() as tape:
                parts = []
                for ex in batch:
                    embeds, targets, mask = _sft_rows(ex, enc, proj, lm, vocab)
                    logits = lm.forward_embeddings(embeds)
                    parts.append(nm.masked_cross_entropy(logits, targets, mask))
                loss = parts[0]
                for p in parts[1:]:
                    loss = nm.add(loss, p)
                loss = nm.scale(loss, 1.0 / len(parts))
                tape.backward(loss)
            opt.step(lr=lr_at(step, total))
            step += 1
            losses.append(loss.item())
        curve.append(float(np.mean(losses)))
    return curve


@dataclass
class Stack:
    """A trained set of components plus the pieces inference needs."""
    vocab: Vocab
    encoder: UnifiedEncoder
    projector: Projector
    lm: DecoderLM
    r: int = 4


def infer(stack: Stack, source, system_prompt: str = REPETITION_PROMPT,
          max_new: int = 24, latents=None) -> TokenSeq:
    """Route text through the text branch, acoustics through the speech
    branch, then project, splice after the prompt, and greedy-decode.
    ``latents`` overrides routing (used by the zero-residual checks)."""
    if latents is None:
        if isinstance(source, TokenSeq):
            latents = stack.encoder.encode_text(source)
        elif isinstance(source, AcousticSeq):
            latents = stack.encoder.encode_speech(source)
        else:
            raise TypeError(f"infer: unsupported input {type(source).__name__}")
    prompt_ids = [BOS] + encode(system_prompt, stack.vocab).ids
    marker = stack.vocab.id_of(ANSWER_MARKER)
    prefix = nm.concat_rows([
        stack.lm.embed_tokens(prompt_ids),
        stack.projector(latents),
        stack.lm.embed_tokens([marker]),
    ])
    out = stack.lm.generate(prefix, max_new=max_new)
    return TokenSeq(ids=out, words=[stack.vocab.word_of(i) for i in out])
