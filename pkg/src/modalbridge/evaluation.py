"""Metrics and experiment harness: word error rate, repetition-task
scoring over both modality paths, and the misalignment ablation."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .encoder import latent_residual
from .corpus import REPETITION_PROMPT
from .pipeline import Stack, SftExample, infer
from .synthspeech import render
from .tokenizer import normalize, encode

CSV_HEADER = ["path", "sigma", "split", "wer", "exact_match",
              "align_cosine", "ce", "seed"]


def wer(reference, hypothesis) -> float:
    """(S + D + I) / len(reference) by minimum word-level edit distance."""
    ref = list(reference)
    hyp = list(hypothesis)
    if not ref:
        raise ValueError("wer: empty reference")
    prev = list(range(len(hyp) + 1))
    for i, rw in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, hw in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1,          # deletion
                         cur[j - 1] + 1,        # insertion
                         prev[j - 1] + (rw != hw))  # substitution / match
        prev = cur
    return prev[-1] / len(ref)


def wer_text(reference: str, hypothesis: str) -> float:
    return wer(normalize(reference), normalize(hypothesis))


@dataclass
class EvalRow:
    path: str
    sigma: float
    split: str
    wer: float
    exact_match: float
    align_cosine: float
    ce: float
    seed: int


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    config_hash: str = ""
    seeds: dict = field(default_factory=dict)
    timestamp: float = field(default_factory=time.time)


def repetition_eval(stack: Stack, sentences, path: str, sigma: float,
                    seeds, pattern_table=None, split: str = "heldout",
                    max_new: int = 24) -> EvalRow:
    """Generate with the fixed repetition prompt over the chosen modality
    path and score against the normalized reference."""
    if path not in ("text", "speech"):
        raise ValueError(f"repetition_eval: unknown path {path!r}")
    wers, exact, cosines, ces = [], [], [], []
    for i, sent in enumerate(sentences):
        text = encode(sent, stack.vocab)
        if path == "text":
            latents = stack.encoder.encode_text(text)
        else:
            seed = int(seeds[i % len(seeds)]) + i
            speech = render(text, seed, sigma, stack.r, pattern_table)
            latents = stack.encoder.encode_speech(speech)
            lt = stack.encoder.encode_text(text)
            cosines.append(latent_residual(lt.vectors, latents.vectors)[1])
        hyp = infer(stack, None, REPETITION_PROMPT, max_new=max_new, latents=latents)
        hyp_words = [stack.vocab.word_of(t) for t in hyp.ids]
        ref_words = normalize(sent)
        w = wer(ref_words, hyp_words)
        wers.append(w)
        exact.append(1.0 if hyp_words == ref_words else 0.0)
        ces.append(_eval_ce(stack, sent, latents))
    return EvalRow(path=path, sigma=sigma if path == "speech" else 0.0,
                   split=split, wer=float(np.mean(wers)),
                   exact_match=float(np.mean(exact)),
                   align_cosine=float(np.mean(cosines)) if cosines else 1.0,
                   ce=float(np.mean(ces)),
                   seed=int(seeds[0]) if len(seeds) else 0)


def _eval_ce(stack: Stack, sentence: str, latents) -> float:
    ex = SftExample(REPETITION_PROMPT, sentence,
                    encode(sentence, stack.vocab).ids, "repetition")
    embeds, targets, mask = _sft_rows_with_latents(ex, stack, latents)
    logits = stack.lm.forward_embeddings(embeds)
    return nm.masked_cross_entropy(logits, targets, mask).item()


def _sft_rows_with_latents(ex: SftExample, stack: Stack, latents):
    from .corpus import ANSWER_MARKER
    from .tokenizer import BOS, EOS
    prompt_ids = [BOS] + encode(ex.system_prompt, stack.vocab).ids
    marker = stack.vocab.id_of(ANSWER_MARKER)
    resp = list(ex.response_ids)
    embeds = nm.concat_rows([
        stack.lm.embed_tokens(prompt_ids).detach(),
        stack.projector(latents),
        stack.lm.embed_tokens([marker] + resp).detach(),
    ])
    T = embeds.shape[0]
    targets = np.zeros(T, dtype=np.int64)
    mask = np.zeros(T, dtype=bool)
    pos = len(prompt_ids) + len(latents)
    for k, tok in enumerate(resp + [EOS]):
        targets[pos + k] = tok
        mask[pos + k] = True
    return embeds, targets, mask


def ablation_misaligned(aligned: Stack, control: Stack, sentences, sigma: float,
                        seeds, pattern_table) -> list:
    """Score both stacks on both paths; the control (no cross-modal
    objective) should fail on speech while matching on text."""
    rows = []
    for tag, stack in (("aligned", aligned), ("control", control)):
        for path in ("text", "speech"):
            row = repetition_eval(stack, sentences, path, sigma, seeds,
                                  pattern_table, split=f"ablation_{tag}")
            rows.append(row)
    return rows


def emit_report(report: EvalReport, path, fmt: str = "csv"):
    """Stable column order, 4-decimal floats; identical runs produce
    identical bytes apart from the timestamp line."""
    if fmt != "csv":
        raise ValueError(f"emit_report: unsupported format {fmt!r}")
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# config_hash={report.config_hash}\n")
        f.write(f"# seeds={sorted(report.seeds.items())}\n")
        f.write(f"# timestamp={report.timestamp}\n")
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for r in report.rows:
            w.writerow([r.path, f"{r.sigma:.4f}", r.split, f"{r.wer:.4f}",
                        f"{r.exact_match:.4f}", f"{r.align_cosine:.4f}",
                        f"{r.ce:.4f}", r.seed])


def read_report(path) -> list:
    rows = []
    with open(path, encoding="utf-8") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    for rec in reader:
        rows.append(EvalRow(path=rec["path"], sigma=float(rec["sigma"]),
                            split=rec["split"], wer=float(rec["wer"]),
                            exact_match=float(rec["exact_match"]),
                            align_cosine=float(rec["align_cosine"]),
                            ce=float(rec["ce"]), seed=int(rec["seed"])))
    return rows
