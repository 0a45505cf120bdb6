"""Stage runner: builds components from a RunConfig, chains checkpoints
by config-hash provenance, and drives train/eval end to end. The CLI is
a thin wrapper over these functions; tests call them directly."""

from __future__ import annotations

import csv
import os

import numpy as np

from . import checkpoint as ckpt
from .config import RunConfig
from .corpus import CorpusFiles, generate_corpus, read_lines
from .encoder import AlignCfg, EncoderConfig, UnifiedEncoder, train_alignment, train_control
from .evaluation import EvalReport, ablation_misaligned, emit_report, repetition_eval
from .lm import DecoderLM, LMConfig, pretrain_lm
from .pipeline import Stack, build_sft_dataset, pretrain_projector, sft
from .projector import Projector
from .synthspeech import base_pattern_table, render
from .tokenizer import Vocab, build_vocab, encode


class DependencyError(RuntimeError):
    """An upstream stage's artifact is missing."""


class ProvenanceError(RuntimeError):
    """Checkpoint chain was produced under a different config."""


class Paths:
    def __init__(self, cfg: RunConfig):
        w = cfg.workdir
        self.workdir = w
        self.corpus_dir = os.path.join(w, "corpus")
        self.ckpt_dir = os.path.join(w, "ckpt")
        self.curve_dir = os.path.join(w, "curves")
        self.report_dir = os.path.join(w, "report")
        self.files = CorpusFiles(self.corpus_dir)
        self.unified = os.path.join(self.ckpt_dir, "unified.ckpt")
        self.control = os.path.join(self.ckpt_dir, "control.ckpt")
        self.lm = os.path.join(self.ckpt_dir, "lm.ckpt")
        self.projector_pre = os.path.join(self.ckpt_dir, "projector_pretrain.ckpt")
        self.projector_sft = os.path.join(self.ckpt_dir, "projector_sft.ckpt")
        self.control_projector_pre = os.path.join(self.ckpt_dir, "control_projector_pretrain.ckpt")
        self.control_projector_sft = os.path.join(self.ckpt_dir, "control_projector_sft.ckpt")
        self.report = os.path.join(self.report_dir, "report.csv")

    def ensure(self):
        for d in (self.corpus_dir, self.ckpt_dir, self.curve_dir, self.report_dir):
            os.makedirs(d, exist_ok=True)
        return self


def _require(path, stage):
    if not os.path.exists(path):
        raise DependencyError(f"missing artifact for stage {stage!r}: {path}")


def _load_ckpt(path, tag, cfg: RunConfig, stage, allow_mixed=False):
    _require(path, stage)
    _, tensors, chash = ckpt.load(path, expect_tag=tag)
    if not allow_mixed and chash and chash != cfg.hash():
        raise ProvenanceError(
            f"{path}: config hash {chash} != current {cfg.hash()} "
            f"(stage {stage!r}; pass allow_mixed to override)")
    return tensors


def _write_curve(path, curve):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(curve):
            w.writerow([i, f"{v:.6f}"])


# ---------------------------------------------------------------- builders

def build_encoder(cfg: RunConfig, vocab_size: int, seed: int) -> UnifiedEncoder:
    d = cfg.dims
    ecfg = EncoderConfig(vocab_size=vocab_size, d_t=d.d_t, d_a=d.d_a, d_u=d.d_u,
                         n_blocks=d.n_enc_blocks, n_mapper=d.n_mapper_blocks,
                         n_heads=d.n_heads, r=d.r, max_len=d.max_len)
    return UnifiedEncoder(np.random.default_rng(seed), ecfg)


def build_lm(cfg: RunConfig, vocab_size: int, seed: int) -> DecoderLM:
    d = cfg.dims
    lcfg = LMConfig(vocab_size=vocab_size, d_m=d.d_m, n_blocks=d.n_lm_blocks,
                    n_heads=d.n_heads, context=d.context)
    return DecoderLM(np.random.default_rng(seed), lcfg)


def build_projector(cfg: RunConfig, seed: int) -> Projector:
    d = cfg.dims
    return Projector(np.random.default_rng(seed), d.d_u, d.d_h, d.d_m)


def load_vocab(cfg: RunConfig) -> Vocab:
    paths = Paths(cfg)
    _require(paths.files.vocab, "gen-corpus")
    return Vocab.load(paths.files.vocab)


# ------------------------------------------------------------------ stages

def run_gen_corpus(cfg: RunConfig):
    paths = Paths(cfg).ensure()
    c = cfg.corpus
    files = generate_corpus(paths.corpus_dir, cfg.seeds.corpus,
                            n_sentences=c.n_sentences, n_heldout=c.n_heldout,
                            n_longform=c.n_longform, n_instructions=c.n_instructions,
                            n_lm_repetition=c.n_lm_repetition, n_lm_copy=c.n_lm_copy)
    vocab = build_vocab(read_lines(files.lm_corpus), cfg.dims.vocab_max)
    vocab.save(files.vocab)
    return files


def alignment_pairs(cfg: RunConfig, vocab: Vocab, sentences, seed_tag: int):
    table = base_pattern_table(len(vocab), cfg.dims.d_a)
    pairs = []
    for i, sent in enumerate(sentences):
        text = encode(sent, vocab)
        pairs.append((text, render(text, (seed_tag, i), cfg.sigma, cfg.dims.r, table)))
    return pairs


def run_train_unified(cfg: RunConfig, control: bool = False):
    paths = Paths(cfg).ensure()
    _require(paths.files.repetition_train, "gen-corpus")
    vocab = load_vocab(cfg)
    sentences = read_lines(paths.files.repetition_train)
    pairs = alignment_pairs(cfg, vocab, sentences, cfg.seeds.unified)
    enc = build_encoder(cfg, len(vocab), cfg.seeds.unified + (1000 if control else 0))
    acfg = AlignCfg(schedule=cfg.align,
                    mse_weight=cfg.align_weights.mse_weight,
                    contrastive_weight=cfg.align_weights.contrastive_weight,
                    temperature=cfg.align_weights.temperature,
                    token_ce_weight=cfg.align_weights.token_ce_weight)
    if control:
        curve = train_control(enc, pairs, acfg, seed=cfg.seeds.unified)
        out = paths.control
        tag = ckpt.TAG_CONTROL_UNIFIED
    else:
        curve = train_alignment(enc, pairs, acfg, seed=cfg.seeds.unified)
        out = paths.unified
        tag = ckpt.TAG_UNIFIED
    ckpt.save(out, tag, enc.named_parameters(), cfg.hash())
    _write_curve(os.path.join(paths.curve_dir,
                              "control_align.csv" if control else "align.csv"), curve)
    return enc, curve


def run_train_lm(cfg: RunConfig):
    paths = Paths(cfg).ensure()
    _require(paths.files.lm_corpus, "gen-corpus")
    vocab = load_vocab(cfg)
    lines = read_lines(paths.files.lm_corpus)
    seqs = [encode(line, vocab, add_frame=True).ids for line in lines]
    heldout = [encode(s, vocab, add_frame=True).ids
               for s in read_lines(paths.files.repetition_heldout)]
    model = build_lm(cfg, len(vocab), cfg.seeds.lm)
    curve, ppl = pretrain_lm(model, seqs, cfg.lm_train, seed=cfg.seeds.lm,
                             heldout=heldout[:50])
    ckpt.save(paths.lm, ckpt.TAG_LM, model.named_parameters(), cfg.hash())
    _write_curve(os.path.join(paths.curve_dir, "lm.csv"), curve)
    return model, curve, ppl


def load_encoder(cfg: RunConfig, vocab: Vocab, control=False, allow_mixed=False):
    paths = Paths(cfg)
    path = paths.control if control else paths.unified
    tag = ckpt.TAG_CONTROL_UNIFIED if control else ckpt.TAG_UNIFIED
    tensors = _load_ckpt(path, tag, cfg, "train-unified", allow_mixed)
    enc = build_encoder(cfg, len(vocab), 0)
    ckpt.restore(tensors, enc.named_parameters())
    enc.freeze()
    enc.speech_invocations = 0
    return enc


def load_lm(cfg: RunConfig, vocab: Vocab, allow_mixed=False):
    tensors = _load_ckpt(Paths(cfg).lm, ckpt.TAG_LM, cfg, "train-lm", allow_mixed)
    model = build_lm(cfg, len(vocab), 0)
    ckpt.restore(tensors, model.named_parameters())
    model.freeze()
    return model


def load_projector(cfg: RunConfig, path, allow_mixed=False, stage="pretrain"):
    tensors = _load_ckpt(path, ckpt.TAG_PROJECTOR, cfg, stage, allow_mixed)
    proj = build_projector(cfg, 0)
    ckpt.restore(tensors, proj.named_parameters())
    return proj


def run_pretrain(cfg: RunConfig, control: bool = False, allow_mixed=False):
    paths = Paths(cfg).ensure()
    vocab = load_vocab(cfg)
    enc = load_encoder(cfg, vocab, control=control, allow_mixed=allow_mixed)
    model = load_lm(cfg, vocab, allow_mixed=allow_mixed)
    samples = [encode(line, vocab) for line in read_lines(paths.files.longform)]
    proj = build_projector(cfg, cfg.seeds.pretrain)
    curve, skipped = pretrain_projector(
        samples, enc, proj, model, cfg.pretrain, seed=cfg.seeds.pretrain,
        max_spans=cfg.spans.max_spans, min_gap=cfg.spans.min_gap)
    if enc.speech_invocations != 0:
        raise RuntimeError("pretrain touched the speech branch")
    out = paths.control_projector_pre if control else paths.projector_pre
    ckpt.save(out, ckpt.TAG_PROJECTOR, proj.named_parameters(), cfg.hash())
    _write_curve(os.path.join(paths.curve_dir,
                              ("control_" if control else "") + "pretrain.csv"), curve)
    return proj, curve, skipped


def run_sft(cfg: RunConfig, control: bool = False, allow_mixed=False):
    paths = Paths(cfg).ensure()
    vocab = load_vocab(cfg)
    enc = load_encoder(cfg, vocab, control=control, allow_mixed=allow_mixed)
    model = load_lm(cfg, vocab, allow_mixed=allow_mixed)
    pre_path = paths.control_projector_pre if control else paths.projector_pre
    proj = load_projector(cfg, pre_path, allow_mixed=allow_mixed, stage="pretrain")
    instruction_pairs = [tuple(line.split("\t")) for line in read_lines(paths.files.instructions)]
    sentences = read_lines(paths.files.repetition_train)
    dataset = build_sft_dataset(instruction_pairs, sentences, mix_ratio=0.8,
                                vocab=vocab, lm=model, seed=cfg.seeds.sft,
                                n_examples=len(sentences))
    curve = sft(dataset, enc, proj, model, vocab, cfg.sft, seed=cfg.seeds.sft)
    if enc.speech_invocations != 0:
        raise RuntimeError("sft touched the speech branch")
    out = paths.control_projector_sft if control else paths.projector_sft
    ckpt.save(out, ckpt.TAG_PROJECTOR, proj.named_parameters(), cfg.hash())
    _write_curve(os.path.join(paths.curve_dir,
                              ("control_" if control else "") + "sft.csv"), curve)
    return proj, curve


def load_stack(cfg: RunConfig, control: bool = False, allow_mixed=False) -> Stack:
    paths = Paths(cfg)
    vocab = load_vocab(cfg)
    enc = load_encoder(cfg, vocab, control=control, allow_mixed=allow_mixed)
    model = load_lm(cfg, vocab, allow_mixed=allow_mixed)
    path = paths.control_projector_sft if control else paths.projector_sft
    proj = load_projector(cfg, path, allow_mixed=allow_mixed, stage="sft")
    return Stack(vocab=vocab, encoder=enc, projector=proj, lm=model, r=cfg.dims.r)


def run_eval(cfg: RunConfig, allow_mixed=False) -> EvalReport:
    paths = Paths(cfg).ensure()
    stack = load_stack(cfg, allow_mixed=allow_mixed)
    table = base_pattern_table(len(stack.vocab), cfg.dims.d_a)
    n = cfg.eval.n_sentences
    splits = {
        "train": read_lines(paths.files.repetition_train)[:n],
        "heldout": read_lines(paths.files.repetition_heldout)[:n],
    }
    seeds = [cfg.seeds.eval_noise]
    report = EvalReport(config_hash=cfg.hash(),
                        seeds={"eval_noise": cfg.seeds.eval_noise})
    for split, sentences in splits.items():
        report.rows.append(repetition_eval(
            stack, sentences, "text", 0.0, seeds, table, split=split,
            max_new=cfg.eval.max_new))
        for sigma in cfg.eval.sigmas:
            report.rows.append(repetition_eval(
                stack, sentences, "speech", sigma, seeds, table, split=split,
                max_new=cfg.eval.max_new))
    if os.path.exists(paths.control_projector_sft):
        control = load_stack(cfg, control=True, allow_mixed=allow_mixed)
        report.rows.extend(ablation_misaligned(
            stack, control, splits["heldout"], cfg.sigma, seeds, table))
    emit_report(report, paths.report)
    return report


def run_full_chain(cfg: RunConfig, with_control: bool = True) -> EvalReport:
    run_gen_corpus(cfg)
    run_train_unified(cfg)
    if with_control:
        run_train_unified(cfg, control=True)
    run_train_lm(cfg)
    run_pretrain(cfg)
    run_sft(cfg)
    if with_control:
        run_pretrain(cfg, control=True)
        run_sft(cfg, control=True)
    return run_eval(cfg)
