"""Command-line surface. One subcommand per pipeline stage plus render,
infer, and report pretty-printing. Config comes from --config (YAML) or
the MODALBRIDGE_CONFIG env var; flags override file values."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import runner
from .config import RunConfig
from .corpus import REPETITION_PROMPT
from .encoder import latent_residual
from .evaluation import read_report
from .pipeline import infer
from .synthspeech import base_pattern_table, dump_frames, load_frames, render
from .tokenizer import decode, encode

ENV_CONFIG = "MODALBRIDGE_CONFIG"


def _load_config(args) -> RunConfig:
    path = args.config or os.environ.get(ENV_CONFIG)
    cfg = RunConfig.from_yaml(path) if path else RunConfig()
    if getattr(args, "workdir", None):
        cfg.workdir = args.workdir
    return cfg.validate()


def _add_common(p):
    p.add_argument("--config", help=f"YAML config path (default: ${ENV_CONFIG})")
    p.add_argument("--workdir", help="override the run directory")
    p.add_argument("--allow-mixed-hash", action="store_true",
                   help="accept checkpoints produced under a different config")


def build_parser():
    ap = argparse.ArgumentParser(prog="modalbridge")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("gen-corpus", "generate corpus, splits, and vocabulary"),
        ("train-unified", "train the dual-modality encoder (add --control for the ablation encoder)"),
        ("train-lm", "pretrain and freeze the decoder LM"),
        ("pretrain", "interleaved projector pretraining"),
        ("sft", "supervised fine-tuning of the projector"),
        ("eval", "run the evaluation grid and write the report"),
        ("render", "render a text to a synthetic frame file"),
        ("infer", "one-shot inference from text or a frame file"),
        ("report", "pretty-print a previously written report"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name in ("train-unified", "pretrain", "sft"):
            p.add_argument("--control", action="store_true",
                           help="operate on the no-alignment control chain")
        if name == "render":
            p.add_argument("--text", required=True)
            p.add_argument("--out", required=True)
            p.add_argument("--sigma", type=float)
            p.add_argument("--noise-seed", type=int, default=0)
        if name == "infer":
            p.add_argument("--input", help="text input")
            p.add_argument("--frames", help="frame-file input")
            p.add_argument("--prompt", default=REPETITION_PROMPT)
            p.add_argument("--show-residual", action="store_true")
        if name == "report":
            p.add_argument("--file", help="report CSV (default: the run's report)")
    return ap


def _cmd_render(cfg, args):
    vocab = runner.load_vocab(cfg)
    table = base_pattern_table(len(vocab), cfg.dims.d_a)
    sigma = cfg.sigma if args.sigma is None else args.sigma
    seq = render(encode(args.text, vocab), args.noise_seed, sigma, cfg.dims.r, table)
    dump_frames(seq, args.out)
    print(f"wrote {seq.num_frames} frames ({cfg.dims.d_a} dims) to {args.out}")


def _cmd_infer(cfg, args):
    if bool(args.input) == bool(args.frames):
        raise ValueError("infer: give exactly one of --input / --frames")
    stack = runner.load_stack(cfg, allow_mixed=args.allow_mixed_hash)
    if args.input:
        source = encode(args.input, stack.vocab)
    else:
        source = load_frames(args.frames)
    out = infer(stack, source, system_prompt=args.prompt)
    print(decode(out, stack.vocab))
    if args.show_residual and args.input:
        table = base_pattern_table(len(stack.vocab), cfg.dims.d_a)
        speech = render(source, cfg.seeds.eval_noise, cfg.sigma, cfg.dims.r, table)
        lt = stack.encoder.encode_text(source)
        ls = stack.encoder.encode_speech(speech)
        mse, cos = latent_residual(lt.vectors, ls.vectors)
        print(f"alignment residual: mse={mse:.6f} cosine={cos:.4f}")


def _cmd_report(cfg, args):
    path = args.file or runner.Paths(cfg).report
    rows = read_report(path)
    print(f"{'path':8} {'sigma':>6} {'split':18} {'wer':>7} {'exact':>7} {'cos':>7} {'ce':>8}")
    for r in rows:
        print(f"{r.path:8} {r.sigma:6.2f} {r.split:18} {r.wer:7.3f} "
              f"{r.exact_match:7.3f} {r.align_cosine:7.3f} {r.ce:8.4f}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        allow = getattr(args, "allow_mixed_hash", False)
        if args.command == "gen-corpus":
            files = runner.run_gen_corpus(cfg)
            print(f"corpus written to {files.outdir} (config {cfg.hash()})")
        elif args.command == "train-unified":
            _, curve = runner.run_train_unified(cfg, control=args.control)
            print(f"alignment loss curve: {[round(v, 4) for v in curve]}")
        elif args.command == "train-lm":
            _, curve, ppl = runner.run_train_lm(cfg)
            print(f"lm loss curve: {[round(v, 4) for v in curve]}  heldout ppl {ppl:.2f}")
        elif args.command == "pretrain":
            _, curve, skipped = runner.run_pretrain(cfg, control=args.control, allow_mixed=allow)
            print(f"pretrain loss curve: {[round(v, 4) for v in curve]}  skipped {skipped}")
        elif args.command == "sft":
            _, curve = runner.run_sft(cfg, control=args.control, allow_mixed=allow)
            print(f"sft loss curve: {[round(v, 4) for v in curve]}")
        elif args.command == "eval":
            report = runner.run_eval(cfg, allow_mixed=allow)
            print(f"report written: {runner.Paths(cfg).report} ({len(report.rows)} rows)")
        elif args.command == "render":
            _cmd_render(cfg, args)
        elif args.command == "infer":
            _cmd_infer(cfg, args)
        elif args.command == "report":
            _cmd_report(cfg, args)
        return 0
    except runner.DependencyError as e:
        print(f"error:dependency: {e}", file=sys.stderr)
        return 2
    except runner.ProvenanceError as e:
        print(f"error:provenance: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"error:io: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"error:invalid: {e}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
