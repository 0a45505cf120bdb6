"""End-to-end acceptance suite.

Each test asserts one gate property and is named so the ``pytest -v``
line doubles as the pass/fail record. The trained-stack tests share one
session-scoped reference run; determinism runs a scaled-down chain twice.
"""

import hashlib
import itertools
import time

import numpy as np
import pytest
from scipy import stats as sps

from modalbridge import numerics as nm
from modalbridge import runner
from modalbridge.config import CorpusCfg, DimsCfg, EvalCfg, RunConfig
from modalbridge.encoder import UnifiedEncoder, latent_residual
from modalbridge.evaluation import wer
from modalbridge.pipeline import infer, sample_spans
from modalbridge.numerics import Tape, Tensor
from modalbridge.schedule import ScheduleCfg
from modalbridge.tokenizer import encode

from test_evaluation import brute_force_wer
from test_numerics import OTHER_OPS, check_grad


def reference_config(workdir: str) -> RunConfig:
    cfg = RunConfig(workdir=workdir)
    return cfg.validate()


def small_config(workdir: str) -> RunConfig:
    """Scaled-down chain for the double-run determinism check."""
    cfg = RunConfig(
        workdir=workdir,
        dims=DimsCfg(d_t=16, d_a=8, d_u=16, d_h=16, d_m=16, n_enc_blocks=1,
                     n_mapper_blocks=1, n_lm_blocks=1, n_heads=2, r=3,
                     context=96, max_len=64, vocab_max=120),
        corpus=CorpusCfg(n_sentences=30, n_heldout=8, n_longform=16,
                         n_instructions=8, n_lm_repetition=16, n_lm_copy=10),
        eval=EvalCfg(sigmas=[0.0], n_sentences=4, max_new=8),
    )
    fast = ScheduleCfg(base_lr=1e-3, warmup_frac=0.0, total_steps=1,
                       batch_size=8, epochs=1)
    cfg.align = cfg.lm_train = cfg.pretrain = cfg.sft = fast
    return cfg.validate()


def _sha(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


@pytest.fixture(scope="session")
def ref_run(tmp_path_factory):
    """Train the full reference chain once; record timing and artifacts."""
    workdir = str(tmp_path_factory.mktemp("ref"))
    cfg = reference_config(workdir)
    paths = runner.Paths(cfg)
    times = {}

    # count every speech-branch call during the text-only stages at the
    # class level so no instance escapes instrumentation
    speech_calls = {"n": 0}
    orig = UnifiedEncoder.encode_speech

    def counting(self, *a, **kw):
        speech_calls["n"] += 1
        return orig(self, *a, **kw)

    t0 = time.monotonic()
    runner.run_gen_corpus(cfg)
    times["corpus"] = time.monotonic() - t0

    t0 = time.monotonic()
    runner.run_train_unified(cfg)
    times["align"] = time.monotonic() - t0

    t0 = time.monotonic()
    runner.run_train_lm(cfg)
    times["lm"] = time.monotonic() - t0

    frozen_hashes = {"unified": _sha(paths.unified), "lm": _sha(paths.lm)}

    UnifiedEncoder.encode_speech = counting
    try:
        t0 = time.monotonic()
        runner.run_pretrain(cfg)
        times["pretrain"] = time.monotonic() - t0
        t0 = time.monotonic()
        runner.run_sft(cfg)
        times["sft"] = time.monotonic() - t0
    finally:
        UnifiedEncoder.encode_speech = orig

    runner.run_train_unified(cfg, control=True)
    runner.run_pretrain(cfg, control=True)
    runner.run_sft(cfg, control=True)

    t0 = time.monotonic()
    report = runner.run_eval(cfg)
    times["eval"] = time.monotonic() - t0

    return {"cfg": cfg, "paths": paths, "report": report, "times": times,
            "frozen_hashes": frozen_hashes, "speech_calls": speech_calls["n"]}


def _rows(ref, **want):
    return [r for r in ref["report"].rows
            if all(getattr(r, k) == v for k, v in want.items())]


class TestAcceptance:
    def test_gradient_oracle_suite(self):
        t0 = time.monotonic()
        for name, op, shapes in OTHER_OPS:
            for seed in range(20):
                check_grad(op, shapes, seed)
        for seed in range(20):
            check_grad(nm.matmul, [(3, 4), (4, 2)], seed)
            check_grad(nm.softmax_rows, [(3, 5)], seed)
            check_grad(lambda q, k, v: nm.multihead_attention(q, k, v, 2, causal=seed % 2 == 1),
                       [(4, 6), (4, 6), (4, 6)], seed)
        assert time.monotonic() - t0 < 60.0

    def test_masking_identities(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((6, 9))
        targets = rng.integers(0, 9, size=6)
        full = nm.masked_cross_entropy(Tensor(logits), targets, np.ones(6, bool))
        again = nm.masked_cross_entropy(Tensor(logits), targets, np.ones(6, int))
        assert full.data.tobytes() == again.data.tobytes()

        t = Tensor(logits, requires_grad=True)
        mask = np.array([1, 0, 1, 0, 1, 1], bool)
        with Tape() as tape:
            tape.backward(nm.masked_cross_entropy(t, targets, mask))
        assert not t.grad[~mask].any()

        uniform = nm.masked_cross_entropy(Tensor(np.zeros((4, 11))),
                                          [1, 2, 3, 4], np.ones(4, bool))
        assert abs(uniform.item() - np.log(11)) < 1e-6

    def test_span_sampler_statistics(self):
        rng = np.random.default_rng(1)
        lengths = []
        draws = 0
        while draws < 10_000:
            plan = sample_spans(200, rng)
            spans = plan.spans
            for i in range(len(spans)):
                for j in range(i + 1, len(spans)):
                    s1, l1 = spans[i]
                    s2, l2 = spans[j]
                    assert s1 + l1 <= s2 or s2 + l2 <= s1
            for (_, l) in spans:
                lengths.append(l)
                draws += 1
        counts = np.bincount(lengths, minlength=11)[3:11]
        assert sps.chisquare(counts).pvalue > 0.01

    def test_alignment_convergence(self, ref_run):
        cfg, paths = ref_run["cfg"], ref_run["paths"]
        assert ref_run["times"]["align"] < 600.0, \
            f"alignment took {ref_run['times']['align']:.0f}s"
        vocab = runner.load_vocab(cfg)
        assert len(vocab) <= 200
        assert cfg.corpus.n_sentences >= 2000

        trained = runner.load_encoder(cfg, vocab)
        untrained = runner.build_encoder(cfg, len(vocab), cfg.seeds.unified)
        held = runner.read_lines(paths.files.repetition_heldout)[:60]
        pairs = runner.alignment_pairs(cfg, vocab, held, 7_000_000)
        cos_t, cos_u = [], []
        for text, speech in pairs:
            for enc, acc in ((trained, cos_t), (untrained, cos_u)):
                lt = enc.encode_text(text)
                ls = enc.encode_speech(speech)
                acc.append(latent_residual(lt.vectors, ls.vectors)[1])
        assert float(np.mean(cos_t)) >= 0.95, f"trained cosine {np.mean(cos_t):.4f}"
        assert abs(float(np.mean(cos_u))) < 0.1, f"untrained cosine {np.mean(cos_u):.4f}"

    def test_frozen_parameter_isolation(self, ref_run):
        paths = ref_run["paths"]
        assert _sha(paths.unified) == ref_run["frozen_hashes"]["unified"]
        assert _sha(paths.lm) == ref_run["frozen_hashes"]["lm"]
        assert _sha(paths.projector_pre) != _sha(paths.projector_sft)

    def test_text_only_training(self, ref_run):
        assert ref_run["speech_calls"] == 0

    def test_modality_transfer_wer(self, ref_run):
        pipeline_time = sum(ref_run["times"][k] for k in
                            ("corpus", "align", "lm", "pretrain", "sft", "eval"))
        assert pipeline_time < 1800.0, f"pipeline took {pipeline_time:.0f}s"
        text = _rows(ref_run, path="text", split="heldout")[0]
        speech = [r for r in _rows(ref_run, path="speech", split="heldout")
                  if abs(r.sigma - 0.1) < 1e-9][0]
        assert text.wer <= 0.15, f"text WER {text.wer:.4f}"
        assert speech.wer <= text.wer + 0.10, \
            f"speech WER {speech.wer:.4f} vs text {text.wer:.4f}"

    def test_misalignment_ablation(self, ref_run):
        aligned_text = _rows(ref_run, path="text", split="ablation_aligned")[0]
        control_text = _rows(ref_run, path="text", split="ablation_control")[0]
        control_speech = _rows(ref_run, path="speech", split="ablation_control")[0]
        assert control_speech.wer >= 0.60, f"control speech WER {control_speech.wer:.4f}"
        assert abs(control_text.wer - aligned_text.wer) <= 0.05, \
            f"control text {control_text.wer:.4f} vs aligned {aligned_text.wer:.4f}"

    def test_zero_residual_equivalence(self, ref_run):
        cfg = ref_run["cfg"]
        stack = runner.load_stack(cfg)
        held = runner.read_lines(ref_run["paths"].files.repetition_heldout)[:20]
        for sent in held:
            text = encode(sent, stack.vocab)
            latents = stack.encoder.encode_text(text)
            via_text = infer(stack, text, max_new=cfg.eval.max_new)
            via_substitution = infer(stack, None, max_new=cfg.eval.max_new,
                                     latents=latents)
            assert via_text.ids == via_substitution.ids

    def test_cli_chain_determinism(self, tmp_path_factory):
        from modalbridge.cli import main
        digests = []
        for run in ("d1", "d2"):
            workdir = str(tmp_path_factory.mktemp(run))
            cfg = small_config(workdir)
            cfg_file = workdir + "/cfg.yaml"
            cfg.to_yaml(cfg_file)
            for cmd in (["gen-corpus"], ["train-unified"],
                        ["train-unified", "--control"], ["train-lm"],
                        ["pretrain"], ["sft"], ["pretrain", "--control"],
                        ["sft", "--control"], ["eval"]):
                assert main(cmd + ["--config", cfg_file]) == 0, cmd
            paths = runner.Paths(cfg)
            ckpts = {name: _sha(getattr(paths, name)) for name in
                     ("unified", "control", "lm", "projector_pre",
                      "projector_sft", "control_projector_pre",
                      "control_projector_sft")}
            with open(paths.report, encoding="utf-8") as f:
                ckpts["report"] = [ln for ln in f
                                   if not ln.startswith("# timestamp")]
            digests.append(ckpts)
        assert digests[0] == digests[1]

    def test_wer_matches_exhaustive_dp(self):
        syms = "abc"
        refs = [p for n in range(1, 5) for p in itertools.product(syms, repeat=n)]
        hyps = [p for n in range(0, 5) for p in itertools.product(syms, repeat=n)]
        for ref in refs:
            for hyp in hyps:
                assert wer(list(ref), list(hyp)) == pytest.approx(
                    brute_force_wer(ref, hyp)), (ref, hyp)
