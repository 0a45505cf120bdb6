import numpy as np
import pytest
import yaml

from modalbridge.cli import main
from modalbridge.config import RunConfig
from modalbridge.evaluation import EvalReport, EvalRow, emit_report
from modalbridge.synthspeech import load_frames


@pytest.fixture()
def tiny_cfg_file(tmp_path):
    cfg = {
        "workdir": str(tmp_path / "run"),
        "dims": {"d_t": 16, "d_a": 8, "d_u": 16, "d_h": 16, "d_m": 16,
                 "n_enc_blocks": 1, "n_mapper_blocks": 1, "n_lm_blocks": 1,
                 "n_heads": 2, "r": 3, "context": 96, "max_len": 64,
                 "vocab_max": 120},
        "corpus": {"n_sentences": 24, "n_heldout": 6, "n_longform": 12,
                   "n_instructions": 6, "n_lm_repetition": 12, "n_lm_copy": 8},
        "eval": {"sigmas": [0.0], "n_sentences": 4, "max_new": 8},
        "align": {"base_lr": 1e-3, "warmup_frac": 0.0, "total_steps": 1,
                  "batch_size": 8, "epochs": 1},
        "lm_train": {"base_lr": 1e-3, "warmup_frac": 0.0, "total_steps": 1,
                     "batch_size": 8, "epochs": 1},
        "pretrain": {"base_lr": 1e-3, "warmup_frac": 0.0, "total_steps": 1,
                     "batch_size": 8, "epochs": 1},
        "sft": {"base_lr": 1e-3, "warmup_frac": 0.0, "total_steps": 1,
                "batch_size": 8, "epochs": 1},
    }
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


class TestExitCodes:
    def test_gen_corpus_ok(self, tiny_cfg_file, capsys):
        assert main(["gen-corpus", "--config", tiny_cfg_file]) == 0
        assert "corpus written" in capsys.readouterr().out

    def test_pretrain_before_training_is_dependency_error(self, tiny_cfg_file, capsys):
        main(["gen-corpus", "--config", tiny_cfg_file])
        assert main(["pretrain", "--config", tiny_cfg_file]) == 2
        assert "error:dependency:" in capsys.readouterr().err

    def test_render_without_corpus_is_dependency_error(self, tiny_cfg_file, tmp_path, capsys):
        code = main(["render", "--config", tiny_cfg_file,
                     "--text", "the cat", "--out", str(tmp_path / "f.bin")])
        assert code == 2
        assert "error:dependency:" in capsys.readouterr().err

    def test_infer_with_both_inputs_invalid(self, tiny_cfg_file, capsys):
        code = main(["infer", "--config", tiny_cfg_file,
                     "--input", "x", "--frames", "y"])
        assert code == 5
        assert "error:invalid:" in capsys.readouterr().err


class TestRender:
    def test_render_writes_loadable_frames(self, tiny_cfg_file, tmp_path, capsys):
        main(["gen-corpus", "--config", tiny_cfg_file])
        out = tmp_path / "frames.bin"
        assert main(["render", "--config", tiny_cfg_file, "--text",
                     "the cat sees the dog", "--out", str(out),
                     "--sigma", "0.05", "--noise-seed", "7"]) == 0
        seq = load_frames(out)
        assert seq.frames.shape == (5 * 3, 8)  # 5 words, r=3, d_a=8

    def test_render_deterministic(self, tiny_cfg_file, tmp_path):
        main(["gen-corpus", "--config", tiny_cfg_file])
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        for out in (a, b):
            main(["render", "--config", tiny_cfg_file, "--text", "a bird",
                  "--out", str(out), "--noise-seed", "3"])
        assert a.read_bytes() == b.read_bytes()


class TestGenCorpusDeterminism:
    def test_same_config_same_bytes(self, tmp_path, tiny_cfg_file):
        cfg = RunConfig.from_yaml(tiny_cfg_file)
        outs = []
        for sub in ("r1", "r2"):
            cfg.workdir = str(tmp_path / sub)
            p = tmp_path / f"{sub}.yaml"
            cfg.to_yaml(p)
            assert main(["gen-corpus", "--config", str(p)]) == 0
            corpus_dir = tmp_path / sub / "corpus"
            outs.append({f.name: f.read_bytes()
                         for f in sorted(corpus_dir.iterdir())})
        assert outs[0] == outs[1]


class TestReportCommand:
    def test_pretty_print(self, tiny_cfg_file, tmp_path, capsys):
        rep = EvalReport(rows=[EvalRow("text", 0.0, "heldout", 0.05, 0.9,
                                       1.0, 0.2, 997)],
                         config_hash="abc", seeds={}, timestamp=1.0)
        f = tmp_path / "r.csv"
        emit_report(rep, f)
        assert main(["report", "--config", tiny_cfg_file, "--file", str(f)]) == 0
        out = capsys.readouterr().out
        assert "heldout" in out and "0.050" in out

    def test_missing_report_io_error(self, tiny_cfg_file, tmp_path, capsys):
        code = main(["report", "--config", tiny_cfg_file,
                     "--file", str(tmp_path / "nope.csv")])
        assert code == 4
