"""Run configuration: one validated dataclass tree, loadable from YAML,
hashed so every checkpoint and report can carry its provenance."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import yaml

from .schedule import ScheduleCfg


@dataclass
class DimsCfg:
    d_t: int = 64
    d_a: int = 32
    d_u: int = 64
    d_h: int = 128
    d_m: int = 96
    n_enc_blocks: int = 2
    n_mapper_blocks: int = 2
    n_lm_blocks: int = 3
    n_heads: int = 4
    r: int = 4
    context: int = 256
    max_len: int = 128
    vocab_max: int = 200


@dataclass
class CorpusCfg:
    n_sentences: int = 2200
    n_heldout: int = 200
    n_longform: int = 900
    n_instructions: int = 300
    n_lm_repetition: int = 1800
    n_lm_copy: int = 1200


@dataclass
class SpanCfg:
    max_spans: int = 3
    min_gap: int = 2


@dataclass
class AlignWeights:
    mse_weight: float = 1.0
    contrastive_weight: float = 0.1
    temperature: float = 0.07
    token_ce_weight: float = 1.0


@dataclass
class SeedsCfg:
    corpus: int = 11
    unified: int = 21
    lm: int = 31
    pretrain: int = 41
    sft: int = 51
    eval_noise: int = 997


@dataclass
class EvalCfg:
    sigmas: list = field(default_factory=lambda: [0.0, 0.1])
    n_sentences: int = 100
    max_new: int = 24


@dataclass
class RunConfig:
    workdir: str = "runs/reference"
    sigma: float = 0.1
    dims: DimsCfg = field(default_factory=DimsCfg)
    corpus: CorpusCfg = field(default_factory=CorpusCfg)
    spans: SpanCfg = field(default_factory=SpanCfg)
    align_weights: AlignWeights = field(default_factory=AlignWeights)
    seeds: SeedsCfg = field(default_factory=SeedsCfg)
    eval: EvalCfg = field(default_factory=EvalCfg)
    align: ScheduleCfg = field(default_factory=lambda: ScheduleCfg(
        base_lr=1e-3, warmup_frac=0.03, total_steps=1, batch_size=32, epochs=4))
    lm_train: ScheduleCfg = field(default_factory=lambda: ScheduleCfg(
        base_lr=1e-3, warmup_frac=0.03, total_steps=1, batch_size=32, epochs=8))
    pretrain: ScheduleCfg = field(default_factory=lambda: ScheduleCfg(
        base_lr=1e-3, warmup_frac=0.03, total_steps=1, batch_size=64, epochs=3))
    sft: ScheduleCfg = field(default_factory=lambda: ScheduleCfg(
        base_lr=1e-3, warmup_frac=0.03, total_steps=1, batch_size=64, epochs=5))

    def validate(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.dims.d_t % self.dims.n_heads or self.dims.d_m % self.dims.n_heads:
            raise ValueError("model dims must divide the head count")
        if self.corpus.n_heldout < 1 or self.corpus.n_sentences < 1:
            raise ValueError("corpus sizes must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        # workdir is where a run lives, not what it computes; relocating
        # a run must not orphan its checkpoints
        d = self.to_dict()
        d.pop("workdir", None)
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        for key, sub in (("dims", DimsCfg), ("corpus", CorpusCfg),
                         ("spans", SpanCfg), ("align_weights", AlignWeights),
                         ("seeds", SeedsCfg), ("eval", EvalCfg),
                         ("align", ScheduleCfg), ("lm_train", ScheduleCfg),
                         ("pretrain", ScheduleCfg), ("sft", ScheduleCfg)):
            if key in d and isinstance(d[key], dict):
                d[key] = sub(**d[key])
        return cls(**d).validate()

    @classmethod
    def from_yaml(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        return cls.from_dict(data)

    def to_yaml(self, path):
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)
