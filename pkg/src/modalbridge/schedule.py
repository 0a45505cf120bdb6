"""Learning-rate schedule: linear warmup into cosine decay to zero."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass
class ScheduleCfg:
    base_lr: float = 1e-4
    warmup_frac: float = 0.03
    total_steps: int = 1
    batch_size: int = 64
    epochs: int = 3

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not (0 <= self.warmup_frac < 1):
            raise ValueError(f"warmup_frac must be in [0,1), got {self.warmup_frac}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")


def lr_at(step: int, cfg: ScheduleCfg) -> float:
    if not (0 <= step <= cfg.total_steps):
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    warmup = cfg.warmup_frac * cfg.total_steps
    if warmup > 0 and step < warmup:
        return cfg.base_lr * step / warmup
    if cfg.total_steps == warmup:
        return cfg.base_lr
    progress = (step - warmup) / (cfg.total_steps - warmup)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
