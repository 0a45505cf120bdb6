"""Synthetic acoustic renderer: deterministic noisy frame sequences from
token ids, standing in for recorded speech.

Each token id has a fixed pseudo-random base pattern (seed-stable, drawn
from its own stream so it shares nothing with any text embedding table);
a token yields r frames of base + within-token positional offset +
Gaussian noise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tokenizer import TokenSeq

PATTERN_SEED = 0x7E5A
DUMP_MAGIC = b"TESA"
DUMP_VERSION = 1


@dataclass
class AcousticSeq:
    frames: np.ndarray  # F x d_a float32
    frames_per_token: int
    token_count: int
    true_counts: list | None = None  # jittered mode bookkeeping, oracle use only

    @property
    def num_frames(self):
        return self.frames.shape[0]


def base_pattern_table(vocab_size: int, d_a: int) -> np.ndarray:
    rng = np.random.default_rng(PATTERN_SEED)
    return rng.standard_normal((vocab_size, d_a)).astype(np.float32)


def _positional_offsets(r: int, d_a: int) -> np.ndarray:
    rng = np.random.default_rng(PATTERN_SEED + 1)
    direction = rng.standard_normal(d_a).astype(np.float32)
    direction /= np.linalg.norm(direction)
    steps = np.arange(r, dtype=np.float32)[:, None] * 0.05
    return steps * direction[None, :]


def render(text: TokenSeq, noise_seed: int, sigma: float, r: int,
           table: np.ndarray) -> AcousticSeq:
    if sigma < 0:
        raise ValueError(f"render: sigma must be >= 0, got {sigma}")
    if r < 1:
        raise ValueError(f"render: r must be >= 1, got {r}")
    d_a = table.shape[1]
    offsets = _positional_offsets(r, d_a)
    frames = np.repeat(table[np.asarray(text.ids, dtype=np.int64)], r, axis=0)
    frames = frames + np.tile(offsets, (len(text.ids), 1))
    if sigma > 0:
        rng = np.random.default_rng(noise_seed)
        frames = frames + sigma * rng.standard_normal(frames.shape).astype(np.float32)
    return AcousticSeq(frames=frames.astype(np.float32), frames_per_token=r,
                       token_count=len(text.ids))


def render_jittered(text: TokenSeq, noise_seed: int, sigma: float,
                    r_min: int, r_max: int, table: np.ndarray) -> AcousticSeq:
    if not (1 <= r_min <= r_max):
        raise ValueError(f"render_jittered: bad range [{r_min}, {r_max}]")
    # separate stream for counts so the degenerate range reproduces render() bit-for-bit
    count_rng = np.random.default_rng((noise_seed, 0x9E37))
    counts = count_rng.integers(r_min, r_max + 1, size=len(text.ids))
    d_a = table.shape[1]
    offsets = _positional_offsets(r_max, d_a)
    rows = []
    for tid, c in zip(text.ids, counts):
        block = table[tid][None, :] + offsets[:c]
        rows.append(block)
    frames = np.concatenate(rows, axis=0) if rows else np.zeros((0, d_a), np.float32)
    if sigma > 0:
        rng = np.random.default_rng(noise_seed)
        frames = frames + sigma * rng.standard_normal(frames.shape).astype(np.float32)
    return AcousticSeq(frames=frames.astype(np.float32), frames_per_token=r_min,
                       token_count=len(text.ids), true_counts=[int(c) for c in counts])


def dump_frames(seq: AcousticSeq, path):
    F, d_a = seq.frames.shape
    with open(path, "wb") as f:
        f.write(DUMP_MAGIC)
        f.write(struct.pack("<III", DUMP_VERSION, F, d_a))
        f.write(seq.frames.astype("<f4").tobytes())


def load_frames(path) -> AcousticSeq:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DUMP_MAGIC:
            raise ValueError(f"frame file: bad magic {magic!r}")
        version, F, d_a = struct.unpack("<III", f.read(12))
        if version != DUMP_VERSION:
            raise ValueError(f"frame file: unsupported version {version}")
        data = np.frombuffer(f.read(F * d_a * 4), dtype="<f4").reshape(F, d_a)
    return AcousticSeq(frames=data.astype(np.float32), frames_per_token=0, token_count=0)
