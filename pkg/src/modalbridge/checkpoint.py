"""Binary checkpoint container shared by every trainable component.

Layout: magic "TESU", version u32, component tag u8, tensor count u32,
then per tensor {name len u16, name bytes, rank u8, dims u32[], f32 LE
data}. The run-config hash rides along as a synthetic u8-valued tensor
so the container format stays uniform.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"TESU"
VERSION = 1

TAG_UNIFIED = 1
TAG_LM = 2
TAG_PROJECTOR = 3
TAG_CONTROL_UNIFIED = 4

CONFIG_HASH_KEY = "__config_hash__"


class CheckpointError(ValueError):
    pass


def save(path, tag: int, tensors: dict, config_hash: str = ""):
    items = dict(tensors)
    if config_hash:
        items[CONFIG_HASH_KEY] = np.frombuffer(
            config_hash.encode("ascii"), dtype=np.uint8).astype(np.float32)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IBI", VERSION, tag, len(items)))
        for name, t in items.items():
            arr = np.asarray(t.data if hasattr(t, "data") else t, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load(path, expect_tag: int | None = None):
    """Return (tag, {name: float32 array}, config_hash)."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        version, tag, count = struct.unpack("<IBI", f.read(9))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        if expect_tag is not None and tag != expect_tag:
            raise CheckpointError(f"{path}: component tag {tag}, expected {expect_tag}")
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(dims)
            tensors[name] = arr.astype(np.float32)
    config_hash = ""
    if CONFIG_HASH_KEY in tensors:
        config_hash = bytes(tensors.pop(CONFIG_HASH_KEY).astype(np.uint8)).decode("ascii")
    return tag, tensors, config_hash


def restore(tensors: dict, params: dict):
    """Copy loaded arrays into live parameter tensors, shape-checked."""
    for name, p in params.items():
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name!r}")
        arr = tensors[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"{name}: shape {arr.shape} vs {p.data.shape}")
        p.data[...] = arr
