"""The one trainable bridge: a two-layer MLP from the shared latent space
into the LM embedding space. Second layer starts at zero so freshly
spliced spans inject nothing until training moves them."""

from __future__ import annotations

import numpy as np

from . import nn, numerics as nm
from .numerics import Tensor
from .encoder import LatentSeq


class Projector:
    def __init__(self, rng, d_u: int, d_h: int, d_m: int):
        self.d_u, self.d_h, self.d_m = d_u, d_h, d_m
        self.l1 = nn.Linear(rng, d_u, d_h)
        self.l2 = nn.Linear(rng, d_h, d_m, zero_init=True)
        self.param_count = sum(p.data.size for p in self.parameters())

    def __call__(self, latents) -> Tensor:
        if isinstance(latents, LatentSeq):
            latents = Tensor(latents.vectors)
        if latents.shape[0] == 0:
            raise ValueError("projector: empty latent sequence")
        if latents.shape[1] != self.d_u:
            raise nm.ShapeError(
                f"projector: latent dim {latents.shape[1]} != {self.d_u}")
        return self.l2(nm.gelu(self.l1(latents)))

    project = __call__

    def parameters(self):
        return self.l1.parameters() + self.l2.parameters()

    def named_parameters(self):
        return {f"proj.{i}": p for i, p in enumerate(self.parameters())}

    def snapshot(self) -> dict:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def restore(self, snap: dict):
        for k, p in self.named_parameters().items():
            p.data[...] = snap[k]
