"""Desk-scale speech-capable LM trained from text only: a dual-modality
encoder with a shared latent space, a frozen decoder LM, and a small
trainable projector bridging the two."""

__version__ = "0.1.0"
