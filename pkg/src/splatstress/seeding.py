"""Deterministic named RNG streams.

Every pipeline takes a single integer seed; subsystems (trainer, attack,
scene generation) pull independent generators derived from that seed and a
stream name, so adding a consumer never perturbs the others.
"""
from __future__ import annotations

import zlib

import numpy as np


def derive_rng(seed: int, stream: str) -> np.random.Generator:
    """Return a Generator for `stream`, reproducible across runs and platforms."""
    # crc32 keyed by name: stable, unlike Python's randomized hash().
    tag = zlib.crc32(stream.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))
