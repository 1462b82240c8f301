"""Deterministic random number streams.

All randomness in an experiment flows from one top-level integer seed.
Sub-tasks get independent streams by splitting that seed with a stable
string label, so adding or reordering sub-tasks never perturbs the
streams of the others.
"""

from __future__ import annotations

import zlib

import numpy as np


def child_seed(seed: int, label: str) -> np.random.SeedSequence:
    """Derive the seed sequence for sub-task `label` under top-level `seed`."""
    tag = zlib.crc32(label.encode("utf-8"))
    return np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(tag,))


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Generator for sub-task `label`; same (seed, label) always gives the same stream."""
    return np.random.default_rng(child_seed(seed, label))
