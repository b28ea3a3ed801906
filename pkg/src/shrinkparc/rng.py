"""Seed substreams.

A run has one integer seed. Every consumer derives its own generator from
``(seed, purpose, *indices)`` so results never depend on execution order or
worker count.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def seed_sequence(seed: int, *tags) -> np.random.SeedSequence:
    return np.random.SeedSequence([_key(seed), *(_key(t) for t in tags)])


def substream(seed: int, *tags) -> np.random.Generator:
    """Independent generator for ``(seed, *tags)``; tags may be ints or strings."""
    return np.random.default_rng(seed_sequence(seed, *tags))


def derive_seed(seed: int, *tags) -> int:
    """A 32-bit integer seed for ``(seed, *tags)``."""
    return int(seed_sequence(seed, *tags).generate_state(1)[0])


def cluster_seed(seed: int, subject: int) -> int:
    """k-means seed for one subject's parcellations.

    Every arm (raw, shrunk, test) of a subject uses the same seed, so identical
    inputs always give identical parcellations.
    """
    return derive_seed(seed, "cluster", subject)
