"""Seeded generators forked from one run seed by fixed labels."""

from __future__ import annotations

import zlib

import numpy as np


def fork(seed: int, label: str) -> np.random.Generator:
    """Independent generator for subsystem ``label`` of run ``seed``."""
    return np.random.default_rng([int(seed), zlib.crc32(label.encode("utf-8"))])
