"""Seed derivation: every random draw descends from one root seed."""

from __future__ import annotations

import hashlib
import random


def derive_seed(root: int, *keys) -> int:
    """Stable 63-bit child seed for ``root`` and a path of keys."""
    material = "/".join([str(root), *map(str, keys)]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big") >> 1


def rng_for(root: int, *keys) -> random.Random:
    return random.Random(derive_seed(root, *keys))
