"""Deterministic seed derivation.

Every run owns its own seeded generator; seeds for replicate r are derived
from the base seed and a label so that adding replicates, or reordering
parallel execution, never perturbs existing streams.
"""

from __future__ import annotations

import hashlib


def derive_seed(base: int, *labels: int | str) -> int:
    """Derive a stable 64-bit seed from a base seed and a label path.

    The derivation is a SHA-256 hash of the repr of the label tuple, so it is
    stable across processes, platforms and Python versions (unlike ``hash``).
    """
    material = repr((int(base),) + tuple(labels)).encode("utf-8")
    digest = hashlib.sha256(material).digest()
    return int.from_bytes(digest[:8], "little")
