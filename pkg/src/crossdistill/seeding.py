"""Deterministic seed derivation for independent substreams."""
from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    """Hash arbitrary tags into a nonnegative 63-bit seed.

    Stable across runs and platforms; every (master, stage, index...) tuple
    gets its own reproducible stream.
    """
    key = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
