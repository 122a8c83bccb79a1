"""Deterministic 64-bit seed splitting.

Child seed = first 8 bytes (big-endian) of SHA-256 over the ASCII string
``"<seed>:<label>"``, where ``<seed>`` is the parent seed reduced modulo
2**64.  The rule is part of the reproducibility contract: fixed labels
("omit", "fn", "trial:17", ...) give every consumer its own independent
stream, stable across platforms and processes.
"""

from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed & MASK64}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
