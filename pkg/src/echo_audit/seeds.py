"""Deterministic seed derivation for repeatable, order-independent runs.

Every randomized task derives its own seed from the master seed plus the
identifiers of the task (metric name, repetition index, ...) so results
do not depend on execution order or thread schedule.
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    """Hash the parts into a 64-bit seed, stably across platforms."""
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "big")
