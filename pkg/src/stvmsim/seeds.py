"""Deterministic seed derivation for paired experiments.

Every stochastic component takes an explicit integer seed. When one run
needs several independent streams (per voter, per trial, per audit), the
sub-seeds are derived from the master seed plus string labels via SHA-256,
so results never depend on call order, process hash randomization, or
platform word size. Using the same master seed for two compared runs gives
common random numbers: the voter populations and detection draws line up
draw for draw, which keeps paired comparisons low-variance.
"""

from __future__ import annotations

import hashlib

_SEED_BITS = 64


def derive_seed(master: int, *labels: str | int) -> int:
    """Derive a stable 64-bit sub-seed from a master seed and labels."""
    h = hashlib.sha256()
    h.update(str(int(master)).encode("ascii"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big") % (1 << _SEED_BITS)
