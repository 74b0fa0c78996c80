"""Deterministic seed derivation.

Every stochastic site in the pipeline derives its seed from the run's master
seed plus a structural path (step index, trial index, ...), so any segment of
a run can be reproduced in isolation, including bit-for-bit resume.
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a sequence of hashable path parts."""
    key = "/".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "little") % (2**63)
