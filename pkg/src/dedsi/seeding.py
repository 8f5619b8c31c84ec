"""Single-knob seed derivation.

Every random decision in the package flows from one 64-bit global seed.
Sub-seeds are derived as ``derive(seed, *labels)`` where the labels name the
role ("model", peer_id), so adding a consumer never shifts the streams of
existing ones.  The derivation is SHA-256 over ``"<seed>/<label>/<label>..."``
truncated to 64 bits, which keeps it stable across platforms and releases.
"""

import hashlib

import numpy as np


def derive(seed, *labels) -> int:
    """Derive a 64-bit sub-seed from a global seed and role labels."""
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(seed, *labels) -> np.random.Generator:
    """A numpy Generator seeded for one named role."""
    return np.random.default_rng(derive(seed, *labels))
