"""Deterministic derivation of random streams from a master seed and labels."""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_words(label: int | str) -> list[int]:
    if isinstance(label, (bool, np.bool_)):
        raise TypeError("boolean labels are ambiguous; use int or str")
    if isinstance(label, (int, np.integer)):
        tag, payload = b"i", str(int(label)).encode()
    elif isinstance(label, str):
        tag, payload = b"s", label.encode()
    else:
        raise TypeError(f"stream labels must be int or str, got {type(label).__name__}")
    digest = hashlib.blake2b(tag + payload, digest_size=16).digest()
    return [int.from_bytes(digest[:8], "little"), int.from_bytes(digest[8:], "little")]


def seed_sequence(master_seed: int, *labels: int | str) -> np.random.SeedSequence:
    """SeedSequence for ``(master_seed, *labels)``.

    Labels are hashed with their type tag, so ``1`` and ``"1"`` give different
    streams, and the position of each label matters.
    """
    words = [int(master_seed) & _MASK64]
    for position, label in enumerate(labels):
        words.append(position)
        words.extend(_label_words(label))
    return np.random.SeedSequence(words)


def derive_stream(master_seed: int, *labels: int | str) -> np.random.Generator:
    """Independent generator keyed by the master seed and an ordered label tuple."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, *labels)))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit integer seed from ``rng`` (for numba-side generators)."""
    return int(rng.integers(0, 2**63 - 1))
