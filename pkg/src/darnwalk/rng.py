"""Counter-based random streams for reproducible parallel sampling.

Every path in an ensemble owns an independent stream identified by
``(seed, stream)``.  Draw ``k`` of a stream is a pure function of the
stream key and the counter ``k``, so paths can be generated in any
order, on any number of threads, with bitwise-identical results.

The generator is the SplitMix64 sequence: output ``k`` is the avalanche
mix of ``key + (k + 1) * GAMMA`` where GAMMA is the 64-bit golden ratio.
The same three-line mix is reimplemented inside the numba kernels in
:mod:`darnwalk.dynamics`; ``tests/test_rng.py`` pins the two code paths
against each other.
"""

from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Largest multiple of 2**-53 below 1.0; uniforms live on [0, 1).
U53 = 2.0**-53


def mix64(z: int) -> int:
    """SplitMix64 finalizer: a bijective avalanche mix of a 64-bit word."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, stream: int) -> int:
    """Derive the 64-bit key of stream ``stream`` under ``seed``."""
    return mix64((mix64(seed & MASK64) + (stream & MASK64) * GAMMA) & MASK64)


def raw64(key: int, counter: int) -> int:
    """Draw ``counter`` of the stream with key ``key`` as a raw 64-bit word."""
    return mix64((key + ((counter + 1) & MASK64) * GAMMA) & MASK64)


def uniform(key: int, counter: int) -> float:
    """Draw ``counter`` as a double in [0, 1) with 53 random bits."""
    return (raw64(key, counter) >> 11) * U53


def derive_seed(master: int, label: str) -> int:
    """Deterministic sub-seed for a named purpose (one per experiment/level).

    Hashing keeps unrelated experiments statistically independent while the
    whole run remains a pure function of the master seed.
    """
    digest = hashlib.sha256(f"{master & MASK64}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
