"""Stateless counter-based randomness.

Every observation in a cascade trace is a pure function of
``(seed, vertex key, time)``.  Draws therefore do not depend on query
order or on how trials are scheduled across workers, which is what makes
campaign outputs byte-identical at any worker count.

The mixer is the splitmix64 finalizer applied in a fold over the key
components.  It is implemented twice: once on Python ints (scalar paths,
seed derivation) and once vectorized on ``np.uint64`` arrays (bulk
observation generation).  A unit test pins the two against each other.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    """One splitmix64 finalizer round on a 64-bit integer."""
    z = (x + _GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def mix64(*parts: int) -> int:
    """Fold integer components into a single 64-bit hash.

    Negative components are taken mod 2**64 (two's complement), so lattice
    coordinates can be fed in directly.
    """
    h = 0
    for p in parts:
        h = splitmix64(h ^ (int(p) & MASK64))
    return h


def derive_seed(master_seed: int, *parts: int) -> int:
    """Deterministic child seed for a trial, keyed by campaign coordinates.

    This is the stable replay contract: a record of ``(master_seed, parts)``
    is enough to regenerate any single trial.
    """
    return mix64(master_seed, *parts)


def _splitmix64_np(x: np.ndarray) -> np.ndarray:
    # modular 2**64 wraparound is intentional; numpy warns for 0-d scalars
    with np.errstate(over="ignore"):
        z = x + np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def fold_hash_np(h: np.ndarray, component: np.ndarray | int) -> np.ndarray:
    """Vectorized fold step: h <- splitmix64(h ^ component)."""
    comp = np.asarray(component).astype(np.uint64, copy=False)
    return _splitmix64_np(np.asarray(h, dtype=np.uint64) ^ comp)


def counter_bits(seed: int, keys: np.ndarray, t: int) -> np.ndarray:
    """64 hash bits per vertex key for observation round ``t``; equals
    ``mix64(seed, key, t)`` elementwise.

    ``seed`` and ``keys`` broadcast, so a (trials, 1) seed array against a
    (vertices,) key array yields a (trials, vertices) block in one call.
    """
    h = _splitmix64_np(np.asarray(seed, dtype=np.uint64))
    h = fold_hash_np(h, keys)
    return fold_hash_np(h, np.uint64(t & MASK64))


def counter_uniforms(seed: int, keys: np.ndarray, t: int) -> np.ndarray:
    """Uniform draws in the open interval (0, 1), one per key."""
    bits = counter_bits(seed, keys, t)
    # 53 significant bits; +0.5 keeps the draw strictly inside (0, 1).
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
