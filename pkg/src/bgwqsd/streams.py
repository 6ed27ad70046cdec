"""Counter-based random streams.

Every random draw in this package is a pure function of a 64-bit seed and
a handful of integer coordinates (path, generation, parent type, couple
index, ...).  This makes ensembles bit-identical regardless of scheduling:
workers can consume the coordinate space in any order and still produce
the same numbers.

The mixer is the splitmix64 finalizer applied to a running combination of
the key words.  It is not cryptographic; it only needs good avalanche so
that neighbouring coordinates decorrelate.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64
_INV_2_53 = 1.0 / float(1 << 53)


def _finalize(x: np.ndarray) -> np.ndarray:
    """splitmix64 avalanche on uint64 arrays (or scalars)."""
    x = (x ^ (x >> _U64(30))) * _MIX1
    x = (x ^ (x >> _U64(27))) * _MIX2
    return x ^ (x >> _U64(31))


def mix(*words) -> np.ndarray:
    """Combine integer words into uint64 hashes, broadcasting arrays.

    Each word is absorbed with a distinct round constant before the
    avalanche, so ``mix(a, b) != mix(b, a)`` in general.  Wraparound is the
    point of the arithmetic here, hence the suppressed overflow warnings.
    """
    acc = _U64(0x8F1BBCDC2B5F6E35)
    with np.errstate(over="ignore"):
        for w in words:
            w = np.asarray(w, dtype=np.uint64)
            acc = _finalize((acc + _GAMMA) ^ (w * _MIX1 + _GAMMA))
    return acc


def uniforms(*words) -> np.ndarray:
    """Uniform float64 in [0, 1), one per broadcast element of the key words."""
    bits = mix(*words)
    return (bits >> _U64(11)).astype(np.float64) * _INV_2_53


class CoupleStream:
    """Seeded stream of per-couple uniforms for one path of the process.

    Draws are keyed by (seed, path, generation, parent type, couple index),
    with couples ordered type-major and index-minor.  Two streams with the
    same coordinates produce identical draws, which is what the coupled
    monotonicity / superadditivity arguments rely on: enlarging the initial
    condition only appends couples, it never re-keys existing ones.
    """

    def __init__(self, seed: int, path: int = 0, generation: int = 0):
        self.seed = int(seed)
        self.path = int(path)
        self.generation = int(generation)

    def couple_uniforms(self, type_index: int, n: int) -> np.ndarray:
        """One uniform per couple of the given parent type."""
        if n == 0:
            return np.empty(0, dtype=np.float64)
        return uniforms(
            self.seed, self.path, self.generation, type_index, np.arange(n)
        )

    def next_generation(self) -> "CoupleStream":
        return CoupleStream(self.seed, self.path, self.generation + 1)
