"""Deterministic random streams.

All randomness in the package flows through :class:`Prng`, a thin wrapper
around numpy's Philox4x64 counter-based bit generator. The (seed, stream)
pair forms the 128-bit Philox key, so distinct streams derived from one
seed are independent and reproducible bit-for-bit across runs. Gaussian
variates use the Box-Muller transform on Philox uniforms rather than
numpy's ziggurat, keeping the transform explicit and portable.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream identifiers. Keeping them here makes seed derivation auditable.
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_SHUFFLE = 2


class Prng:
    """Philox-backed generator for one (seed, stream) pair."""

    def __init__(self, seed: int, stream: int = STREAM_DATA):
        key = (int(seed) & _MASK64) | ((int(stream) & _MASK64) << 64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        u = self._gen.random(size)
        return low + (high - low) * u

    def normal(self, size=None, sigma: float = 1.0) -> np.ndarray:
        """Standard-normal draws scaled by sigma, via Box-Muller."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        # 1 - random() lies in (0, 1], so the log below is always finite.
        u1 = 1.0 - self._gen.random(pairs)
        u2 = self._gen.random(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([radius * np.cos(2.0 * np.pi * u2),
                            radius * np.sin(2.0 * np.pi * u2)])[:n]
        z *= sigma
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)
