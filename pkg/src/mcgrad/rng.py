"""Deterministic, splittable random streams.

Every source of randomness in this package flows through an :class:`RngStream`.
A stream is identified by a 64-bit seed plus the sequence of split keys that
produced it, so the same (seed, splits, draw calls) always reproduces the same
variates, and ``split`` is O(1) and independent of how much the parent has
already been consumed.  This is what makes common-random-number coupling and
exact experiment replay possible: share or re-create a stream instead of
sharing mutable generator state.

Non-uniform sampling elsewhere in the package is built strictly on
:meth:`RngStream.uniform` and the inverse-CDF :meth:`RngStream.normal`
primitive, one uniform per normal, so two streams with the same identity stay
synchronised draw-for-draw.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One step of the splitmix64 mixing function (public-domain constants)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _derive_key(seed: int, path: tuple[int, ...]) -> int:
    """Derive a 128-bit Philox key from a seed and a tuple of split keys."""
    material = _splitmix64(seed & _MASK64)
    for k in path:
        material = _splitmix64(material ^ _splitmix64(k & _MASK64))
    lo = _splitmix64(material)
    hi = _splitmix64(material ^ 0xD1B54A32D192ED03)
    return (hi << 64) | lo


class RngStream:
    """A seedable, splittable stream of uniform random numbers.

    A stream is single-owner: do not share one instance across concurrent
    work; use :meth:`split` children instead.
    """

    __slots__ = ("seed", "path", "position", "_gen")

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed) & _MASK64
        self.path = tuple(int(k) & _MASK64 for k in path)
        self.position = 0
        self._gen = np.random.Generator(
            np.random.Philox(key=_derive_key(self.seed, self.path))
        )

    def split(self, key: int) -> "RngStream":
        """Child stream deterministic in (seed, path, key); parent unaffected."""
        return RngStream(self.seed, self.path + (int(key) & _MASK64,))

    def replica(self) -> "RngStream":
        """A fresh stream with the same identity, rewound to position 0."""
        return RngStream(self.seed, self.path)

    def uniform(self, size=None):
        """Draw uniforms in [0, 1); scalar when ``size`` is None."""
        self.position += 1 if size is None else int(np.prod(size))
        return self._gen.random(size)

    def normal(self, size=None):
        """Standard normals by inverse-CDF of :meth:`uniform` draws."""
        u = self.uniform(size)
        # random() can return exactly 0.0; clip keeps ndtri finite.
        return ndtri(np.clip(u, 1e-300, 1.0 - 1e-16))

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high) derived from uniform draws."""
        u = self.uniform(size)
        return (low + np.floor(u * (high - low))).astype(np.int64)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path}, position={self.position})"


def draw_uniform(stream: RngStream) -> float:
    """Single uniform variate in [0, 1)."""
    return float(stream.uniform())


def split(stream: RngStream, key: int) -> RngStream:
    """Functional alias for :meth:`RngStream.split`."""
    return stream.split(key)
