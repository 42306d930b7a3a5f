"""Tensor primitives.

Tensors are plain ``numpy.ndarray`` values stored row-major (C order).
Feature maps are laid out height x width x channels, convolution kernels
as kh x kw x in_channels x out_channels.

Randomness goes through :class:`Rng`, a thin wrapper over numpy's PCG64
bit generator. PCG64 produces the same stream for a given seed on every
platform, which is the property the training loop relies on.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import EmptyRange, InvalidRate, ShapeMismatch, ZeroOrNegativeExtent

DTYPE = np.float32


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ZeroOrNegativeExtent(f"every extent must be >= 1, got {shape}")
    return shape


def tensor_zeros(shape: Sequence[int], dtype=DTYPE) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=dtype)


def tensor_map2(a: np.ndarray, b: np.ndarray, f: Callable) -> np.ndarray:
    """Apply a binary function elementwise. No broadcasting."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    out = np.asarray(f(a, b))
    if out.shape != a.shape:
        raise ShapeMismatch(f"function changed shape {a.shape} -> {out.shape}")
    return out


def strides_of(shape: Sequence[int]) -> tuple[int, ...]:
    strides = [1] * len(shape)
    for j in range(len(shape) - 2, -1, -1):
        strides[j] = strides[j + 1] * shape[j + 1]
    return tuple(strides)


def flat_index(coord: Sequence[int], shape: Sequence[int]) -> int:
    if len(coord) != len(shape):
        raise ShapeMismatch(f"coordinate rank {len(coord)} != shape rank {len(shape)}")
    for i, n in zip(coord, shape):
        if not 0 <= i < n:
            raise IndexError(f"coordinate {tuple(coord)} outside {tuple(shape)}")
    return sum(i * s for i, s in zip(coord, strides_of(shape)))


def coordinate(index: int, shape: Sequence[int]) -> tuple[int, ...]:
    size = int(np.prod(shape))
    if not 0 <= index < size:
        raise IndexError(f"flat index {index} outside size {size}")
    coord = []
    for s in strides_of(shape):
        q, index = divmod(index, s)
        coord.append(q)
    return tuple(coord)


class Rng:
    """Seeded random stream (numpy PCG64). Single owner; not thread-safe."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def random(self, shape) -> np.ndarray:
        """Float64 samples in [0, 1)."""
        return self._gen.random(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def uniform(self, shape, lo: float, hi: float) -> np.ndarray:
        return rng_uniform(self, shape, lo, hi)


def rng_uniform(rng: Rng, shape: Sequence[int], lo: float, hi: float,
                dtype=np.float64) -> np.ndarray:
    if not lo < hi:
        raise EmptyRange(f"need lo < hi, got [{lo}, {hi})")
    shape = _check_shape(shape)
    out = lo + (hi - lo) * rng.random(shape)
    # guard against rounding up to hi
    out = np.minimum(out, np.nextafter(hi, lo))
    return out.astype(dtype, copy=False)


def dropout_mask(rng: Rng, shape, rate: float, dtype=DTYPE) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return (keep / (1.0 - rate)).astype(dtype)
