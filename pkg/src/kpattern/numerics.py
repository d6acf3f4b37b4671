"""Deterministic numerical kernels: seedable counter-based RNG, fast
Walsh-Hadamard transform, and finite-difference gradients.

Index convention, used package-wide: a point x in {+-1}^n is encoded by an
integer m in [0, 2^n) with bit i of m equal to 1 iff x_{i+1} = -1 (bits are
little-endian, coordinate indices are 1-based).  A subset I of [n] is encoded
as the mask with bit i-1 set iff i in I.  Under this convention the character
chi_I(x) equals (-1)^popcount(m & mask(I)), so the Walsh-Hadamard transform
of a function table directly yields the Fourier coefficients <g, chi_I> with
respect to the uniform distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

MAX_WHT_BITS = 24


class Rng:
    """Counter-based random stream (Philox) with deterministic splitting.

    Equal seeds produce identical streams.  ``split(i)`` derives an
    independent child stream; children with distinct indices (and their
    descendants) never overlap, which keeps parallel work reproducible.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in _path)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def split(self, index: int) -> "Rng":
        return Rng(self.seed, self.path + (index,))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def random(self, size=None):
        return self._gen.random(size)

    def signs(self, size=None) -> np.ndarray:
        """Rademacher +-1 draws as float64."""
        return 1.0 - 2.0 * self._gen.integers(0, 2, size=size).astype(np.float64)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"


def subset_mask(indices: Iterable[int]) -> int:
    """Bitmask of a set of 1-based coordinate indices."""
    mask = 0
    for i in indices:
        if i < 1:
            raise ValueError(f"coordinate indices are 1-based, got {i}")
        mask |= 1 << (i - 1)
    return mask


def mask_indices(mask: int) -> tuple[int, ...]:
    """1-based coordinate indices of a subset bitmask."""
    out = []
    i = 1
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


@dataclass(frozen=True)
class FourierSpectrum:
    """All 2^n Fourier coefficients of a function on {+-1}^n, indexed by
    subset bitmask; ``coeffs[mask] = <g, chi_mask>`` under the uniform
    distribution (normalization 2^-n is already applied)."""

    n: int
    coeffs: np.ndarray = field(repr=False)

    def coefficient(self, subset) -> float:
        """Coefficient at a subset given as a bitmask or an iterable of
        1-based indices."""
        mask = subset if isinstance(subset, (int, np.integer)) else subset_mask(subset)
        return float(self.coeffs[mask])

    def squared_mass(self) -> float:
        """Sum of squared coefficients; equals E[g^2] by Parseval."""
        return float(np.dot(self.coeffs, self.coeffs))


def wht_unnormalized(table) -> np.ndarray:
    """In-place-style fast Walsh-Hadamard transform, O(n 2^n):
    out[s] = sum_m table[m] * (-1)^popcount(m & s)."""
    a = np.array(table, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError("table must be one-dimensional")
    m = a.size
    if m == 0 or m & (m - 1):
        raise ValueError(f"table length must be a power of two, got {m}")
    if m.bit_length() - 1 > MAX_WHT_BITS:
        raise ValueError(f"table length 2^n with n <= {MAX_WHT_BITS} required")
    h = 1
    while h < m:
        a = a.reshape(-1, 2 * h)
        left = a[:, :h].copy()
        right = a[:, h:].copy()
        a[:, :h] = left + right
        a[:, h:] = left - right
        h *= 2
    return a.reshape(m)


def wht(table) -> FourierSpectrum:
    """Fourier spectrum of a function table over {+-1}^n in the package index
    convention.  coeff(I) = 2^-n sum_x table(x) chi_I(x)."""
    out = wht_unnormalized(table)
    n = out.size.bit_length() - 1
    out /= out.size
    return FourierSpectrum(n=n, coeffs=out)


def finite_diff_grad(fn: Callable[[np.ndarray], float], point, h: float) -> np.ndarray:
    """Central-difference gradient of a scalar function, one probe pair per
    coordinate: (fn(x + h e_i) - fn(x - h e_i)) / 2h."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(point, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn(x))
        flat[i] = orig - h
        down = float(fn(x))
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(
                f"objective returned a non-finite value near coordinate {i}"
            )
        gflat[i] = (up - down) / (2.0 * h)
    return grad
