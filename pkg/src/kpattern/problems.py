"""Instance space {+-1}^n, local-pattern and parity targets, distributions
with exact enumeration, and coordinate-permutation machinery.

Window convention: a width-k window starting at position j (1-based) covers
coordinates j..j+k-1, so the valid positions are j = 1..n-k+1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .numerics import Rng, mask_indices, subset_mask

ENUMERATION_CAP = 24
_CHUNK_BITS = 18


class CapacityError(Exception):
    """Exact enumeration requested beyond the supported instance count."""


def position_count(n: int, k: int) -> int:
    """Number of width-k windows in an n-bit input at stride 1."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    return n - k + 1


def _check_enum(n: int) -> None:
    if n > ENUMERATION_CAP:
        raise CapacityError(
            f"exact enumeration supports n <= {ENUMERATION_CAP}, got n={n}"
        )


def sign_vectors(n: int) -> np.ndarray:
    """All 2^n points of {+-1}^n as a (2^n, n) float64 matrix in ascending
    index order (bit i of the row index = 1 iff coordinate i+1 is -1)."""
    _check_enum(n)
    m = np.arange(1 << n, dtype=np.int64)
    bits = (m[:, None] >> np.arange(n, dtype=np.int64)) & 1
    return 1.0 - 2.0 * bits.astype(np.float64)


def iter_sign_chunks(n: int) -> Iterator[tuple[int, np.ndarray]]:
    """Enumerate {+-1}^n in ascending index order as (start_index, chunk)
    pairs with a fixed chunk shape, so reductions are reproducible."""
    _check_enum(n)
    total = 1 << n
    step = 1 << min(n, _CHUNK_BITS)
    offsets = np.arange(step, dtype=np.int64)
    cols = np.arange(n, dtype=np.int64)
    for start in range(0, total, step):
        m = start + offsets
        bits = (m[:, None] >> cols) & 1
        yield start, 1.0 - 2.0 * bits.astype(np.float64)


@dataclass(frozen=True)
class KPattern:
    """Target f(x) = g(x_{jstar..jstar+k-1}) determined by k consecutive
    coordinates; ``table`` holds g over {+-1}^k in the package index
    convention."""

    n: int
    k: int
    jstar: int
    table: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        if not 1 <= self.jstar <= self.n - self.k + 1:
            raise ValueError(
                f"jstar must lie in 1..{self.n - self.k + 1}, got {self.jstar}"
            )
        table = np.asarray(self.table, dtype=np.float64)
        if table.shape != (1 << self.k,):
            raise ValueError(f"truth table must have length {1 << self.k}")
        if not np.all(np.abs(table) == 1.0):
            raise ValueError("truth table values must be +-1")
        object.__setattr__(self, "table", table)

    def window(self) -> slice:
        """0-based column slice of the determining window."""
        return slice(self.jstar - 1, self.jstar - 1 + self.k)

    def evaluate(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.n:
            raise ValueError(f"expected {self.n} coordinates, got {X.shape[1]}")
        win = X[:, self.window()]
        idx = ((win < 0).astype(np.int64) << np.arange(self.k, dtype=np.int64)).sum(
            axis=1
        )
        out = self.table[idx]
        return float(out[0]) if single else out

    def __call__(self, x):
        return self.evaluate(x)


@dataclass(frozen=True)
class Parity:
    """chi_I(x) = prod_{i in I} x_i for a subset I of [n] held as a bitmask.
    I need not be consecutive, which covers arbitrary juntas of product
    form."""

    n: int
    mask: int

    def __post_init__(self):
        if self.mask <= 0:
            raise ValueError("index set must be non-empty")
        if self.mask >> self.n:
            raise ValueError(f"index set exceeds [n] for n={self.n}")

    @classmethod
    def of_indices(cls, n: int, indices) -> "Parity":
        return cls(n, subset_mask(indices))

    @classmethod
    def consecutive(cls, n: int, k: int, jstar: int = 1) -> "Parity":
        if not 1 <= jstar <= n - k + 1:
            raise ValueError("window out of range")
        return cls(n, ((1 << k) - 1) << (jstar - 1))

    @property
    def indices(self) -> tuple[int, ...]:
        return mask_indices(self.mask)

    @property
    def is_consecutive(self) -> bool:
        idx = self.indices
        return idx[-1] - idx[0] + 1 == len(idx)

    def as_kpattern(self) -> KPattern:
        """Embed a consecutive parity as the equivalent local pattern with
        g = product."""
        if not self.is_consecutive:
            raise ValueError("only consecutive index sets embed as patterns")
        idx = self.indices
        k = len(idx)
        z = np.arange(1 << k, dtype=np.int64)
        popcount = np.array([bin(int(v)).count("1") for v in z], dtype=np.int64)
        table = 1.0 - 2.0 * (popcount % 2).astype(np.float64)
        return KPattern(n=self.n, k=k, jstar=idx[0], table=table)

    def evaluate(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.n:
            raise ValueError(f"expected {self.n} coordinates, got {X.shape[1]}")
        cols = [i - 1 for i in self.indices]
        out = np.prod(X[:, cols], axis=1)
        return float(out[0]) if single else out

    def __call__(self, x):
        return self.evaluate(x)


@dataclass(frozen=True)
class Permutation:
    """Bijection pi on [n]; ``perm[i]`` is the 0-based image of 0-based i.
    Acting on points, pi(x)_i = x_{pi(i)}; on subsets, pi(I) = {pi(i): i in I}
    (1-based in both public notations).  By construction
    chi_I(pi(x)) = chi_{pi(I)}(x)."""

    perm: np.ndarray = field(repr=False)

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        n = perm.size
        if sorted(perm.tolist()) != list(range(n)):
            raise ValueError("not a permutation of 0..n-1")
        object.__setattr__(self, "perm", perm)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n, dtype=np.int64))

    @classmethod
    def of_mapping(cls, mapping: dict[int, int], n: int) -> "Permutation":
        """Build from a 1-based partial mapping; unmapped points are fixed."""
        perm = np.arange(n, dtype=np.int64)
        for src, dst in mapping.items():
            perm[src - 1] = dst - 1
        return cls(perm)

    @property
    def n(self) -> int:
        return int(self.perm.size)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n:
            raise ValueError("size mismatch")
        return x[..., self.perm]

    def permute_set(self, mask: int) -> int:
        out = 0
        for i in mask_indices(mask):
            out |= 1 << int(self.perm[i - 1])
        return out

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.n, dtype=np.int64)
        return Permutation(inv)

    def fixes(self, j: int) -> bool:
        """Whether the 1-based point j is fixed."""
        return int(self.perm[j - 1]) == j - 1

    def __call__(self, x):
        return self.apply(x)


@dataclass(frozen=True)
class Uniform:
    """Uniform distribution over {+-1}^n; exact expectations enumerate all
    2^n points (n <= ENUMERATION_CAP)."""

    n: int


@dataclass(frozen=True)
class Empirical:
    """Uniform distribution over an explicit list of sign vectors."""

    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("need a non-empty (m, n) point matrix")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return int(self.points.shape[1])


Distribution = Uniform | Empirical


def sample(dist: Distribution, count: int, rng: Rng) -> np.ndarray:
    if isinstance(dist, Uniform):
        return rng.signs((count, dist.n))
    idx = rng.integers(0, dist.points.shape[0], size=count)
    return dist.points[idx]


def population_expectation(
    fn: Callable[[np.ndarray], np.ndarray],
    dist: Distribution,
    mc_samples: int | None = None,
    rng: Rng | None = None,
):
    """E_{x~D}[fn(x)] for a vectorized fn mapping an (m, n) batch to (m,)
    values.

    Exact mode (mc_samples None) enumerates Uniform supports in ascending
    index order (or averages Empirical points in storage order) and returns a
    float.  Monte Carlo mode returns (mean, standard_error).
    """
    if mc_samples is not None:
        if rng is None:
            raise ValueError("Monte Carlo mode needs an Rng")
        if mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        vals = np.asarray(fn(sample(dist, mc_samples, rng)), dtype=np.float64)
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / np.sqrt(mc_samples)) if mc_samples > 1 else 0.0
        return mean, se
    if isinstance(dist, Empirical):
        vals = np.asarray(fn(dist.points), dtype=np.float64)
        return float(vals.mean())
    total = 0.0
    for _, chunk in iter_sign_chunks(dist.n):
        total += float(np.sum(np.asarray(fn(chunk), dtype=np.float64)))
    return total / float(1 << dist.n)


def random_kpattern(rng: Rng, n: int, k: int) -> KPattern:
    """Uniform truth table and uniform start position."""
    table = rng.signs(1 << k)
    jstar = int(rng.integers(1, n - k + 2))
    return KPattern(n=n, k=k, jstar=jstar, table=table)


def random_parity(rng: Rng, n: int, k: int) -> Parity:
    """Uniform k-element index set (not necessarily consecutive)."""
    idx = rng.generator.choice(n, size=k, replace=False) + 1
    return Parity.of_indices(n, idx.tolist())


def random_permutation_fixing(rng: Rng, n: int, j: int) -> Permutation:
    """Uniform permutation of [n] among those fixing the 1-based point j."""
    if not 1 <= j <= n:
        raise ValueError("fixed point out of range")
    others = [i for i in range(n) if i != j - 1]
    images = rng.generator.permutation(np.array(others, dtype=np.int64))
    perm = np.empty(n, dtype=np.int64)
    perm[j - 1] = j - 1
    perm[others] = images
    return Permutation(perm)
