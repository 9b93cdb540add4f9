"""Dense float64 arrays, a counter-based RNG and summary statistics.

Arrays are plain 2-D ``numpy.ndarray`` objects of dtype float64. The helpers
here enforce the shape and finiteness contracts the rest of the package
relies on, so no module has to guess about broadcasting.
"""

from __future__ import annotations

import numpy as np

RealArray = np.ndarray


class ShapeError(ValueError):
    """Array shapes do not satisfy an operation's contract."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class VarianceUndefinedError(DomainError):
    pass


def as_real_array(a, *, name: str = "array", cols: int | None = None) -> RealArray:
    """Validate ``a`` as a finite (rows, cols) float64 array and return it."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name}: expected a non-empty 2-D array, got shape {arr.shape}")
    if cols is not None and arr.shape[1] != cols:
        raise ShapeError(f"{name}: expected {cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name}: contains NaN or Inf")
    return arr


def as_column(a, n: int, *, name: str = "value") -> np.ndarray:
    """Broadcast a scalar or length-n vector to a float64 vector of length n."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    arr = arr.reshape(-1)
    if arr.shape[0] != n:
        raise ShapeError(f"{name}: expected {n} entries, got {arr.shape[0]}")
    return arr


class RngState:
    """Single-owner random stream built on the Philox counter-based generator.

    Philox output depends only on (key, counter), so a given seed yields the
    same bit stream on every platform. ``counter`` reports how far the stream
    has advanced; ``reset`` rewinds it.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise DomainError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self.reset()

    def reset(self) -> None:
        ss = np.random.SeedSequence([self.seed, self.stream])
        self._bitgen = np.random.Philox(ss)
        self.generator = np.random.Generator(self._bitgen)

    @property
    def counter(self) -> int:
        st = self._bitgen.state["state"]
        c = st["counter"]
        return int(c[0]) | (int(c[1]) << 64)

    def split(self, index: int) -> "RngState":
        """Independent child stream, a pure function of (seed, stream, index)."""
        return RngState(self.seed, (self.stream << 20) + 1 + int(index))

    def uniform(self, size) -> np.ndarray:
        return self.generator.random(size)

    def normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)

    def integers(self, high: int, size) -> np.ndarray:
        return self.generator.integers(0, high, size=size)

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, stream={self.stream}, counter={self.counter})"


def gauss(rng: RngState, n: int, d: int) -> RealArray:
    """n x d standard normal draws."""
    if n < 1 or d < 1:
        raise DomainError(f"gauss needs n >= 1 and d >= 1, got n={n}, d={d}")
    return rng.normal((n, d))


def mean_var(a) -> tuple[RealArray, RealArray]:
    """Per-column sample mean and unbiased sample variance, each shaped (1, cols)."""
    arr = as_real_array(a)
    if arr.shape[0] < 2:
        raise VarianceUndefinedError("variance needs at least 2 rows")
    mean = arr.mean(axis=0, keepdims=True)
    var = arr.var(axis=0, ddof=1, keepdims=True)
    return mean, var


def covariance(a, b) -> RealArray:
    """Per-column unbiased sample covariance of two equally shaped arrays."""
    a = as_real_array(a, name="a")
    b = as_real_array(b, name="b")
    if a.shape != b.shape:
        raise ShapeError(f"covariance: shapes differ {a.shape} vs {b.shape}")
    if a.shape[0] < 2:
        raise VarianceUndefinedError("covariance needs at least 2 rows")
    da = a - a.mean(axis=0, keepdims=True)
    db = b - b.mean(axis=0, keepdims=True)
    return (da * db).sum(axis=0, keepdims=True) / (a.shape[0] - 1)
