"""Temporal and spatial multi-indices.

A temporal index ``theta`` is a tuple over ``{0, ..., d}``: entry 0 stands
for the time derivative / ``dt`` integration, entry ``i >= 1`` for the
``i``-th path coordinate.  Time entries count twice in the weight.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, QueryError


def _fmt(entries: Sequence[int]) -> str:
    return "(" + ",".join(str(e) for e in entries) + ")"


@dataclass(frozen=True, order=True)
class TemporalIndex:
    entries: tuple
    d: int

    def __post_init__(self):
        entries = tuple(int(e) for e in self.entries)
        if self.d < 0:
            raise ConfigurationError(f"driver dimension must be >= 0, got {self.d}")
        for e in entries:
            if e < 0 or e > self.d:
                raise ConfigurationError(f"entry {e} outside {{0,...,{self.d}}}")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def zeros(self) -> int:
        return sum(1 for e in self.entries if e == 0)

    @property
    def weight(self) -> int:
        return len(self.entries) + self.zeros

    def reversed(self) -> "TemporalIndex":
        return TemporalIndex(self.entries[::-1], self.d)

    def __str__(self) -> str:
        return _fmt(self.entries)


@dataclass(frozen=True, order=True)
class SpatialIndex:
    entries: tuple

    def __post_init__(self):
        entries = tuple(int(e) for e in self.entries)
        if any(e < 0 for e in entries):
            raise ConfigurationError(f"spatial index entries must be >= 0, got {entries}")
        object.__setattr__(self, "entries", entries)

    @property
    def d_prime(self) -> int:
        return len(self.entries)

    @property
    def order(self) -> int:
        return sum(self.entries)

    @property
    def factorial(self) -> int:
        return math.prod(math.factorial(e) for e in self.entries)

    def __str__(self) -> str:
        return _fmt(self.entries)


@dataclass(frozen=True)
class CombinedIndex:
    theta: TemporalIndex
    ell: SpatialIndex

    @property
    def weight(self) -> int:
        return self.theta.weight + self.ell.order

    def sort_key(self):
        return (self.weight, len(self.theta), self.theta.entries, self.ell.entries)

    def __str__(self) -> str:
        return f"theta={self.theta} ell={self.ell}"


def as_theta(theta, d: int | None = None) -> tuple:
    """Normalise a TemporalIndex or plain sequence to a tuple of ints."""
    if isinstance(theta, TemporalIndex):
        return theta.entries
    return tuple(int(e) for e in theta)


def weight(theta) -> int:
    """``len(theta)`` plus the number of zero entries."""
    t = as_theta(theta)
    return len(t) + sum(1 for e in t if e == 0)


def reverse(theta):
    """Reverse the entries; returns the same type as the input."""
    if isinstance(theta, TemporalIndex):
        return theta.reversed()
    return tuple(as_theta(theta))[::-1]


def temporal_indices(m: int, d: int, nonzero: bool = False) -> list[tuple]:
    """All ``theta`` over ``{0..d}`` with weight ``<= m`` in canonical order.

    With ``nonzero=True`` only indices without time entries are returned.
    """
    if m < 0:
        raise ConfigurationError(f"order must be >= 0, got m={m}")
    letters = range(1, d + 1) if nonzero else range(0, d + 1)
    out = []
    for n in range(0, m + 1):
        for theta in itertools.product(letters, repeat=n):
            if weight(theta) <= m:
                out.append(theta)
    out.sort(key=lambda th: (weight(th), len(th), th))
    return out


def _spatial(order_max: int, d_prime: int) -> list[tuple]:
    if d_prime == 0:
        return [()]
    out = []
    for ell in itertools.product(range(order_max + 1), repeat=d_prime):
        if sum(ell) <= order_max:
            out.append(ell)
    return out


def enumerate_indices(m: int, d: int, d_prime: int = 0) -> list[CombinedIndex]:
    """Every ``(theta, ell)`` with combined weight ``<= m``, each once.

    Order: combined weight, then ``len(theta)``, then ``theta`` and ``ell``
    lexicographically.
    """
    if m < 0:
        raise ConfigurationError(f"order must be >= 0, got m={m}")
    if d < 0 or d_prime < 0:
        raise ConfigurationError("dimensions must be >= 0")
    out = []
    for theta in temporal_indices(m, d):
        for ell in _spatial(m - weight(theta), d_prime):
            out.append(CombinedIndex(TemporalIndex(theta, d), SpatialIndex(ell)))
    out.sort(key=CombinedIndex.sort_key)
    return out


def monomial(h, ell):
    """``prod(h_i ** ell_i)`` over the last axis of ``h``; 1 for the zero index."""
    e = ell.entries if isinstance(ell, SpatialIndex) else tuple(int(x) for x in ell)
    h = np.asarray(h, dtype=float)
    if h.ndim == 0:
        h = h[None]
    if len(e) != h.shape[-1]:
        raise QueryError(f"offset has dimension {h.shape[-1]}, index has {len(e)}")
    out = np.ones(h.shape[:-1])
    for i, ei in enumerate(e):
        if ei:
            out = out * h[..., i] ** ei
    return float(out) if out.ndim == 0 else out


def unit(i: int, d_prime: int) -> tuple:
    """Spatial index ``e_i`` (zero-based ``i``)."""
    return tuple(1 if k == i else 0 for k in range(d_prime))


def ell_factorial(ell: Iterable[int]) -> int:
    return math.prod(math.factorial(int(e)) for e in ell)
