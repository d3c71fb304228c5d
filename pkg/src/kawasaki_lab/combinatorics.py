"""Exact combinatorial kernels: Stirling numbers, Touchard polynomials,
composition sets and finite-difference coefficients.

Everything except :func:`touchard` works in exact integer / rational
arithmetic so that the identities can be tested exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial
from typing import Iterator, Sequence

__all__ = [
    "Composition",
    "stirling2",
    "stirling2_row",
    "touchard",
    "touchard_coeffs",
    "bell",
    "enumerate_compositions",
    "composition_weight",
    "wk",
    "wk_table",
]


@lru_cache(maxsize=None)
def stirling2_row(n: int) -> tuple[int, ...]:
    """Row ``(S(n, 0), ..., S(n, n))`` of Stirling numbers of the second kind."""
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if n == 0:
        return (1,)
    prev = stirling2_row(n - 1)
    row = [0] * (n + 1)
    for l in range(1, n + 1):
        # S(n, l) = l S(n-1, l) + S(n-1, l-1)
        row[l] = (l * prev[l] if l < n else 0) + prev[l - 1]
    return tuple(row)


def stirling2(n: int, l: int) -> int:
    """Number of ways to split ``n`` labelled items into ``l`` nonempty blocks."""
    if n < 0 or l < 0:
        raise ValueError(f"n and l must be nonnegative, got n={n}, l={l}")
    if l > n:
        return 0
    return stirling2_row(n)[l]


def touchard_coeffs(n: int) -> tuple[int, ...]:
    """Integer coefficients ``(c_0, ..., c_n)`` of ``T_n(x) = sum_l c_l x^l``."""
    return stirling2_row(n)


def touchard(n: int, x: float) -> float:
    """Touchard polynomial ``T_n(x) = sum_l S(n, l) x^l`` (Horner evaluation).

    ``T_n(x)`` is the n-th raw moment of a Poisson variable with mean ``x``.
    """
    coeffs = touchard_coeffs(n)
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def bell(n: int) -> int:
    return sum(stirling2_row(n))


@dataclass(frozen=True)
class Composition:
    """An element ``c`` of the set ``C_{m,n}``.

    ``counts[k]`` is the number of slots carrying order ``k``; the storage is
    dense up to index ``n`` since ``sum_k k c_k = n`` forces ``c_j = 0`` for
    ``j > n``.
    """

    counts: tuple[int, ...]
    m: int
    n: int

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValueError(f"negative entry in {counts}")
        if self.m < 1 or self.n < 0:
            raise ValueError(f"need m >= 1 and n >= 0, got m={self.m}, n={self.n}")
        if any(c for c in counts[self.n + 1:]):
            raise ValueError(f"c_j must vanish for j > n={self.n}: {counts}")
        counts = counts[: self.n + 1] + (0,) * (self.n + 1 - len(counts))
        if sum(counts) != self.m or sum(k * c for k, c in enumerate(counts)) != self.n:
            raise ValueError(f"{counts} is not in C_({self.m},{self.n})")
        object.__setattr__(self, "counts", counts)

    def orders(self) -> tuple[int, ...]:
        """Slot orders ``(q_1, ..., q_m)`` in nondecreasing order."""
        return tuple(k for k, c in enumerate(self.counts) for _ in range(c))

    def __eq__(self, other):
        if isinstance(other, Composition):
            return (self.m, self.n, self.counts) == (other.m, other.n, other.counts)
        if isinstance(other, (tuple, list)):
            other = tuple(other)
            width = max(len(other), len(self.counts))
            pad = lambda t: tuple(t) + (0,) * (width - len(t))
            return pad(self.counts) == pad(other)
        return NotImplemented

    def __hash__(self):
        return hash((self.m, self.n, self.counts))


def _compositions(m: int, n: int, k: int, width: int) -> Iterator[tuple[int, ...]]:
    # assign c_k, c_{k+1}, ... with sum m and weighted sum n, c_k taken large first
    if k == width - 1:
        if m * k == n:
            yield (m,)
        elif m == 0 and n == 0:
            yield (0,)
        return
    for ck in range(m, -1, -1):
        rest_n = n - k * ck
        if rest_n < 0:
            continue
        rest_m = m - ck
        # remaining slots carry order >= k+1
        if rest_n < (k + 1) * rest_m and rest_m > 0:
            continue
        if rest_m == 0 and rest_n != 0:
            continue
        for tail in _compositions(rest_m, rest_n, k + 1, width):
            yield (ck,) + tail


def enumerate_compositions(m: int, n: int) -> list[Composition]:
    """All elements of ``C_{m,n}`` in descending lexicographic order of counts.

    >>> [c.counts for c in enumerate_compositions(2, 2)]
    [(1, 0, 1), (0, 2, 0)]
    """
    if m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    return [Composition(c, m, n) for c in _compositions(m, n, 0, n + 1)]


def composition_weight(c: Composition | Sequence[int], m: int | None = None,
                       n: int | None = None) -> Fraction:
    """Multinomial weight ``m! n! / (prod_k c_k! * prod_k (k!)^{c_k})``."""
    if not isinstance(c, Composition):
        counts = tuple(c)
        m = sum(counts) if m is None else m
        n = sum(k * ck for k, ck in enumerate(counts)) if n is None else n
        c = Composition(counts, m, n)
    den = 1
    for k, ck in enumerate(c.counts):
        den *= factorial(ck) * factorial(k) ** ck
    return Fraction(factorial(c.m) * factorial(c.n), den)


def _wk_closed(m: int, n: int, k: int) -> int:
    total = sum(comb(k, s) * (-1) ** (k - s) * (m + s) ** n for s in range(k + 1))
    q, r = divmod(total, factorial(k))
    if r:
        raise ArithmeticError(f"non-integer forward difference for m={m}, n={n}, k={k}")
    return q


@lru_cache(maxsize=None)
def wk_table(m: int, n: int) -> tuple[int, ...]:
    """Row ``(w_0(m,n), ..., w_n(m,n))`` built by the recurrence in ``n``.

    Starts from ``w_1(m,1) = 1`` and uses
    ``w_k(m,n+1) = w_{k-1}(m,n) + (m+k) w_k(m,n)`` with ``w_0(m,n) = m^n``
    and the boundary value ``w_{n+1}(m,n+1) = 1``.
    """
    if m < 1 or n < 0:
        raise ValueError(f"need m >= 1 and n >= 0, got m={m}, n={n}")
    if n == 0:
        return (1,)
    row = [m, 1]  # n = 1
    for nn in range(1, n):
        new = [0] * (nn + 2)
        new[0] = m ** (nn + 1)
        new[1] = m ** nn + (m + 1) * row[1]
        for k in range(2, nn + 1):
            new[k] = row[k - 1] + (m + k) * row[k]
        new[nn + 1] = 1
        row = new
    return tuple(row)


def wk(m: int, n: int, k: int, mode: str = "closed_form") -> int:
    """Finite-difference coefficient ``w_k(m, n) = Delta^k m^n / k!``.

    ``mode`` selects the explicit alternating sum (``"closed_form"``) or the
    three-term recurrence in ``n`` (``"recurrence"``); both are exact.
    """
    if m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    if n < 0 or k < 0:
        raise ValueError(f"n and k must be nonnegative, got n={n}, k={k}")
    if k > n:
        return 0
    if mode == "closed_form":
        return _wk_closed(m, n, k)
    if mode == "recurrence":
        return wk_table(m, n)[k]
    raise ValueError(f"unknown mode {mode!r}")
