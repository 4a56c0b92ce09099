"""Paired-comparison statistics: McNemar (exact and chi-square) and Holm-Bonferroni."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

from .errors import InvalidInputError


def _check_counts(b: int, c: int) -> None:
    if b < 0 or c < 0 or int(b) != b or int(c) != c:
        raise InvalidInputError(f"discordant counts must be non-negative integers, got {b}, {c}")


def mcnemar_exact(b: int, c: int) -> float:
    """Two-sided exact McNemar p-value.

    p = min(1, 2 * P(X <= min(b, c))) with X ~ Binomial(b + c, 1/2).

    >>> mcnemar_exact(5, 5)
    1.0
    """
    _check_counts(b, c)
    n = b + c
    if n == 0:
        return 1.0
    k = min(b, c)
    # Exact integer tail, then one division; no float underflow for large n.
    term = tail = 1
    for i in range(k):
        term = term * (n - i) // (i + 1)
        tail += term
    return min(1.0, 2 * tail / 2**n)


def mcnemar_chi2(b: int, c: int, continuity: bool = True) -> float:
    """Asymptotic McNemar p-value from the chi-square statistic with one degree of freedom."""
    _check_counts(b, c)
    n = b + c
    if n == 0:
        return 1.0
    diff = abs(b - c)
    if continuity:
        diff = max(0.0, diff - 1.0)
    stat = diff * diff / n
    return math.erfc(math.sqrt(stat / 2))


@dataclass(frozen=True, slots=True)
class HolmStep:
    index: int
    p: float
    threshold: float
    rejected: bool


def holm_bonferroni(p_values: Sequence[float], alpha: float = 0.05) -> list[HolmStep]:
    """Step-down Holm procedure; rows come back in ascending p order.

    ``index`` points at the position in the input.  Rejection stops at the
    first comparison that fails.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    m = len(p_values)
    order = sorted(range(m), key=lambda i: (p_values[i], i))
    out = []
    still = True
    for rank, idx in enumerate(order, start=1):
        threshold = alpha / (m - rank + 1)
        still = still and p_values[idx] <= threshold
        out.append(HolmStep(idx, p_values[idx], threshold, still))
    return out
