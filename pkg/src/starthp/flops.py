"""Closed-form CU cost model (FLOPS) of the compared precoders.

``n`` is the number of streams (rows of ``H``) and ``m`` the number of
transmit antennas. Only the CU's share is counted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction


class Algorithm(str, enum.Enum):
    CZF = "CZF"
    CHZF_THP = "CHZF_THP"
    SDHZF_THP = "SDHZF_THP"
    SDHMMSE_THP = "SDHMMSE_THP"


@dataclass(frozen=True)
class FlopsReport:
    algorithm: Algorithm
    n: int
    m: int
    cu_flops: float


def gram_flops(n, m):
    """``H H^H`` for ``H`` of shape ``n x m``."""
    return n * m * m


def qr_flops(n, m):
    return Fraction(2, 3) * n ** 3 + m * n * n


def flops_exact(algorithm, n, m) -> Fraction:
    """Exact rational FLOPS count."""
    algorithm = Algorithm(algorithm)
    if n < 1 or m < 1:
        raise ValueError(f"n and m must be >= 1, got n={n}, m={m}")
    cube = Fraction(2, 3) * n ** 3
    if algorithm is Algorithm.CZF:
        return Fraction(2 * n * m * m)
    if algorithm is Algorithm.CHZF_THP:
        return cube + m * m + 2 * m * n * n + m * n + m
    if algorithm is Algorithm.SDHZF_THP:
        return cube + m * n * n + m * n
    return cube + m * n * n + m * n + m


def flops(algorithm, n, m) -> FlopsReport:
    value = flops_exact(algorithm, n, m)
    return FlopsReport(algorithm=Algorithm(algorithm), n=int(n), m=int(m), cu_flops=float(value))


def reduction_percentages(n, m) -> dict:
    """Percent CU cost saved by sDHZF-THP relative to CZF and CHZF-THP."""
    ours = flops_exact(Algorithm.SDHZF_THP, n, m)
    return {
        "vs_czf": float(100 * (1 - ours / flops_exact(Algorithm.CZF, n, m))),
        "vs_chzf": float(100 * (1 - ours / flops_exact(Algorithm.CHZF_THP, n, m))),
    }
