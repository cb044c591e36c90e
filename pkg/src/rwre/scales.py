"""Iterated-logarithm scale functions ``R_k(N) = floor(exp((ln ln N)^(k+1)))``."""

from __future__ import annotations

from functools import lru_cache

import mpmath

from .errors import DomainError

_PREC = 60


@lru_cache(maxsize=4096)
def log_scale_R(k: int, N: int) -> float:
    """Natural log of the unfloored scale, ``(ln ln N)^(k+1)``."""
    if k < 0:
        raise DomainError("k must be nonnegative")
    if N < 3:
        raise DomainError(f"scale_R needs N >= 3, got {N}")
    with mpmath.workprec(_PREC * 4):
        return float(mpmath.log(mpmath.log(mpmath.mpf(N))) ** (k + 1))


@lru_cache(maxsize=4096)
def scale_R(k: int, N: int) -> int:
    """``R_k(N)`` as an exact integer.

    Evaluated in extended precision so values close to an integer are
    floored correctly; huge results are returned as Python ints.

    Examples
    --------
    >>> scale_R(0, 10**6), scale_R(1, 10**6)
    (13, 987)
    """
    if k < 0:
        raise DomainError("k must be nonnegative")
    if int(N) != N or N < 3:
        raise DomainError(f"scale_R needs an integer N >= 3, got {N}")
    N = int(N)
    with mpmath.workprec(_PREC * 4):
        expo = mpmath.log(mpmath.log(mpmath.mpf(N))) ** (k + 1)
        return int(mpmath.floor(mpmath.exp(expo)))


def scale_ordering_report(N: int) -> dict:
    """Compare ``R_1(N)^2``, ``R_2(N)`` and ``N`` in log space.

    Works for astronomically large ``N`` (Python ints); the ordering
    ``R_1^2 < R_2 < N`` is asymptotic and is reported, not asserted.
    """
    with mpmath.workprec(_PREC * 4):
        lnN = mpmath.log(mpmath.mpf(N))
        lnln = mpmath.log(lnN)
        log_r1_sq = 2 * mpmath.log(mpmath.floor(mpmath.exp(lnln**2)))
        log_r2 = mpmath.log(mpmath.floor(mpmath.exp(lnln**3)))
        return {
            "log_R1_squared": float(log_r1_sq),
            "log_R2": float(log_r2),
            "log_N": float(lnN),
            "R1_squared_below_R2": bool(log_r1_sq < log_r2),
            "R2_below_N": bool(log_r2 < lnN),
        }
