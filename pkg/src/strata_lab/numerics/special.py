"""Standard normal special functions.

The CDF and quantile delegate to ``scipy.special.ndtr`` / ``ndtri`` (Cephes,
erf/erfc rational approximations accurate to a few ulps).  These are the
probit kernels on every hot path, so inputs are only checked for finiteness.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special as _sp

from ..errors import InvalidArgumentError

__all__ = [
    "normal_cdf",
    "normal_pdf",
    "normal_logcdf",
    "normal_quantile",
    "inverse_mills",
    "CDF_FLOOR",
    "CDF_CEIL",
]

_LOW_CLAMP = -37.0
# Phi(-37), the smallest value normal_cdf ever returns.
CDF_FLOOR = float(_sp.ndtr(_LOW_CLAMP))
# largest double below 1; Phi(x) rounds to exactly 1 from x ~ 8.3 upward
CDF_CEIL = float(np.nextafter(1.0, 0.0))
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _as_finite(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must be finite")
    return arr


def _out(arr):
    return float(arr) if arr.ndim == 0 else arr


def normal_cdf(x):
    """Phi(x) kept strictly inside (0, 1): floored at Phi(-37), capped below 1."""
    arr = _as_finite(x)
    return _out(np.clip(_sp.ndtr(arr), CDF_FLOOR, CDF_CEIL))


def normal_logcdf(x):
    return _out(_sp.log_ndtr(_as_finite(x)))


def normal_pdf(x):
    arr = _as_finite(x)
    return _out(_INV_SQRT_2PI * np.exp(-0.5 * arr * arr))


def normal_quantile(p):
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise InvalidArgumentError("p must lie strictly inside (0, 1)")
    return _out(_sp.ndtri(arr))


def inverse_mills(x):
    """phi(x) / Phi(x), evaluated in log space so it stays finite for x << 0."""
    arr = _as_finite(x)
    return _out(np.exp(-0.5 * arr * arr - 0.5 * math.log(2.0 * math.pi) - _sp.log_ndtr(arr)))
