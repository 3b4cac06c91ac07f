"""Normal distribution primitives used by the detector.

The error function is evaluated from its Maclaurin-type series
``erf(z) = 2z exp(-z^2)/sqrt(pi) * sum_k (2z^2)^k / (1*3*...*(2k+1))`` and the
percent-point function inverts the resulting CDF numerically: a bracket is
grown geometrically around the target, then Brent's method closes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

from .errors import BracketError, ConvergenceError, DomainError

ERF_CLAMP = 6.0
ERF_RTOL = 1e-16
# |z| = 6 needs ~95 terms before the series converges.
ERF_MAX_TERMS = 128
# Past this distance from +-1 the series result is mostly rounding noise
# (a few ulp), which would make the CDF wobble in the tails.
ERF_SATURATION = 1e-12

PPF_FTOL = 1e-9
PPF_XTOL = 1e-10
PPF_MAXITER = 200
BRACKET_FACTOR = 10.0
_MAX_EXPANSIONS = 64

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
_SQRT2 = math.sqrt(2.0)
_EPS = 2.220446049250313e-16
# 1/3, 1/5, 1/7, ...: the term ratio of the erf series is 2z^2/(2k+1)
_INV_ODD = tuple(1.0 / (2 * k + 1) for k in range(1, ERF_MAX_TERMS + 1))


class GaussianParams(NamedTuple):
    mean: float
    variance: float

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass
class Bracket:
    lo: float
    hi: float
    factor: float = BRACKET_FACTOR


def standard_score(x: float, params: GaussianParams) -> float:
    """Deviation of ``x`` from the mean in standard deviations."""
    return (x - params.mean) / math.sqrt(params.variance)


def erf_approx(z: float) -> float:
    if z != z:
        raise ValueError("erf_approx of NaN")
    az = -z if z < 0.0 else z
    if az > ERF_CLAMP:
        return -1.0 if z < 0.0 else 1.0
    if az == 0.0:
        return 0.0
    x2 = 2.0 * az * az
    term = 1.0
    total = 1.0
    for inv in _INV_ODD:
        term *= x2 * inv
        total += term
        if term < ERF_RTOL * total:
            break
    r = _TWO_OVER_SQRT_PI * az * math.exp(-az * az) * total
    if r > 1.0 - ERF_SATURATION:
        r = 1.0
    return -r if z < 0.0 else r


def std_cdf(z: float) -> float:
    """CDF of the standard normal distribution."""
    return 0.5 * (1.0 + erf_approx(z / _SQRT2))


def cdf(x: float, params: GaussianParams) -> float:
    return std_cdf(standard_score(x, params))


def expand_bracket(q: float, factor: float = BRACKET_FACTOR) -> Bracket:
    """Grow ``[-factor, factor]`` geometrically until it encloses ``q``.

    For a standard normal the initial bracket already contains every
    representable quantile, so in practice neither loop runs.
    """
    lo, hi = -factor, factor
    for _ in range(_MAX_EXPANSIONS):
        if std_cdf(lo) - q <= 0.0:
            break
        hi = lo
        lo = lo * factor
    for _ in range(_MAX_EXPANSIONS):
        if std_cdf(hi) - q >= 0.0:
            break
        lo = hi
        hi = hi * factor
    return Bracket(lo, hi, factor)


def find_root_bracketed(
    q: float,
    bracket: Bracket,
    tol: float = PPF_FTOL,
    xtol: float = PPF_XTOL,
    maxiter: int = PPF_MAXITER,
) -> float:
    """Solve ``std_cdf(z) = q`` for ``z`` inside ``bracket`` with Brent's method.

    Inverse quadratic interpolation and secant steps are accepted only while
    they shrink the bracket fast enough; otherwise the step bisects. Stops
    when the bracket is narrower than ``xtol`` or the residual
    ``|std_cdf(z) - q|`` drops below ``tol`` scaled by the tail mass
    ``2 * min(q, 1 - q)``, which keeps far-tail quantiles accurate.
    """
    tol = tol * 2.0 * min(q, 1.0 - q)
    a, b = bracket.lo, bracket.hi
    fa, fb = std_cdf(a) - q, std_cdf(b) - q
    if fa > 0.0 or fb < 0.0:
        raise BracketError(
            f"bracket [{a}, {b}] does not enclose q={q}: "
            f"F(lo)-q={fa:.3g}, F(hi)-q={fb:.3g}"
        )
    if abs(fa) <= tol and abs(fa) < abs(fb):
        return a
    if abs(fb) <= tol:
        return b

    c, fc = a, fa
    d = e = b - a
    for _ in range(maxiter):
        if (fb > 0.0) == (fc > 0.0):
            c, fc = a, fa
            d = e = b - a
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        tol1 = 2.0 * _EPS * abs(b) + 0.5 * xtol
        m = 0.5 * (c - b)
        if abs(fb) <= tol or abs(m) <= tol1 or fb == 0.0:
            return b
        if abs(e) >= tol1 and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                p = 2.0 * m * s
                qq = 1.0 - s
            else:
                qa = fa / fc
                r = fb / fc
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0))
                qq = (qa - 1.0) * (r - 1.0) * (s - 1.0)
            if p > 0.0:
                qq = -qq
            else:
                p = -p
            if 2.0 * p < min(3.0 * m * qq - abs(tol1 * qq), abs(e * qq)):
                e = d
                d = p / qq
            else:
                d = m
                e = m
        else:
            d = m
            e = m
        a, fa = b, fb
        if abs(d) > tol1:
            b += d
        else:
            b += tol1 if m > 0.0 else -tol1
        fb = std_cdf(b) - q
    raise ConvergenceError(f"root finder did not converge for q={q} in {maxiter} steps")


@lru_cache(maxsize=128)
def standard_ppf(q: float) -> float:
    """Quantile of the standard normal distribution (memoized; depends on ``q`` only)."""
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile must lie in (0, 1), got {q!r}")
    return find_root_bracketed(q, expand_bracket(q))


def ppf(q: float, params: GaussianParams) -> float:
    """Signal value below which the fitted distribution places probability ``q``."""
    return standard_ppf(q) * math.sqrt(params.variance) + params.mean
