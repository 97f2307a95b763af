"""Scalar special functions for the gamma calibration.

digamma/trigamma use upward recurrence into the asymptotic regime; the
regularized lower incomplete gamma switches between the power series and
a Lentz continued fraction at x = a + 1.  All three are accurate to well
below 1e-12 absolute over the parameter ranges that uncertainty traces
produce.
"""

from __future__ import annotations

import math

from .errors import NoConvergence

# Recurrence shift target: the asymptotic tails below are only applied at
# or above this argument.
_ASYMPTOTIC_MIN = 6.0

# B_{2n} / (2n) for n = 1..7: coefficients of x^{-2n} in the digamma tail.
_DIGAMMA_TAIL = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)

# B_{2n} for n = 1..7: coefficients of x^{-(2n+1)} in the trigamma tail.
_TRIGAMMA_TAIL = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)

_MAX_ITER = 500
_REL_EPS = 1e-16
_TINY = 1e-300


def digamma(x: float) -> float:
    """Logarithmic derivative of the gamma function, for x > 0."""
    if not x > 0.0:
        raise ValueError(f"digamma requires x > 0, got {x!r}")
    acc = 0.0
    while x < _ASYMPTOTIC_MIN:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    tail = 0.0
    power = inv2
    for c in _DIGAMMA_TAIL:
        tail += c * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - tail


def trigamma(x: float) -> float:
    """Derivative of digamma, for x > 0."""
    if not x > 0.0:
        raise ValueError(f"trigamma requires x > 0, got {x!r}")
    acc = 0.0
    while x < _ASYMPTOTIC_MIN:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    tail = 0.0
    power = inv2 * inv
    for c in _TRIGAMMA_TAIL:
        tail += c * power
        power *= inv2
    return acc + inv + 0.5 * inv2 + tail


def reg_lower_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x), for a > 0 and x >= 0."""
    if not a > 0.0:
        raise ValueError(f"shape must be positive, got {a!r}")
    if x < 0.0:
        raise ValueError(f"argument must be non-negative, got {x!r}")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _lower_series(a, x)
    return 1.0 - _upper_continued_fraction(a, x)


def _lower_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    n = a
    for _ in range(_MAX_ITER):
        n += 1.0
        term *= x / n
        total += term
        if abs(term) < abs(total) * _REL_EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise NoConvergence(f"lower gamma series stalled at a={a!r}, x={x!r}")


def _upper_continued_fraction(a: float, x: float) -> float:
    # Modified Lentz evaluation of the standard continued fraction for
    # Q(a, x); convergence is fast for x >= a + 1.
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b if b != 0.0 else 1.0 / _TINY
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _REL_EPS:
            return h * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise NoConvergence(f"upper gamma continued fraction stalled at a={a!r}, x={x!r}")
