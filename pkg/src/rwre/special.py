"""Log-gamma, digamma and log-beta, implemented in-package.

The limit constants depend on digamma differences and log-Beta ratios, and
these must agree to high accuracy with the closed forms they feed (the
stable-scale identities are asserted at 1e-12).  To keep that chain fully
under our control the three functions are implemented here rather than
imported: log_gamma via the Lanczos approximation (g=7, 9 terms, the
classic coefficient set), digamma via upward recurrence into the
asymptotic Bernoulli series, log_beta on top of log_gamma.  Accuracy is
within 1e-12 relative over [0.1, 100], verified in tests against a frozen
high-precision grid.
"""

from __future__ import annotations

import math

__all__ = ["log_gamma", "digamma", "log_beta"]

_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_TWO_PI = 0.5 * math.log(2.0 * math.pi)

# Bernoulli-number coefficients B_2n/(2n) of the digamma asymptotic series
_DIGAMMA_TAIL = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)


def log_gamma(x: float) -> float:
    """log Gamma(x) for x > 0."""
    if not x > 0:
        raise ValueError(f"log_gamma needs a positive argument, got {x}")
    if x < 0.5:
        # push into the Lanczos sweet spot: Gamma(x) = Gamma(x+1)/x
        return log_gamma(x + 1.0) - math.log(x)
    z = x - 1.0
    acc = _LANCZOS[0]
    for i, c in enumerate(_LANCZOS[1:], start=1):
        acc += c / (z + i)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_TWO_PI + (z + 0.5) * math.log(t) - t + math.log(acc)


def digamma(x: float) -> float:
    """psi(x) = d/dx log Gamma(x) for x > 0."""
    if not x > 0:
        raise ValueError(f"digamma needs a positive argument, got {x}")
    value = 0.0
    while x < 10.0:
        value -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    tail = 0.0
    power = inv2
    for coeff in _DIGAMMA_TAIL:
        tail += coeff * power
        power *= inv2
    return value + math.log(x) - 0.5 / x - tail


def log_beta(a: float, b: float) -> float:
    """log B(a,b) = log Gamma(a) + log Gamma(b) - log Gamma(a+b)."""
    return log_gamma(a) + log_gamma(b) - log_gamma(a + b)
