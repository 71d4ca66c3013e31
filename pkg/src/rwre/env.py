"""Environment laws for the 1D random walk in random environment.

An environment is an i.i.d. family (omega_i) of transition probabilities in
(0,1); the walk at site i steps right with probability omega_i.  The
quantity that controls everything downstream is rho = (1-omega)/omega and
its log-moment function Lambda(t) = log E[rho^t].  The transient zero-speed
regime is characterized by E[log rho] < 0 together with a root kappa in
(0,1) of E[rho^kappa] = 1.

Two law families are supported, matching the text grammar used by the CLI:

* ``beta:A,B``      omega ~ Beta(A, B).  Then E[rho^t] = B(A-t, B+t)/B(A, B)
                    for t < A, and kappa = A - B in closed form when
                    0 < A - B < 1.
* ``discrete:w1@p1;w2@p2;...``  finite support {w_k} with probabilities
                    {p_k}; all moments are exact finite sums.

Environment sampling is counter-based: site i of law+seed always receives
the same omega regardless of which window is materialized (see rng).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaincinv

from . import rng
from .special import digamma, log_beta

__all__ = [
    "EnvironmentLaw",
    "EnvironmentSlice",
    "KappaResult",
    "RegimeError",
    "NoRootError",
    "sample_environment",
    "rho",
    "lambda_fn",
    "kappa_solve",
    "moment_rho_log",
    "rate_function",
    "RATE_SENTINEL",
]

RATE_SENTINEL = 1e308
_EDGE = 1e-6
_BISECT_ITERS = 200
_SITE_BLOCK = 4096  # sites per stream block when sampling environments


class RegimeError(ValueError):
    """The law is outside the transient zero-speed regime."""


class NoRootError(RegimeError):
    """E[rho^t] = 1 has no root in (0,1): ballistic or recurrent regime."""


@dataclass(frozen=True)
class EnvironmentLaw:
    kind: str                      # "beta" | "discrete"
    alpha: float = 0.0
    beta: float = 0.0
    values: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()

    @staticmethod
    def beta_law(alpha: float, beta: float) -> "EnvironmentLaw":
        if alpha <= 0 or beta <= 0:
            raise ValueError(f"beta law needs positive parameters, got {alpha}, {beta}")
        return EnvironmentLaw(kind="beta", alpha=float(alpha), beta=float(beta))

    @staticmethod
    def discrete(values, probs) -> "EnvironmentLaw":
        values = tuple(float(v) for v in values)
        probs = tuple(float(p) for p in probs)
        if len(values) != len(probs) or not values:
            raise ValueError("discrete law needs matching nonempty values/probs")
        if any(not (0.0 < v < 1.0) for v in values):
            raise ValueError("discrete omega values must lie strictly in (0,1)")
        if any(p <= 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError("discrete probabilities must be positive and sum to 1")
        return EnvironmentLaw(kind="discrete", values=values, probs=probs)

    @staticmethod
    def parse(text: str) -> "EnvironmentLaw":
        """Parse ``beta:A,B`` or ``discrete:w1@p1;w2@p2;...``."""
        text = text.strip()
        if ":" not in text:
            raise ValueError(f"law spec needs kind:params, got {text!r}")
        kind, _, body = text.partition(":")
        kind = kind.strip().lower()
        if kind == "beta":
            parts = body.split(",")
            if len(parts) != 2:
                raise ValueError(f"beta law needs two parameters, got {body!r}")
            return EnvironmentLaw.beta_law(float(parts[0]), float(parts[1]))
        if kind == "discrete":
            values, probs = [], []
            for atom in body.split(";"):
                atom = atom.strip()
                if not atom:
                    continue
                w, _, p = atom.partition("@")
                values.append(float(w))
                probs.append(float(p))
            return EnvironmentLaw.discrete(values, probs)
        raise ValueError(f"unknown law kind {kind!r}")

    def spec_text(self) -> str:
        if self.kind == "beta":
            return f"beta:{self.alpha:g},{self.beta:g}"
        atoms = ";".join(f"{v:g}@{p:g}" for v, p in zip(self.values, self.probs))
        return f"discrete:{atoms}"


@dataclass(frozen=True)
class EnvironmentSlice:
    offset: int                    # site index of omegas[0]
    omegas: np.ndarray             # strictly inside (0,1)
    seed_info: dict = field(default_factory=dict)

    def site(self, i: int) -> float:
        return float(self.omegas[i - self.offset])


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    residual: float
    method: str                    # closed_form | bisection_mc | bisection_quadrature


def rho(omega: float) -> float:
    """rho = (1-omega)/omega for omega strictly inside (0,1)."""
    if not 0.0 < omega < 1.0:
        raise ValueError(f"omega must lie strictly in (0,1), got {omega}")
    return (1.0 - omega) / omega


def _law_uniform_to_omega(law: EnvironmentLaw, u: np.ndarray) -> np.ndarray:
    if law.kind == "beta":
        if law.beta == 1.0:
            # CDF of Beta(a,1) is x^a, inverted in closed form
            return u ** (1.0 / law.alpha)
        return betaincinv(law.alpha, law.beta, u)
    edges = np.cumsum(np.asarray(law.probs))
    idx = np.searchsorted(edges, u, side="left")
    idx = np.minimum(idx, len(law.values) - 1)
    return np.asarray(law.values)[idx]


def sample_environment(law: EnvironmentLaw, site_range: tuple[int, int], seed: int) -> EnvironmentSlice:
    """i.i.d. omegas on the inclusive site range [lo, hi].

    Site i is drawn from stream (seed, "env", block(i)) at counter i mod
    block, so identical (law, range, seed) gives bit-identical output and
    overlapping ranges agree site by site.
    """
    lo, hi = int(site_range[0]), int(site_range[1])
    if lo > hi:
        raise ValueError(f"empty site range [{lo}, {hi}]")
    u = np.empty(hi - lo + 1, dtype=np.float64)
    # the range is contiguous, so each block contributes one slice;
    # floor division keeps the block map right for negative sites
    pos = 0
    for blk in range(lo // _SITE_BLOCK, hi // _SITE_BLOCK + 1):
        blk_lo = max(lo, blk * _SITE_BLOCK)
        blk_hi = min(hi, blk * _SITE_BLOCK + _SITE_BLOCK - 1)
        count = blk_hi - blk_lo + 1
        key = rng.stream_key(seed, "env", blk)
        u[pos : pos + count] = rng.counter_uniforms(
            key, blk_lo - blk * _SITE_BLOCK, count)
        pos += count
    omegas = _law_uniform_to_omega(law, u)
    info = {"law": law.spec_text(), "seed": int(seed), "range": (lo, hi)}
    return EnvironmentSlice(offset=lo, omegas=omegas, seed_info=info)


def _lambda_discrete(law: EnvironmentLaw, t: float) -> float:
    log_rhos = np.log([rho(v) for v in law.values])
    return float(_logsumexp(np.log(law.probs) + t * log_rhos))


def _logsumexp(a: np.ndarray) -> float:
    m = np.max(a)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(a - m))))


def lambda_fn(law: EnvironmentLaw, t: float) -> float:
    """Lambda(t) = log E[rho^t]; finite for t < alpha on Beta laws."""
    if t < 0:
        raise ValueError(f"lambda_fn needs t >= 0, got {t}")
    if law.kind == "beta":
        if t >= law.alpha:
            raise ValueError(
                f"E[rho^t] diverges for t >= alpha ({t} >= {law.alpha})"
            )
        return log_beta(law.alpha - t, law.beta + t) - log_beta(law.alpha, law.beta)
    return _lambda_discrete(law, t)


def _lambda_sup(law: EnvironmentLaw) -> float:
    """Supremum of t with Lambda(t) finite (inf for discrete laws)."""
    return law.alpha if law.kind == "beta" else math.inf


def mean_log_rho(law: EnvironmentLaw) -> float:
    """E[log rho]; the walk is transient to +inf iff this is negative."""
    if law.kind == "beta":
        return digamma(law.beta) - digamma(law.alpha)
    lr = [math.log(rho(v)) for v in law.values]
    return float(sum(p * x for p, x in zip(law.probs, lr)))


def _lambda_mc(law: EnvironmentLaw, t: float, seed: int, n: int = 10**6) -> float:
    u = rng.counter_uniforms(rng.stream_key(seed, "lambda-mc"), 0, n)
    omegas = _law_uniform_to_omega(law, u)
    log_rhos = np.log1p(-omegas) - np.log(omegas)
    return _logsumexp(t * log_rhos) - math.log(n)


def kappa_solve(law: EnvironmentLaw, tol: float = 1e-12, method: str | None = None,
                seed: int = 0) -> KappaResult:
    """Root of E[rho^kappa] = 1 in (0,1).

    Beta laws with 0 < alpha-beta < 1 use the closed form kappa =
    alpha-beta; otherwise convex bisection on lambda_fn (method
    "bisection_quadrature", since Lambda is evaluated by exact
    quadrature/sums), or on a Monte Carlo estimate of Lambda when method
    "bisection_mc" is forced.  Raises NoRootError outside the transient
    zero-speed regime.
    """
    if mean_log_rho(law) >= 0:
        raise NoRootError(
            f"E[log rho] = {mean_log_rho(law):.6g} >= 0: not transient to +inf"
        )
    if method is None:
        method = "closed_form" if law.kind == "beta" else "bisection_quadrature"
    if method == "closed_form":
        if law.kind != "beta":
            raise ValueError("closed_form kappa is only available for beta laws")
        kappa = law.alpha - law.beta
        if not 0.0 < kappa < 1.0:
            raise NoRootError(
                f"alpha-beta = {kappa:.6g} outside (0,1): no zero-speed root"
            )
        return KappaResult(kappa=kappa, residual=abs(lambda_fn(law, kappa)), method=method)

    if method == "bisection_mc":
        fn = lambda t: _lambda_mc(law, t, seed)
    elif method == "bisection_quadrature":
        fn = lambda t: lambda_fn(law, t)
    else:
        raise ValueError(f"unknown kappa method {method!r}")

    lo = _EDGE
    hi = min(1.0 - _EDGE, _lambda_sup(law) - _EDGE)
    if hi <= lo:
        raise NoRootError("no admissible bracket below min(1, sup finite t)")
    f_lo, f_hi = fn(lo), fn(hi)
    if f_lo >= 0 or f_hi <= 0:
        # Lambda starts negative (Lambda'(0) = E[log rho] < 0); if it never
        # comes back up before the bracket end there is no root in (0,1).
        raise NoRootError(
            f"Lambda has no sign change on [{lo:.2g}, {hi:.4g}]: "
            f"Lambda({lo:.2g})={f_lo:.3g}, Lambda({hi:.4g})={f_hi:.3g}"
        )
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        if abs(f_mid) <= tol or (hi - lo) < 1e-15:
            return KappaResult(kappa=mid, residual=abs(f_mid), method=method)
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    return KappaResult(kappa=mid, residual=abs(fn(mid)), method=method)


def moment_rho_log(law: EnvironmentLaw, kappa: float) -> float:
    """E[rho^kappa log rho] (= Lambda'(kappa), positive at the root)."""
    if law.kind == "beta":
        value = digamma(law.alpha) - digamma(law.beta)
    else:
        value = 0.0
        for v, p in zip(law.values, law.probs):
            r = rho(v)
            value += p * r**kappa * math.log(r)
    tiny = all(abs(math.log(rho(v))) < 1e-15 for v in law.values) if law.kind == "discrete" else False
    if value <= 0 and not tiny:
        raise RegimeError(f"E[rho^kappa log rho] = {value:.6g} <= 0: kappa is not the root")
    return value


def rate_function(law: EnvironmentLaw, x: float) -> tuple[float, bool]:
    """Large-deviation rate I(x) = sup_t>=0 (t x - Lambda(t)).

    Returns (value, flagged).  flagged=True marks the two conventional
    cases: x below the mean E[log rho] (I set to 0 by convention) and a
    degenerate law whose potential can never reach slope x (sentinel
    RATE_SENTINEL stands in for +inf).
    """
    m = mean_log_rho(law)
    if x < m:
        return 0.0, True
    t_max = _lambda_sup(law)
    if law.kind == "discrete":
        # slopes beyond the largest atom of log rho are unreachable: I = +inf
        top = max(math.log(rho(v)) for v in law.values)
        if x > top:
            return RATE_SENTINEL, True

    def neg_objective(t: float) -> float:
        return lambda_fn(law, t) - t * x

    # golden-section minimization of Lambda(t) - t x over [0, t_hi]
    t_hi = min(t_max - _EDGE, 64.0) if math.isfinite(t_max) else 64.0
    gr = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = 0.0, t_hi
    c1 = b - gr * (b - a)
    c2 = a + gr * (b - a)
    f1, f2 = neg_objective(c1), neg_objective(c2)
    for _ in range(200):
        if f1 <= f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - gr * (b - a)
            f1 = neg_objective(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + gr * (b - a)
            f2 = neg_objective(c2)
        if b - a < 1e-13 * max(1.0, abs(b)):
            break
    t_star = 0.5 * (a + b)
    value = -(neg_objective(t_star))
    if value > 1e307:
        return RATE_SENTINEL, True
    return max(value, 0.0), False
