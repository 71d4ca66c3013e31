"""Quenched hitting-time analysis on a finite stretch of environment.

Everything here conditions on one realized environment.  The central
object is a QuenchedChain: omegas on a site interval [left, right], an
optional reflecting site, and the restriction of the potential.  On top
of it:

* exit and failure probabilities through the classical e^V sums;
* the two Doob transforms of an excursion attempt from b (conditioned to
  fail back to b before reaching d, or to succeed), with the transformed
  potentials and their gap arrays;
* closed-form conditional moments of the failure time F and a computable
  upper bound for the success time G;
* a dense linear-solve oracle (absorption probabilities, expected times,
  second moments, Laplace transforms) used to cross-check every formula;
* direct simulation, step by step or through the branching representation
  of tau(n), which is exact in distribution and turns one hitting time
  into O(n) negative binomial draws instead of O(tau) coin flips.

All probability-weighted sums run in the log domain via logaddexp, so a
valley of depth 700 is as safe as one of depth 7.  The transformed
potentials are represented through their gap to the base potential;
the gaps are monotone by construction (accumulated logaddexp cannot
decrease, and IEEE rounding preserves order under a constant shift), so
the comparison inequalities between transformed and base increments hold
exactly in floating point, not just up to a tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .env import EnvironmentSlice
from .potential import WindowExhausted
from .rng import generator, stream_key

__all__ = [
    "QuenchedChain",
    "HTransform",
    "AttemptMoments",
    "WalkResult",
    "exit_prob",
    "failure_prob",
    "h_transform",
    "attempt_moments",
    "mean_G_exact",
    "linear_solve_oracle",
    "simulate_walk",
    "sample_hitting_times",
    "save_chain_text",
    "load_chain_text",
]

_HARMONIC_TOL = 1e-12
_LAM_CAP = 5e18       # poisson mixing saturates here; far beyond any test scale


@dataclass(frozen=True)
class QuenchedChain:
    """Omegas on the interior (left, right), potential on [left, right].

    The value V(right) needs omega at the right edge, which is why
    from_omegas takes omegas up to and including the right endpoint; the
    edge omega enters nothing but that last potential increment.  A
    reflecting site (omega forced to 1) is stored as a field and applied
    inside computations; the stored interior omegas stay in (0, 1).
    """

    left: int
    right: int
    omegas: np.ndarray            # sites left+1 .. right-1
    base_potential: np.ndarray    # V on sites left .. right
    reflect_at: int | None = None

    def __post_init__(self):
        width = self.right - self.left
        if width < 1:
            raise ValueError("chain needs right > left")
        if len(self.omegas) != width - 1:
            raise ValueError(f"expected {width - 1} interior omegas, got {len(self.omegas)}")
        if len(self.base_potential) != width + 1:
            raise ValueError(f"expected {width + 1} potential values, got {len(self.base_potential)}")
        if np.any(self.omegas <= 0.0) or np.any(self.omegas >= 1.0):
            raise ValueError("interior omegas must lie strictly in (0, 1)")
        if self.reflect_at is not None and not self.left <= self.reflect_at < self.right:
            raise ValueError("reflect_at must lie in [left, right)")

    @classmethod
    def from_omegas(cls, omegas, left: int = 0, reflect_at: int | None = None,
                    v_left: float = 0.0) -> "QuenchedChain":
        """Build from omegas on sites left+1 .. left+len(omegas); the last
        one is the right edge and only feeds V(right)."""
        om = np.asarray(omegas, dtype=np.float64)
        if om.size < 1:
            raise ValueError("need at least one omega")
        right = left + om.size
        log_rho = np.log1p(-om) - np.log(om)
        v = v_left + np.concatenate([[0.0], np.cumsum(log_rho)])
        return cls(left=left, right=right, omegas=om[:-1], base_potential=v,
                   reflect_at=reflect_at)

    @classmethod
    def from_environment(cls, env: EnvironmentSlice, left: int, right: int,
                         reflect_at: int | None = None) -> "QuenchedChain":
        om = np.array([env.site(x) for x in range(left + 1, right + 1)])
        return cls.from_omegas(om, left=left, reflect_at=reflect_at)

    def omega(self, x: int) -> float:
        if self.reflect_at is not None and x == self.reflect_at:
            return 1.0
        if not self.left < x < self.right:
            raise IndexError(f"site {x} not interior to [{self.left}, {self.right}]")
        return float(self.omegas[x - self.left - 1])

    def v(self, x: int) -> float:
        if not self.left <= x <= self.right:
            raise IndexError(f"site {x} outside [{self.left}, {self.right}]")
        return float(self.base_potential[x - self.left])

    def _vslice(self, lo: int, hi: int) -> np.ndarray:
        """Potential over the inclusive site range [lo, hi]."""
        return self.base_potential[lo - self.left : hi - self.left + 1]


@dataclass(frozen=True)
class HTransform:
    """A conditioned chain on [b, d].

    kind "failure": conditioned to return to b before reaching d; the
    scale function is h(x) = P^x{hit b before d} with h(b) = 1, h(d) = 0,
    log_scale holds log h on [b, d].

    kind "success": conditioned to reach d before returning to b; the
    scale function is g = 1 - h with g(b) = 0, g(d) = 1, and log_scale
    holds log g on [b, d+1] with the harmless extension g(d+1) := 1 that
    makes the transformed potential well defined up to site d.

    v_hat is the transformed potential on [b, d] and gap = v_hat minus the
    base potential.  The failure gap is nondecreasing and the success gap
    is nonincreasing, exactly, by construction; v_hat[b] is +inf for the
    success kind (the conditioned walk never revisits b) and v_hat at
    d-1 and d is +inf for the failure kind (it never reaches d).
    """

    kind: str
    b: int
    d: int
    omegas_hat: np.ndarray        # sites b+1 .. d-1
    v_hat: np.ndarray             # sites b .. d
    gap: np.ndarray               # v_hat - base potential, sites b .. d
    log_scale: np.ndarray         # log h on [b, d], or log g on [b, d+1]

    def omega(self, x: int) -> float:
        if not self.b < x < self.d:
            raise IndexError(f"site {x} not interior to [{self.b}, {self.d}]")
        return float(self.omegas_hat[x - self.b - 1])

    def potential(self, x: int) -> float:
        if not self.b <= x <= self.d:
            raise IndexError(f"site {x} outside [{self.b}, {self.d}]")
        return float(self.v_hat[x - self.b])


@dataclass(frozen=True)
class AttemptMoments:
    """Moments of one excursion attempt from b, reflected at a, walled at d.

    p_fail is the chance the attempt returns to b before reaching d;
    mean_F and second_F are E[F] and E[F^2] for the failure time F
    (conditioned on failing); mean_G_bound upper-bounds the conditional
    mean of the success time.  m1_hat and m2 are the two potential sums
    that control the attempt count and the depth factor.
    """

    p_fail: float
    mean_F: float
    second_F: float
    mean_G_bound: float
    m1_hat: float
    m2: float


@dataclass(frozen=True)
class WalkResult:
    final_site: int
    steps: int
    stopped_on: str               # "hit" | "steps" | "cap"
    truncated: bool
    trace: np.ndarray | None = None


def _log_prefix_sumexp(a: np.ndarray) -> np.ndarray:
    """out[k] = log sum_{j<=k} e^{a[j]}, computed stably in one pass."""
    return np.logaddexp.accumulate(a)


def _log_suffix_sumexp(a: np.ndarray) -> np.ndarray:
    """out[k] = log sum_{j>=k} e^{a[j]}."""
    return np.logaddexp.accumulate(a[::-1])[::-1]


def _logsumexp(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return -math.inf
    m = np.max(a)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(a - m))))


def exit_prob(chain: QuenchedChain, x: int, l: int, r: int) -> float:
    """P^x{hit r before l} = sum_{k=l}^{x-1} e^{V(k)} / sum_{k=l}^{r-1} e^{V(k)}."""
    if not (chain.left <= l <= x <= r <= chain.right):
        raise ValueError(f"need left <= l <= x <= r <= right, got l={l}, x={x}, r={r}")
    if l == r:
        raise ValueError("degenerate interval")
    if x == l:
        return 0.0
    num = _logsumexp(chain._vslice(l, x - 1))
    den = _logsumexp(chain._vslice(l, r - 1))
    return float(math.exp(num - den))


def failure_prob(chain: QuenchedChain, b: int, d: int) -> tuple[float, float]:
    """(p, 1-p) for one attempt from b against the wall at d:
    1 - p = omega_b e^{V(b)} / sum_{x=b}^{d-1} e^{V(x)}."""
    if not (chain.left < b < d <= chain.right):
        raise ValueError(f"need left < b < d <= right, got b={b}, d={d}")
    log_success = (math.log(chain.omega(b)) + chain.v(b)
                   - _logsumexp(chain._vslice(b, d - 1)))
    one_minus_p = math.exp(log_success)
    p = -math.expm1(log_success)
    return p, one_minus_p


def _check_harmonic(omegas: np.ndarray, log_scale: np.ndarray, what: str) -> None:
    """Relative residual of scale(x) = w scale(x+1) + (1-w) scale(x-1)."""
    if omegas.size == 0:
        return
    d_up = log_scale[2:] - log_scale[1:-1]
    d_dn = log_scale[:-2] - log_scale[1:-1]
    resid = np.abs(1.0 - omegas * np.exp(d_up) - (1.0 - omegas) * np.exp(d_dn))
    worst = float(np.max(resid))
    if not worst <= _HARMONIC_TOL:
        raise FloatingPointError(
            f"{what} scale function fails harmonicity: residual {worst:.3e}")


def h_transform(chain: QuenchedChain, b: int, d: int, kind: str) -> HTransform:
    """Doob transform of the attempt from b on [b, d]; see HTransform."""
    if not (chain.left <= b < d <= chain.right):
        raise ValueError(f"need left <= b < d <= right, got b={b}, d={d}")
    if kind not in ("failure", "success"):
        raise ValueError(f"kind must be 'failure' or 'success', got {kind!r}")
    v = chain._vslice(b, d)                     # V(b) .. V(d)
    interior = np.array([chain.omega(x) for x in range(b + 1, d)])
    width = d - b

    if kind == "failure":
        # h(x) = suffix / total of e^{V(k)}, k in [b, d-1]
        log_suffix = _log_suffix_sumexp(v[:-1])  # over x = b .. d-1
        log_h = np.empty(width + 1)
        log_h[:-1] = log_suffix - log_suffix[0]
        log_h[-1] = -math.inf
        with np.errstate(divide="ignore"):
            log_w = np.log(interior) + log_h[2:] - log_h[1:-1]
        omegas_hat = np.exp(log_w)
        _check_harmonic(interior, log_h, "failure")
        # gap(x) = log h(b+1) - log h(x) - log h(x+1); nondecreasing
        gap = np.empty(width + 1)
        with np.errstate(invalid="ignore"):
            gap[:-1] = log_h[1] - log_h[:-1] - log_h[1:]
        gap[0] = 0.0                             # exact anchor, V-hat(b) = V(b)
        gap[-1] = math.inf
        v_hat = v + gap
        return HTransform(kind=kind, b=b, d=d, omegas_hat=omegas_hat,
                          v_hat=v_hat, gap=gap, log_scale=log_h)

    # success: g(x) = prefix / total of e^{V(k)}, k in [b, d-1]
    log_prefix = _log_prefix_sumexp(v[:-1])      # position j holds x = b+1+j
    log_g = np.empty(width + 2)                  # sites b .. d+1
    log_g[0] = -math.inf
    log_g[1:-1] = log_prefix - log_prefix[-1]    # log g(d) = 0 exactly
    log_g[-1] = 0.0                              # extension g(d+1) := 1
    with np.errstate(divide="ignore"):
        log_w = np.log(interior) + log_g[2:-1] - log_g[1:-2]
    omegas_bar = np.exp(log_w)
    if omegas_bar.size:
        omegas_bar[0] = 1.0                      # exact: omega (1 + rho) = 1
    _check_harmonic(interior, log_g[:-1], "success")
    # gap(x) = log g(b+1) + log g(b+2) - log g(x) - log g(x+1); nonincreasing
    gap = np.empty(width + 1)
    gap[0] = math.inf                            # conditioned walk never at b
    anchor = log_g[1] + log_g[2] if width >= 2 else log_g[1] + log_g[1]
    gap[1:] = anchor - log_g[1:-1] - log_g[2:]
    v_hat = v + gap
    return HTransform(kind=kind, b=b, d=d, omegas_hat=omegas_bar,
                      v_hat=v_hat, gap=gap, log_scale=log_g)


def attempt_moments(chain: QuenchedChain, a: int, b: int, d: int) -> AttemptMoments:
    """Exact conditional attempt moments; needs reflection at a."""
    if not (chain.left <= a < b < d <= chain.right):
        raise ValueError(f"need left <= a < b < d <= right, got a={a}, b={b}, d={d}")
    if chain.reflect_at != a:
        raise ValueError(f"attempt decomposition needs reflect_at == a == {a}, "
                         f"chain has {chain.reflect_at}")
    omega_b = chain.omega(b)
    log_wb = math.log(omega_b)
    log_1mwb = math.log1p(-omega_b)

    ht = h_transform(chain, b, d, "failure")
    log_h = ht.log_scale
    v_hat = ht.v_hat                            # V-hat on [b, d]
    log_u = float(log_h[1])                     # log h(b+1); -inf when d = b+1
    u = math.exp(log_u)
    p_fail = (1.0 - omega_b) + omega_b * u
    log_p_fail = math.log(p_fail)

    # left of b, reflected at a: first and second moment sums
    lm1L = chain.v(b - 1) - chain._vslice(a, b - 1)       # i = a .. b-1
    log_S1L = _logsumexp(lm1L)
    log_rho_left = np.array(
        [math.log1p(-chain.omega(i)) - math.log(chain.omega(i)) for i in range(a + 1, b)])
    m = b - a                                   # sites a .. b-1
    lm2L = np.empty(m)
    lm2L[-1] = 0.0                              # i = b-1
    for k in range(m - 2, -1, -1):              # i = a + k, uses rho_{i+1}
        lr = log_rho_left[k]
        lm2L[k] = np.logaddexp(lr + np.logaddexp(0.0, lr) + lm1L[k + 1],
                               2.0 * lr + lm2L[k + 1])
    # C_j = sum_{i=a}^{j-1} e^{V(j) - V(i)}
    neg_v = -chain._vslice(a, b - 1)
    log_C = np.full(m, -math.inf)
    if m > 1:
        log_C[1:] = chain._vslice(a + 1, b - 1) + _log_prefix_sumexp(neg_v[:-1])
    log_S2L = _logsumexp(lm2L + np.logaddexp(0.0, math.log(2.0) + log_C))

    # right of b, under the failure transform
    if d > b + 1:
        # m1R_i = e^{-(V-hat(i-1) - V(b))} for i = b+1 .. d-1
        w = v_hat[: d - 1 - b]                  # V-hat on [b, d-2]
        lm1R = -(w - chain.v(b))
        log_S1R = _logsumexp(lm1R)
        with np.errstate(divide="ignore"):
            log_omega_hat = np.log(ht.omegas_hat)           # sites b+1 .. d-1
        log_rho_hat = np.array(
            [(math.log1p(-chain.omega(i)) - math.log(chain.omega(i))
              + log_h[i - b - 1] - log_h[i - b + 1])
             for i in range(b + 1, d - 1)])     # finite for i <= d-2
        r = d - 1 - b                           # sites b+1 .. d-1
        lm2R = np.empty(r)
        lm2R[0] = 0.0
        for k in range(1, r):                   # site i = b+1+k, uses hats at i-1
            lo_w = log_omega_hat[k - 1]
            lo_r = log_rho_hat[k - 1]
            lm2R[k] = np.logaddexp(lm1R[k - 1] - lo_w - 2.0 * lo_r,
                                   lm2R[k - 1] - 2.0 * lo_r)
        # D_i = sum_{j=i+1}^{d-1} e^{-(V-hat(j-1) - V-hat(i-1))}
        log_D = np.full(r, -math.inf)
        if r > 1:
            suffix = _log_suffix_sumexp(-w[1:])
            log_D[:-1] = w[:-1] + suffix
        log_S2R = _logsumexp(lm2R + np.logaddexp(0.0, math.log(2.0) + log_D))
        right_first = log_wb + log_u + log_S1R
        right_second = log_wb + log_u + log_S2R
    else:
        right_first = -math.inf
        right_second = -math.inf

    mean_F = math.exp(math.log(2.0)
                      + np.logaddexp(log_1mwb + log_S1L, right_first) - log_p_fail)
    second_F = math.exp(math.log(4.0)
                        + np.logaddexp(log_1mwb + log_S2L, right_second) - log_p_fail)

    # success-side bound: 1 + 2 sum_{b+1 <= i <= j <= d} e^{V-bar(j) - V-bar(i)}.
    # The factor 2 makes this a true pathwise bound: expanding the exact
    # transit time gives each off-diagonal pair twice (once through 1/w
    # and once through rho/w at the lower site), so the ordered-pair sum
    # alone can fall short of the exact mean by up to that factor.
    hs = h_transform(chain, b, d, "success")
    v_bar = hs.v_hat[1:]                        # finite on [b+1, d]
    log_L = _log_suffix_sumexp(v_bar)
    mean_G_bound = 1.0 + 2.0 * math.exp(_logsumexp(log_L - v_bar))

    # potential sums: attempt count and depth factors
    left_part = chain.v(b) - chain._vslice(a + 1, b - 1) if b > a + 1 else np.array([])
    right_part = -(v_hat[: d - b] - chain.v(b))           # x = b .. d-1
    m1_hat = math.exp(_logsumexp(np.concatenate([left_part, right_part])))
    v_bd = chain._vslice(b, d - 1)
    m2 = math.exp(_logsumexp(v_bd - np.max(v_bd)))        # = sum e^{V(x) - V(c)}
    return AttemptMoments(p_fail=p_fail, mean_F=mean_F, second_F=second_F,
                          mean_G_bound=mean_G_bound, m1_hat=m1_hat, m2=m2)


def mean_G_exact(chain: QuenchedChain, b: int, d: int) -> float:
    """Exact conditional mean of the success time G.

    Conditioned on reaching d before returning to b, the attempt walks
    the success-transformed chain: one forced step to b+1, then the
    omega-bar dynamics, which never revisit b.  The transit time from
    b+1 to d has the standard per-edge expectation t_i = 1/w_i +
    rho_i t_{i-1} (t at b+1 is 1), evaluated here in the log domain.
    """
    if not (chain.left <= b < d <= chain.right):
        raise ValueError(f"need left <= b < d <= right, got b={b}, d={d}")
    if d == b + 1:
        return 1.0
    hs = h_transform(chain, b, d, "success")
    log_g = hs.log_scale                         # sites b .. d+1
    with np.errstate(divide="ignore"):
        log_omega_bar = np.log(hs.omegas_hat)    # sites b+1 .. d-1
    # log rho-bar_i = log rho_i + log g(i-1) - log g(i+1), finite for i >= b+2
    log_t = 0.0                                  # t at b+1 = 1 / omega-bar = 1
    log_total = 0.0
    for i in range(b + 2, d):
        k = i - b                                # log_g index of site i
        log_rho_bar = (math.log1p(-chain.omega(i)) - math.log(chain.omega(i))
                       + log_g[k - 1] - log_g[k + 1])
        log_t = np.logaddexp(-log_omega_bar[i - b - 1], log_rho_bar + log_t)
        log_total = np.logaddexp(log_total, log_t)
    return 1.0 + math.exp(log_total)


def linear_solve_oracle(chain: QuenchedChain, functional: str,
                        target: int | None = None, lam: float = 0.0) -> np.ndarray:
    """Dense-solve ground truth for quenched functionals.

    Solves the harmonic system on [left, right] with the chain's
    reflection applied and both endpoints absorbing (a reflecting left
    end replaces absorption there).  Returns the value at every site of
    [left, right].

    functional:
      "hit_prob":            P^x{absorbed at target} (target = left or right)
      "expected_time":       E^x[steps to absorption]
      "second_moment_time":  E^x[(steps to absorption)^2]
      "laplace_hit":         E^x[e^{-lam tau(target)}; absorbed at target]
    """
    L, R = chain.left, chain.right
    reflect = chain.reflect_at
    if functional in ("hit_prob", "laplace_hit"):
        if target not in (L, R):
            raise ValueError("target must be an endpoint")
    # unknown sites: interior, plus the left end if it reflects
    x0 = L if reflect == L else L + 1
    x1 = R - 1
    n = x1 - x0 + 1
    if n <= 0:
        out = np.zeros(R - L + 1)
        if functional in ("hit_prob", "laplace_hit"):
            out[target - L] = 1.0
        return out
    w = np.array([chain.omega(x) if x != reflect else 1.0 for x in range(x0, x1 + 1)])
    scale = math.exp(lam) if functional == "laplace_hit" else 1.0

    ab = np.zeros((3, n))
    ab[1, :] = scale
    ab[0, 1:] = -w[:-1]               # superdiagonal: coupling to x+1
    ab[2, :-1] = -(1.0 - w[1:])       # subdiagonal: coupling to x-1

    def boundary(values_left: float, values_right: float, rhs_base: np.ndarray) -> np.ndarray:
        rhs = rhs_base.copy()
        if x0 == L + 1:
            rhs[0] += (1.0 - w[0]) * values_left
        rhs[-1] += w[-1] * values_right
        return rhs

    def solve(rhs: np.ndarray) -> np.ndarray:
        return solve_banded((1, 1), ab, rhs)

    out = np.zeros(R - L + 1)
    if functional in ("hit_prob", "laplace_hit"):
        bl = 1.0 if target == L else 0.0
        br = 1.0 if target == R else 0.0
        f = solve(boundary(bl, br, np.zeros(n)))
        out[x0 - L : x1 - L + 1] = f
        out[0] = f[0] if x0 == L else bl
        out[-1] = br
        if functional == "hit_prob":
            out[target - L] = 1.0
        else:
            out[target - L] = 1.0     # tau(target) = 0 from target itself
        return out

    if functional == "expected_time":
        t = solve(boundary(0.0, 0.0, np.ones(n)))
        out[x0 - L : x1 - L + 1] = t
        return out

    if functional == "second_moment_time":
        t_sys = solve(boundary(0.0, 0.0, np.ones(n)))
        t_full = np.zeros(R - L + 1)
        t_full[x0 - L : x1 - L + 1] = t_sys
        # E[tau^2](x) = 1 + 2 (P T)(x) + (P S)(x)
        pt = np.empty(n)
        for k, x in enumerate(range(x0, x1 + 1)):
            up = t_full[x + 1 - L]
            down = 0.0 if x == L else t_full[x - 1 - L]
            pt[k] = w[k] * up + (1.0 - w[k]) * down
        s = solve(boundary(0.0, 0.0, 1.0 + 2.0 * pt))
        out[x0 - L : x1 - L + 1] = s
        return out

    raise ValueError(f"unknown functional {functional!r}")


def simulate_walk(env, start: int, stop: tuple[str, int], seed,
                  reflect_at: int | None = None, step_cap: int = 10**10,
                  trace: bool = False, use_branching: bool = False) -> WalkResult:
    """Step-by-step walk in an environment slice (or chain).

    stop is ("hit", site) or ("steps", count).  The walk must stay inside
    the realized window; walking off it raises WindowExhausted.  The
    branching fast path (off by default) is exact in distribution for
    upward hitting times but produces no trace.
    """
    if isinstance(env, QuenchedChain):
        # omegas exist only on the interior; the endpoints can be stop
        # sites but the walk cannot step from them (unless reflected)
        lo, hi = env.left + 1, env.right - 1
        omega_of = env.omega
        if reflect_at is None:
            reflect_at = env.reflect_at
    else:
        lo, hi = env.offset, env.offset + len(env.omegas) - 1
        omega_of = env.site
    kind, value = stop
    if kind not in ("hit", "steps"):
        raise ValueError(f"stop must be ('hit', site) or ('steps', n), got {stop!r}")

    if use_branching and kind == "hit" and value > start and not trace \
            and not isinstance(env, QuenchedChain):
        tau = sample_hitting_times(env, value, 1, seed, start=start,
                                   reflect_at=reflect_at)
        steps = int(tau[0]) if tau[0] < 2**62 else step_cap
        return WalkResult(final_site=value, steps=steps, stopped_on="hit",
                          truncated=False)

    rng = generator(stream_key(seed, "walk") if isinstance(seed, int) else seed)
    x = start
    steps = 0
    path = [x] if trace else None
    block = np.empty(0)
    bi = 0
    while True:
        if kind == "hit" and x == value and steps > 0:
            return WalkResult(final_site=x, steps=steps, stopped_on="hit",
                              truncated=False,
                              trace=np.array(path) if trace else None)
        if kind == "steps" and steps >= value:
            return WalkResult(final_site=x, steps=steps, stopped_on="steps",
                              truncated=False,
                              trace=np.array(path) if trace else None)
        if steps >= step_cap:
            return WalkResult(final_site=x, steps=steps, stopped_on="cap",
                              truncated=True,
                              trace=np.array(path) if trace else None)
        if bi >= len(block):
            block = rng.random(8192)
            bi = 0
        if reflect_at is not None and x == reflect_at:
            x += 1
        else:
            if not lo <= x <= hi:
                raise WindowExhausted("left" if x < lo else "right",
                                      x - 64 if x < lo else x + 64, "walk window")
            x += 1 if block[bi] < omega_of(x) else -1
            bi += 1
        steps += 1
        if trace:
            path.append(x)


def sample_hitting_times(env, target: int, n_replicas: int, seed,
                         start: int = 0, reflect_at: int | None = None) -> np.ndarray:
    """Exact-in-distribution tau(start -> target) via the branching
    representation: tau = (target - start) + 2 sum_i U_i, where U_i counts
    the left crossings of the edge (i, i+1).

    Scanning right to left, U_i given U_{i+1} is negative binomial (number
    of failures before U_{i+1} + 1 successes at rate omega_i for sites
    >= start, before U_{i+1} successes below start), drawn by Poisson
    mixing over a gamma variable.  A reflecting site stops the cascade;
    without one the cascade must die out before the window's left edge,
    otherwise WindowExhausted asks for more environment.

    Returns float64 (extreme excursions overflow int64 but stay exact to
    the resolution that matters).
    """
    if isinstance(env, QuenchedChain):
        lo = env.left
        omega_of = env.omega
        if reflect_at is None:
            reflect_at = env.reflect_at
    else:
        lo = env.offset
        omega_of = env.site
    if target <= start:
        raise ValueError("branching representation needs target > start")
    rng = seed if isinstance(seed, np.random.Generator) else \
        generator(stream_key(seed, "branch"))

    u = np.zeros(n_replicas, dtype=np.float64)
    total = np.zeros(n_replicas, dtype=np.float64)
    floor = reflect_at if reflect_at is not None else lo

    for i in range(target - 1, start - 1, -1):
        om = 1.0 if (reflect_at is not None and i == reflect_at) else omega_of(i)
        rho = (1.0 - om) / om
        lam = rng.standard_gamma(u + 1.0) * rho
        u = rng.poisson(np.minimum(lam, _LAM_CAP)).astype(np.float64)
        total += u

    i = start - 1
    while np.any(u > 0.0):
        if i < floor:
            if reflect_at is not None:
                break                  # cascade is dead at the wall
            raise WindowExhausted("left", lo - max(64, 2 * (start - lo)),
                                  "branching cascade")
        om = 1.0 if (reflect_at is not None and i == reflect_at) else omega_of(i)
        rho = (1.0 - om) / om
        lam = rng.standard_gamma(u) * rho
        u = rng.poisson(np.minimum(lam, _LAM_CAP)).astype(np.float64)
        total += u
        i -= 1

    return (target - start) + 2.0 * total


def save_chain_text(chain: QuenchedChain, filename: str) -> None:
    """One 'site omega' pair per line for sites left+1 .. right; the right
    edge omega is reconstructed from the last potential increment."""
    edge_rho = math.exp(chain.base_potential[-1] - chain.base_potential[-2])
    edge_omega = 1.0 / (1.0 + edge_rho)
    with open(filename, "w") as fh:
        fh.write(f"# left {chain.left} right {chain.right} "
                 f"reflect {chain.reflect_at if chain.reflect_at is not None else 'none'}\n")
        for k, om in enumerate(chain.omegas):
            fh.write(f"{chain.left + 1 + k} {float(om)!r}\n")
        fh.write(f"{chain.right} {edge_omega!r}\n")


def load_chain_text(filename: str) -> QuenchedChain:
    left = 0
    reflect: int | None = None
    omegas = []
    with open(filename) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line.split()
                left = int(parts[parts.index("left") + 1])
                tok = parts[parts.index("reflect") + 1]
                reflect = None if tok == "none" else int(tok)
                continue
            _, om = line.split()
            omegas.append(float(om))
    return QuenchedChain.from_omegas(np.array(omegas), left=left, reflect_at=reflect)
