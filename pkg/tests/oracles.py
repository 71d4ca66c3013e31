"""Brute-force reference computations for the test suite.

Everything in this module is written the naive way on purpose: dense
banded solves of the first-step equations, plain floating point, no
log-domain accumulation.  The package's closed forms must reproduce
these numbers on small chains, and the package's own dense solver is
compared against this one as well, so every identity is checked through
two independently written routes.

Site convention: ``omega_full`` is indexed by site 0..L, where site L is
the absorbing target and ``omega_full[L]`` is unused.  A reflecting left
end is encoded as ``omega_full[0] = 1.0``; the left neighbour of site 0
is then a phantom state whose coupling ``1 - omega_0`` vanishes, so it
can be carried as an ordinary boundary value that is never entered.
"""

import numpy as np
from scipy.linalg import solve_banded


def solve_tridiagonal(omega, rhs, boundary):
    """Solve x_i = omega_i x_{i+1} + (1 - omega_i) x_{i-1} + rhs_i on the
    interior states 1..m-1 of 0..m, with x_0 and x_m fixed by ``boundary``.

    ``omega`` and ``rhs`` run over the interior states.  Returns the full
    array of length m + 1 including both boundary values.
    """
    omega = np.asarray(omega, dtype=float)
    n = len(omega)
    ab = np.zeros((3, n))
    full_rhs = np.array(rhs, dtype=float)
    ab[1, :] = 1.0
    ab[0, 1:] = -omega[:-1]            # coupling of state i to i+1
    ab[2, :-1] = -(1.0 - omega[1:])    # coupling of state i to i-1
    full_rhs[0] += (1.0 - omega[0]) * boundary[0]
    full_rhs[-1] += omega[-1] * boundary[1]
    sol = solve_banded((1, 1), ab, full_rhs)
    # the system can be badly conditioned on long chains (the potential
    # spans many e-folds), so polish with iterative refinement using an
    # extended-precision residual
    om_l = omega.astype(np.longdouble)
    rhs_l = full_rhs.astype(np.longdouble)
    for _ in range(2):
        x = sol.astype(np.longdouble)
        r = rhs_l - x
        r[:-1] += om_l[:-1] * x[1:]
        r[1:] += (1.0 - om_l[1:]) * x[:-1]
        sol = sol + solve_banded((1, 1), ab, r.astype(float))
    return np.concatenate([[boundary[0]], sol, [boundary[1]]])


def exit_right_prob(omega_interior):
    """P{hit the right end before the left end} from every state of
    0..m, both ends absorbing, omegas over the interior."""
    m = len(omega_interior)
    return solve_tridiagonal(omega_interior, np.zeros(m), (0.0, 1.0))


def hit_time_reflected(omega_full, start):
    """Expected steps from ``start`` to site L, reflected at site 0."""
    L = len(omega_full) - 1
    tot = solve_tridiagonal(omega_full[0:L], np.ones(L), (0.0, 0.0))
    return float(tot[start + 1])       # phantom state shifts indices by one


def laplace_hit_reflected(omega_full, lam):
    """E[e^{-lam tau(L)}] from every site 0..L, reflected at site 0.

    Solves e^{lam} f(x) = omega_x f(x+1) + (1 - omega_x) f(x-1) with
    f(L) = 1 directly as a banded system.
    """
    L = len(omega_full) - 1
    om = np.asarray(omega_full[0:L], dtype=float)
    ab = np.zeros((3, L))
    ab[1, :] = np.exp(lam)
    ab[0, 1:] = -om[:-1]
    ab[2, :-1] = -(1.0 - om[1:])
    rhs = np.zeros(L)
    rhs[-1] = om[-1]
    sol = solve_banded((1, 1), ab, rhs)
    return np.concatenate([sol, [1.0]])


def attempt_reference(omega_full, b):
    """Conditional moments of one excursion attempt from b toward L.

    The attempt starts with one step from b; failure means returning to
    b before hitting L, success means hitting L first.  The chain is
    reflected at 0.  Returns a dict with the failure probability, the
    conditional first and second moments of the failure time, the
    conditional mean of the success time, and the unconditional expected
    hitting time of L from b.
    """
    L = len(omega_full) - 1
    om_right = omega_full[b + 1:L]     # interior of [b, L]

    # return probability u = P_{b+1}{hit b before L}
    if len(om_right):
        hit_b = solve_tridiagonal(om_right, np.zeros(len(om_right)), (1.0, 0.0))
        u = hit_b[1]
    else:
        u = 0.0
    p_fail = (1.0 - omega_full[b]) + omega_full[b] * u

    def restricted(om):
        """phi = P{absorb right}, T = E[steps; absorb left], S = second
        moment, on states 0..m with both ends absorbing."""
        m = len(om) + 1
        phi = solve_tridiagonal(om, np.zeros(m - 1), (1.0, 0.0))
        T = solve_tridiagonal(om, phi[1:-1], (0.0, 0.0))
        inner = 2.0 * (om * T[2:] + (1.0 - om) * T[:-2]) + phi[1:-1]
        S = solve_tridiagonal(om, inner, (0.0, 0.0))
        return phi, T, S

    # right part [b, L]: phi = P{absorb at b}, time moments on that event
    if len(om_right):
        phiR, TR, SR = restricted(om_right)
        phiR1, TR1, SR1 = phiR[1], TR[1], SR[1]
        psiR = 1.0 - phiR
        TG = solve_tridiagonal(om_right, psiR[1:-1], (0.0, 0.0))
        succ = omega_full[b] * psiR[1]
        mean_G = (omega_full[b] * (psiR[1] + TG[1])) / succ
    else:
        phiR1, TR1, SR1 = 0.0, 0.0, 0.0
        mean_G = 1.0

    # left part [0, b], b absorbing, 0 reflecting: extend the system by
    # the phantom state so the reflection is an ordinary interior site
    om_left = omega_full[0:b]          # sites 0..b-1 with omega_0 = 1
    phiL = solve_tridiagonal(om_left, np.zeros(b), (0.0, 1.0))
    TL = solve_tridiagonal(om_left, phiL[1:-1], (0.0, 0.0))
    innerL = 2.0 * (om_left * TL[2:] + (1.0 - om_left) * TL[:-2]) + phiL[1:-1]
    SL = solve_tridiagonal(om_left, innerL, (0.0, 0.0))
    phiLb, TLb, SLb = phiL[b], TL[b], SL[b]    # site b-1 sits at index b
    assert abs(phiLb - 1.0) < 1e-12, phiLb

    wb = omega_full[b]
    ef1 = (1 - wb) * (phiLb + TLb) + wb * (phiR1 + TR1)
    ef2 = (1 - wb) * (phiLb + 2 * TLb + SLb) + wb * (phiR1 + 2 * TR1 + SR1)
    total_time = hit_time_reflected(omega_full, b)
    return dict(
        u=u,
        p_fail=p_fail,
        mean_F=ef1 / p_fail,
        second_F=ef2 / p_fail,
        mean_G=mean_G,
        total_time=total_time,
    )


def walk_tau_reference(omega_full, start, target, rng, reflect_at=None):
    """One hitting time by plain stepping, for small chains only."""
    x = start
    steps = 0
    while x != target or steps == 0:
        if reflect_at is not None and x == reflect_at:
            x += 1
        else:
            x += 1 if rng.random() < omega_full[x] else -1
        steps += 1
    return steps
