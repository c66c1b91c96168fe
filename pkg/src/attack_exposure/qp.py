"""Projected-gradient solver for ball-constrained QPs with one linear constraint.

Solves
    minimize    0.5 u' H u + g' u
    subject to  a' u >= b
                ||u_t||_2 <= cap_t   for each consecutive block t of size nb

by dualizing the single linear constraint. For a fixed multiplier lam >= 0 the
inner problem (strongly convex, ball-product feasible set) is solved by
accelerated projected gradient with the fixed step 1/L, L = lambda_max(H).
The constraint value a' u(lam) - b is nondecreasing in lam, so the outer
search is a plain bisection. Everything is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass
class QpSolution:
    u: np.ndarray
    cost: float
    lam: float
    stationarity: float       # inf-norm of the projected-gradient residual
    constraint_value: float   # a' u - b  (>= 0 when feasible)
    cap_violation: float      # worst ball-constraint violation
    iterations: int
    feasible: bool


def _project_balls(u: np.ndarray, caps: np.ndarray, nb: int) -> np.ndarray:
    blocks = u.reshape(-1, nb)
    norms = np.linalg.norm(blocks, axis=1)
    scale = np.ones_like(norms)
    over = norms > caps
    scale[over] = caps[over] / norms[over]
    return (blocks * scale[:, None]).ravel()


def _inner_solve(H, grad_const, L, caps, nb, u0, tol, max_iter):
    """FISTA with restart on min 0.5 u'Hu + grad_const'u over the ball product."""
    u = _project_balls(u0, caps, nb)
    z = u.copy()
    t_mom = 1.0
    step = 1.0 / L
    iters = 0
    for _ in range(max_iter):
        iters += 1
        grad_z = H @ z + grad_const
        u_next = _project_balls(z - step * grad_z, caps, nb)
        # Gradient restart keeps the momentum useful on this small problem.
        if np.dot(z - u_next, u_next - u) > 0:
            t_mom = 1.0
            z = u_next.copy()
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom ** 2))
            z = u_next + ((t_mom - 1.0) / t_next) * (u_next - u)
            t_mom = t_next
        moved = np.max(np.abs(u_next - u))
        u = u_next
        if moved <= tol:
            grad = H @ u + grad_const
            resid = np.max(np.abs(u - _project_balls(u - step * grad, caps, nb))) * L
            if resid <= tol * L * 10 or resid <= 1e-10:
                break
    return u, iters


def solve_ball_linear_qp(H: np.ndarray, g: np.ndarray, a: np.ndarray, b: float,
                         caps: np.ndarray, nb: int,
                         tol: float = 1e-11, max_iter: int = 10_000,
                         feas_tol: float = 1e-9) -> QpSolution:
    """Solve the QP described in the module docstring.

    Returns a solution object with ``feasible`` False when even the most
    aligned point of the ball product cannot satisfy the linear constraint.
    """
    n = H.shape[0]
    if g.shape != (n,) or a.shape != (n,):
        raise ParameterError("H, g, a dimensions disagree")
    if n % nb != 0 or caps.shape != (n // nb,):
        raise ParameterError("caps must hold one radius per block")
    if np.any(caps < 0):
        raise ParameterError("ball radii must be >= 0")

    # Best achievable constraint value: align each block with a.
    block_a = a.reshape(-1, nb)
    best = float(np.sum(np.linalg.norm(block_a, axis=1) * caps))
    if best < b - feas_tol:
        return QpSolution(u=np.zeros(n), cost=np.inf, lam=np.inf,
                          stationarity=np.inf, constraint_value=best - b,
                          cap_violation=0.0, iterations=0, feasible=False)

    L = float(np.max(np.linalg.eigvalsh(0.5 * (H + H.T))))
    if L <= 0:
        raise ParameterError("H must be positive definite")
    total_iters = 0

    def inner(lam, u0):
        nonlocal total_iters
        u, it = _inner_solve(H, g - lam * a, L, caps, nb, u0, tol, max_iter)
        total_iters += it
        return u

    u = inner(0.0, np.zeros(n))
    phi = float(a @ u - b)
    lam_lo, lam_hi = 0.0, 0.0
    if phi < -feas_tol:
        # Bracket the active multiplier by doubling.
        lam_hi = max(1.0, 10.0 * L * np.max(caps) / max(np.linalg.norm(a), 1e-12))
        lam_hi_start = 1e-3 * lam_hi
        lam = lam_hi_start
        u_hi = u
        while True:
            u_hi = inner(lam, u_hi)
            if float(a @ u_hi - b) >= 0.0:
                lam_hi = lam
                break
            lam_lo = lam
            lam *= 4.0
            if lam > 1e16:
                return QpSolution(u=u_hi, cost=np.inf, lam=lam,
                                  stationarity=np.inf,
                                  constraint_value=float(a @ u_hi - b),
                                  cap_violation=0.0, iterations=total_iters,
                                  feasible=False)
        u = u_hi
        for _ in range(200):
            if lam_hi - lam_lo <= 1e-12 * max(1.0, lam_hi):
                break
            lam_mid = 0.5 * (lam_lo + lam_hi)
            u_mid = inner(lam_mid, u)
            phi_mid = float(a @ u_mid - b)
            if phi_mid >= 0.0:
                lam_hi, u = lam_mid, u_mid
            else:
                lam_lo = lam_mid
            if abs(phi_mid) <= feas_tol * max(1.0, abs(b)) and phi_mid >= 0.0:
                break
        lam = lam_hi
        u = inner(lam, u)  # final polish at the feasible-side multiplier
        if float(a @ u - b) < 0.0:
            # Keep the last certified-feasible iterate.
            u = inner(lam_hi * (1 + 1e-9) + 1e-15, u)
    else:
        lam = 0.0

    grad = H @ u + g - lam * a
    stationarity = float(np.max(np.abs(u - _project_balls(u - grad, caps, nb))))
    norms = np.linalg.norm(u.reshape(-1, nb), axis=1)
    cap_violation = float(np.max(np.maximum(norms - caps, 0.0)))
    constraint_value = float(a @ u - b)
    cost = float(0.5 * u @ H @ u + g @ u)
    return QpSolution(u=u, cost=cost, lam=float(lam), stationarity=stationarity,
                      constraint_value=constraint_value,
                      cap_violation=cap_violation, iterations=total_iters,
                      feasible=constraint_value >= -feas_tol)
