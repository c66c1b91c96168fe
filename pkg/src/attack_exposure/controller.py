"""Tracking controller: LQR synthesis, saturation, and exponential-decay certificates.

The nominal law is u = -K (x_hat - x_goal) with per-component saturation. The
closed loop A - B K must be Schur stable; a ``UesCertificate`` (c, rho) bounds
its transition-matrix powers, ||A_cl^k|| <= c rho^k, which the shake-budget
calculators rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CertificationError, DimensionError, ParameterError, SynthesisError
from .lin_model import SystemModel, _frozen_array


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def solve_dare(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
               tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Fixed-point iteration for the discrete algebraic Riccati equation.

    Iterates P <- A'PA - A'PB (R + B'PB)^-1 B'PA + Q until the update is
    below ``tol`` in max-abs norm.
    """
    P = np.array(Q, dtype=float)
    for _ in range(max_iter):
        BtP = B.T @ P
        gain_term = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = A.T @ P @ A - A.T @ P @ B @ gain_term + Q
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) < tol:
            return P_next
        P = P_next
    raise SynthesisError(f"Riccati iteration did not converge within {max_iter} steps")


def dare_residual(A, B, Q, R, P) -> float:
    """Frobenius norm of the Riccati equation residual at P."""
    BtP = B.T @ P
    gain_term = np.linalg.solve(R + BtP @ B, BtP @ A)
    res = A.T @ P @ A - A.T @ P @ B @ gain_term + Q - P
    return float(np.linalg.norm(res, "fro"))


@dataclass(frozen=True)
class FeedbackGain:
    """Stabilizing state-feedback gain (n_u by n_x)."""

    K_ctrl: np.ndarray

    def __post_init__(self):
        K = _frozen_array(self.K_ctrl)
        if K.ndim != 2:
            raise DimensionError("K_ctrl", "(n_u, n_x)", K.shape)
        object.__setattr__(self, "K_ctrl", K)


def synthesize_feedback(model: SystemModel, Q: np.ndarray, R: np.ndarray) -> FeedbackGain:
    """LQR gain from the Riccati fixed point; validates closed-loop stability."""
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if Q.shape != (model.n_x, model.n_x):
        raise DimensionError("Q", (model.n_x, model.n_x), Q.shape)
    if R.shape != (model.n_u, model.n_u):
        raise DimensionError("R", (model.n_u, model.n_u), R.shape)
    if np.any(np.linalg.eigvalsh(0.5 * (Q + Q.T)) < -1e-12):
        raise ParameterError("Q must be positive semidefinite")
    if np.any(np.linalg.eigvalsh(0.5 * (R + R.T)) <= 0):
        raise ParameterError("R must be positive definite")
    P = solve_dare(model.A, model.B, Q, R)
    BtP = model.B.T @ P
    K = np.linalg.solve(R + BtP @ model.B, BtP @ model.A)
    if spectral_radius(model.A - model.B @ K) >= 1.0:
        raise SynthesisError("synthesized closed loop is not Schur stable")
    return FeedbackGain(K_ctrl=K)


def closed_loop(model: SystemModel, gain: FeedbackGain) -> np.ndarray:
    return model.A - model.B @ gain.K_ctrl


@dataclass(frozen=True)
class UesCertificate:
    """Constants (c, rho) with ||A_cl^k|| <= c rho^k checked up to a horizon."""

    c: float
    rho: float
    horizon_checked: int

    def __post_init__(self):
        if not (self.c > 0):
            raise ParameterError(f"c must be > 0, got {self.c}")
        if not (0.0 < self.rho < 1.0):
            raise ParameterError(f"rho must lie in (0, 1), got {self.rho}")
        if self.horizon_checked < 1:
            raise ParameterError(f"horizon_checked must be >= 1, got {self.horizon_checked}")


def certificate_holds(A_cl: np.ndarray, cert: UesCertificate,
                      horizon: int | None = None) -> bool:
    """Check ||A_cl^k||_2 <= c rho^k for 0 <= k <= horizon by direct powers."""
    horizon = cert.horizon_checked if horizon is None else horizon
    if spectral_radius(A_cl) >= cert.rho:
        return False
    power = np.eye(A_cl.shape[0])
    bound = cert.c
    for _ in range(horizon + 1):
        if np.linalg.norm(power, 2) > bound * (1 + 1e-12):
            return False
        power = power @ A_cl
        bound *= cert.rho
    return True


def certify_ues(A_cl: np.ndarray, horizon: int = 200,
                rho_margin: float = 0.05) -> UesCertificate:
    """Fit (c, rho) to the observed power decay of A_cl.

    rho is the spectral radius inflated by ``rho_margin`` (capped just below
    one); c is the smallest constant making the bound hold on the checked
    horizon.
    """
    A_cl = np.asarray(A_cl, dtype=float)
    if horizon < 1:
        raise ParameterError(f"horizon must be >= 1, got {horizon}")
    if rho_margin <= 0:
        raise ParameterError(f"rho_margin must be > 0, got {rho_margin}")
    sr = spectral_radius(A_cl)
    if sr >= 1.0:
        raise CertificationError(f"A_cl is not Schur stable (spectral radius {sr:.6f})")
    rho = min(sr * (1.0 + rho_margin), 1.0 - 1e-9)
    if rho <= 0.0:  # nilpotent loop; any rho works
        rho = 0.5
    power = np.eye(A_cl.shape[0])
    c = 0.0
    rho_k = 1.0
    for _ in range(horizon + 1):
        c = max(c, np.linalg.norm(power, 2) / rho_k)
        power = power @ A_cl
        rho_k *= rho
    cert = UesCertificate(c=float(c), rho=float(rho), horizon_checked=horizon)
    if not certificate_holds(A_cl, cert):
        raise CertificationError("fitted certificate failed its own power check")
    return cert


@dataclass(frozen=True)
class ErrorDynamics:
    """Closed-loop matrix paired with a decay certificate that covers it."""

    A_cl: np.ndarray
    cert: UesCertificate

    def __post_init__(self):
        A_cl = _frozen_array(self.A_cl)
        object.__setattr__(self, "A_cl", A_cl)
        if not certificate_holds(A_cl, self.cert):
            raise CertificationError(
                f"certificate (c={self.cert.c}, rho={self.cert.rho}) does not cover A_cl"
            )


def nominal_input(gain: FeedbackGain, x_hat: np.ndarray, x_goal: np.ndarray,
                  u_limit: float | None = 0.5) -> np.ndarray:
    """Tracking law -K (x_hat - x_goal), saturated per component at u_limit."""
    x_hat = np.asarray(x_hat, dtype=float)
    x_goal = np.asarray(x_goal, dtype=float)
    n_x = gain.K_ctrl.shape[1]
    if x_hat.shape != (n_x,):
        raise DimensionError("x_hat", (n_x,), x_hat.shape)
    if x_goal.shape != (n_x,):
        raise DimensionError("x_goal", (n_x,), x_goal.shape)
    u = -gain.K_ctrl @ (x_hat - x_goal)
    if u_limit is not None:
        u = np.clip(u, -u_limit, u_limit)
    return u


def saturate(u: np.ndarray, u_limit: float | None) -> np.ndarray:
    """Per-component symmetric saturation; identity when u_limit is None."""
    if u_limit is None:
        return u
    return np.clip(u, -u_limit, u_limit)
