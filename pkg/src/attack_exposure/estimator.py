"""Error-state Kalman filter fusing a dead-reckoning sensor with a position sensor.

The reliable sensor propagates a nominal state through the plant dynamics
(including its own drift); the suspicious sensor's measurements correct it
through an error state delta_x_hat. The fused estimate is their sum. The
state residual K (y - y_hat) is both the correction and the detection signal.

Freezing suspends corrections: the error state and covariance hold their
values from the freeze instant while the nominal state keeps propagating, so
the fused estimate tracks the reliable sensor alone (plus the held
correction). In reset mode the correction is folded into the nominal state
after every update and delta_x_hat returns to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, FrozenUpdateError, ParameterError
from .lin_model import SystemModel, _frozen_array

_REG = 1e-12  # ridge added to the innovation covariance before inversion


@dataclass(frozen=True)
class EskfState:
    """Filter state: nominal state, error-state correction, and covariances."""

    x_nominal: np.ndarray
    delta_x_hat: np.ndarray
    P: np.ndarray
    Qn: np.ndarray
    Rn: np.ndarray
    H: np.ndarray
    frozen: bool = False
    reset_mode: bool = False

    def __post_init__(self):
        x_n = _frozen_array(self.x_nominal)
        n_x = x_n.shape[0]
        delta = _frozen_array(self.delta_x_hat)
        P = _frozen_array(self.P)
        Qn = _frozen_array(self.Qn)
        Rn = _frozen_array(self.Rn)
        H = _frozen_array(self.H)
        if delta.shape != (n_x,):
            raise DimensionError("delta_x_hat", (n_x,), delta.shape)
        if P.shape != (n_x, n_x):
            raise DimensionError("P", (n_x, n_x), P.shape)
        if Qn.shape != (n_x, n_x):
            raise DimensionError("Qn", (n_x, n_x), Qn.shape)
        if H.ndim != 2 or H.shape[1] != n_x:
            raise DimensionError("H", f"(n_y, {n_x})", H.shape)
        n_y = H.shape[0]
        if Rn.shape != (n_y, n_y):
            raise DimensionError("Rn", (n_y, n_y), Rn.shape)
        if np.min(np.linalg.eigvalsh(0.5 * (P + P.T))) < -1e-10:
            raise ParameterError("P must be positive semidefinite")
        for name, value in (("x_nominal", x_n), ("delta_x_hat", delta), ("P", P),
                            ("Qn", Qn), ("Rn", Rn), ("H", H)):
            object.__setattr__(self, name, value)

    @property
    def n_x(self) -> int:
        return self.x_nominal.shape[0]

    @property
    def n_y(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class ResidualReport:
    """State residual r = K_gain @ innovation for one measurement."""

    r: np.ndarray
    K_gain: np.ndarray
    innovation: np.ndarray

    def __post_init__(self):
        for name in ("r", "K_gain", "innovation"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))


def fused_estimate(state: EskfState) -> np.ndarray:
    """x_nominal + delta_x_hat."""
    return state.x_nominal + state.delta_x_hat


def kalman_gain(state: EskfState) -> np.ndarray:
    """P H' (H P H' + Rn)^-1 with a tiny ridge for numerical safety."""
    S = state.H @ state.P @ state.H.T + state.Rn + _REG * np.eye(state.n_y)
    return np.linalg.solve(S.T, (state.P @ state.H.T).T).T


def detection_residual(state: EskfState, y: np.ndarray) -> ResidualReport:
    """Residual against the current fused estimate, without touching the state.

    Usable while frozen; this is the detector's input during suspect
    operation.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (state.n_y,):
        raise DimensionError("y", (state.n_y,), y.shape)
    innovation = y - state.H @ fused_estimate(state)
    K = kalman_gain(state)
    return ResidualReport(r=K @ innovation, K_gain=K, innovation=innovation)


def eskf_predict(state: EskfState, model: SystemModel, u: np.ndarray,
                 imu_noise: np.ndarray) -> EskfState:
    """Propagate the nominal state through the plant dynamics.

    ``imu_noise`` is the reliable sensor's own propagation error for this step
    (drift plus noise). The covariance is held while frozen so the detection
    gain stays fixed over a suspect window.
    """
    u = np.asarray(u, dtype=float)
    imu_noise = np.asarray(imu_noise, dtype=float)
    if u.shape != (model.n_u,):
        raise DimensionError("u", (model.n_u,), u.shape)
    if imu_noise.shape != (model.n_x,):
        raise DimensionError("imu_noise", (model.n_x,), imu_noise.shape)
    x_next = model.A @ state.x_nominal + model.B @ u + imu_noise
    if state.frozen:
        return replace(state, x_nominal=x_next)
    P_next = model.A @ state.P @ model.A.T + state.Qn
    P_next = 0.5 * (P_next + P_next.T)
    return replace(state, x_nominal=x_next, P=P_next)


def eskf_update(state: EskfState, y: np.ndarray) -> tuple[EskfState, ResidualReport]:
    """Apply a suspicious-sensor correction and return the residual report."""
    if state.frozen:
        raise FrozenUpdateError("eskf_update called on a frozen filter state")
    report = detection_residual(state, y)
    delta_next = state.delta_x_hat + report.r
    P_next = (np.eye(state.n_x) - report.K_gain @ state.H) @ state.P
    P_next = 0.5 * (P_next + P_next.T)
    if state.reset_mode:
        new_state = replace(state, x_nominal=state.x_nominal + delta_next,
                            delta_x_hat=np.zeros(state.n_x), P=P_next)
    else:
        new_state = replace(state, delta_x_hat=delta_next, P=P_next)
    return new_state, report


def freeze(state: EskfState) -> EskfState:
    """Suspend suspicious-sensor corrections; holds delta_x_hat and P."""
    return replace(state, frozen=True)


def unfreeze(state: EskfState) -> EskfState:
    return replace(state, frozen=False)


def steady_state_gain(model: SystemModel, Qn: np.ndarray, Rn: np.ndarray,
                      H: np.ndarray, P0: np.ndarray | None = None,
                      tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """Converged Kalman gain for the predict/update recursion of this filter."""
    n_x = model.n_x
    P = np.eye(n_x) if P0 is None else np.array(P0, dtype=float)
    K = None
    for _ in range(max_iter):
        P_pred = model.A @ P @ model.A.T + Qn
        S = H @ P_pred @ H.T + Rn + _REG * np.eye(H.shape[0])
        K_new = np.linalg.solve(S.T, (P_pred @ H.T).T).T
        P = (np.eye(n_x) - K_new @ H) @ P_pred
        P = 0.5 * (P + P.T)
        if K is not None and np.max(np.abs(K_new - K)) < tol:
            return K_new
        K = K_new
    raise ParameterError(f"filter gain did not converge within {max_iter} iterations")
