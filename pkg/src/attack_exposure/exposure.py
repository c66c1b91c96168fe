"""Suspect-mode machinery: shake-budget bounds, shake generation, and shifting.

The analytic calculators give the admissible range of the shake magnitude:
``exposure_lower_bound`` is the smallest budget that still guarantees the
estimate divergence needed to trip the detector within the exposure horizon,
``compensability_upper_bound`` is the largest budget whose closed-loop
deviation stays inside a prescribed tolerance, and ``epsilon_min`` is the
smallest tolerance for which the interval is nonempty.

``generate_shakes`` solves one convex QP per (state component, sign) pair: a
quadratic tracking cost over the prediction horizon, per-step masked norm
caps, and a single linear exposure constraint. The constraint aggregates the
shake authority with the certified decay weights c rho^j and must dominate
twice the detector threshold plus the worst case the adversary and the noise
mismatch can cancel over the horizon; the adversary's side enters through its
closed-form bound, which removes the inner maximization. Feasibility of the
QP is then exactly the budget condition of the lower-bound calculator.

A note on the B factor: the two calculators reproduce their reference values
under different matrix-norm readings (identity weight versus spectral norm).
Both are exposed through ``norm_convention``; a single run uses one
convention consistently.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .controller import FeedbackGain, UesCertificate
from .detector import DetectorConfig, suspect_threshold_bound
from .errors import DimensionError, ExposureInfeasibleError, ParameterError
from .lin_model import SystemModel, _frozen_array
from .qp import solve_ball_linear_qp

NORM_CONVENTIONS = ("unit", "spectral")


def b_norm_value(B: np.ndarray, convention: str) -> float:
    """Input-matrix weight under the declared convention."""
    if convention == "unit":
        return 1.0
    if convention == "spectral":
        return float(np.linalg.norm(np.asarray(B, dtype=float), 2))
    raise ParameterError(f"unknown norm convention {convention!r}; "
                         f"expected one of {NORM_CONVENTIONS}")


def _check_bound_args(c, rho, k_exp, T_bar, w_bar, B_norm):
    if c <= 0:
        raise ParameterError(f"c must be > 0, got {c}")
    if not (0.0 < rho < 1.0):
        raise ParameterError(f"rho must lie in (0, 1), got {rho}")
    if k_exp < 1:
        raise ParameterError(f"k_exp must be >= 1, got {k_exp}")
    if T_bar < 0:
        raise ParameterError(f"T_bar must be >= 0, got {T_bar}")
    if w_bar < 0:
        raise ParameterError(f"w_bar must be >= 0, got {w_bar}")
    if B_norm <= 0:
        raise ParameterError(f"B_norm must be > 0, got {B_norm}")


def exposure_lower_bound(c: float, rho: float, k_exp: int, T_bar: float,
                         w_bar: float, B_norm: float) -> float:
    """Smallest shake budget that keeps the exposure QP feasible."""
    _check_bound_args(c, rho, k_exp, T_bar, w_bar, B_norm)
    geo = (1.0 - rho) / (c * (1.0 - rho ** k_exp))
    return (2.0 * T_bar * geo + 2.0 * w_bar + T_bar) / B_norm


def compensability_upper_bound(c: float, rho: float, epsilon_tol: float,
                               w_bar: float, B_norm: float) -> float:
    """Largest shake budget whose asymptotic tracking deviation stays <= epsilon_tol.

    May be negative when the tolerance is too small for the noise floor.
    """
    _check_bound_args(c, rho, 1, 0.0, w_bar, B_norm)
    if epsilon_tol <= 0:
        raise ParameterError(f"epsilon_tol must be > 0, got {epsilon_tol}")
    return ((1.0 - rho) * epsilon_tol - c * w_bar) / (c * B_norm)


def epsilon_min(c: float, rho: float, k_exp: int, T_bar: float,
                w_bar: float) -> float:
    """Smallest deviation tolerance with a nonempty budget interval."""
    _check_bound_args(c, rho, k_exp, T_bar, w_bar, 1.0)
    return c * (T_bar + 3.0 * w_bar) / (1.0 - rho) + 2.0 * T_bar / (1.0 - rho ** k_exp)


@dataclass(frozen=True)
class BoundsParams:
    """Inputs for the feasibility-interval calculator."""

    c: float
    rho: float
    k_exp: int
    T_bar: float
    w_bar: float
    B_norm: float
    epsilon_tol: float
    norm_convention: str = "unit"
    beta: float | None = None
    K_inf: float | None = None


@dataclass(frozen=True)
class BoundsReport:
    u_min: float
    u_max: float
    eps_min: float
    eta_bar: float | None
    feasible: bool
    norm_convention: str


def feasible_interval(params: BoundsParams) -> BoundsReport:
    """All bound calculators evaluated under one consistent convention."""
    u_min = exposure_lower_bound(params.c, params.rho, params.k_exp,
                                 params.T_bar, params.w_bar, params.B_norm)
    u_max = compensability_upper_bound(params.c, params.rho, params.epsilon_tol,
                                       params.w_bar, params.B_norm)
    eps_min = epsilon_min(params.c, params.rho, params.k_exp,
                          params.T_bar, params.w_bar)
    eta_bar = None
    if params.beta is not None and params.K_inf is not None:
        eta_bar = suspect_threshold_bound(params.beta, params.K_inf, params.T_bar)
    return BoundsReport(u_min=u_min, u_max=u_max, eps_min=eps_min,
                        eta_bar=eta_bar, feasible=u_min <= u_max,
                        norm_convention=params.norm_convention)


def exposure_constraint_met(x_hat: np.ndarray, x_hat_a: np.ndarray,
                            T: np.ndarray) -> bool:
    """True iff the estimate gap dominates twice the threshold (inf norms)."""
    x_hat = np.asarray(x_hat, dtype=float)
    x_hat_a = np.asarray(x_hat_a, dtype=float)
    T = np.asarray(T, dtype=float)
    if x_hat.shape != x_hat_a.shape:
        raise DimensionError("x_hat_a", x_hat.shape, x_hat_a.shape)
    if T.shape != x_hat.shape:
        raise DimensionError("T", x_hat.shape, T.shape)
    return bool(np.max(np.abs(x_hat - x_hat_a)) - np.max(np.abs(2.0 * T)) >= 0.0)


@dataclass(frozen=True)
class ExposureConfig:
    """Shake-generation parameters: horizons, budget, weights, and mask range."""

    k_exp: int
    horizon: int
    u_bar: float
    Q_w: np.ndarray
    R_w: np.ndarray
    eps_mask_max: float
    epsilon_tol: float
    norm_convention: str = "unit"
    target_components: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        if self.k_exp < 1:
            raise ParameterError(f"k_exp must be >= 1, got {self.k_exp}")
        if self.horizon <= self.k_exp:
            raise ParameterError(
                f"prediction horizon must exceed k_exp, got {self.horizon} <= {self.k_exp}")
        if self.u_bar <= 0:
            raise ParameterError(f"u_bar must be > 0, got {self.u_bar}")
        if self.eps_mask_max < 0:
            raise ParameterError(f"eps_mask_max must be >= 0, got {self.eps_mask_max}")
        if self.epsilon_tol <= 0:
            raise ParameterError(f"epsilon_tol must be > 0, got {self.epsilon_tol}")
        if self.norm_convention not in NORM_CONVENTIONS:
            raise ParameterError(f"unknown norm convention {self.norm_convention!r}")
        Q_w = _frozen_array(self.Q_w)
        R_w = _frozen_array(self.R_w)
        for name, M in (("Q_w", Q_w), ("R_w", R_w)):
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise DimensionError(name, "square", M.shape)
            if np.any(np.linalg.eigvalsh(0.5 * (M + M.T)) <= 0):
                raise ParameterError(f"{name} must be positive definite")
        object.__setattr__(self, "Q_w", Q_w)
        object.__setattr__(self, "R_w", R_w)
        object.__setattr__(self, "target_components", tuple(self.target_components))


@dataclass(frozen=True)
class ShakeSequence:
    """Shake vectors for the exposure window plus the constraint they satisfy."""

    shakes: np.ndarray            # (k_exp, n_u)
    masked: bool
    component: int                # state component the constraint pushes
    sign: float
    b_dir: np.ndarray             # unit input direction coupled to the component
    coeffs: np.ndarray            # aggregation weights c rho^(k-1-t) * B_norm
    rhs: float
    caps: np.ndarray              # per-step masked budgets u_bar - ||eps_t||
    u_bar: float
    kkt_residual: float

    def __post_init__(self):
        for name in ("shakes", "b_dir", "coeffs", "caps"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        k = self.shakes.shape[0]
        if self.coeffs.shape != (k,) or self.caps.shape != (k,):
            raise DimensionError("coeffs/caps", (k,), self.coeffs.shape)
        self.validate()

    @property
    def k_exp(self) -> int:
        return self.shakes.shape[0]

    def aggregate(self) -> float:
        """Signed weighted shake authority on the constrained component."""
        aligned = self.shakes @ self.b_dir
        return float(np.sum(self.coeffs * self.sign * aligned))

    def validate(self, tol: float = 1e-8):
        norms = np.linalg.norm(self.shakes, axis=1)
        if np.any(norms > self.caps + tol):
            raise ParameterError("a shake exceeds its masked budget")
        if self.aggregate() < self.rhs - tol:
            raise ParameterError("shake sequence violates the tightened "
                                 "exposure constraint")


def _rollout_maps(model: SystemModel, gain: FeedbackGain, k_exp: int, N: int,
                  x_tilde0: np.ndarray, goal_traj: np.ndarray):
    """Affine maps from stacked shakes to stacked tracking errors and inputs.

    Closed-loop prediction: the nominal law reacts to the shaken trajectory,
    so the error rollout is x~[t+1] = A_cl x~[t] + B u_d[t] + drift(goal),
    with u_d zero beyond the exposure window.
    """
    n_x, n_u = model.n_x, model.n_u
    A_cl = model.A - model.B @ gain.K_ctrl
    powers = [np.eye(n_x)]
    for _ in range(N):
        powers.append(A_cl @ powers[-1])
    goal_drift = [model.A @ goal_traj[s] - goal_traj[s + 1] for s in range(N)]

    Gx = np.zeros((N * n_x, k_exp * n_u))
    x_free = np.zeros(N * n_x)
    for t in range(1, N + 1):
        row = slice((t - 1) * n_x, t * n_x)
        acc = powers[t] @ x_tilde0
        for s in range(t):
            acc = acc + powers[t - 1 - s] @ goal_drift[s]
            if s < k_exp:
                Gx[row, s * n_u:(s + 1) * n_u] = powers[t - 1 - s] @ model.B
        x_free[row] = acc

    Gu = np.zeros((N * n_u, k_exp * n_u))
    u_free = np.zeros(N * n_u)
    K = gain.K_ctrl
    for t in range(N):
        row = slice(t * n_u, (t + 1) * n_u)
        if t == 0:
            u_free[row] = -K @ x_tilde0
        else:
            xrow = slice((t - 1) * n_x, t * n_x)
            Gu[row, :] = -K @ Gx[xrow, :]
            u_free[row] = -K @ x_free[xrow]
        if t < k_exp:
            Gu[row, t * n_u:(t + 1) * n_u] += np.eye(n_u)
    return Gx, x_free, Gu, u_free


def generate_shakes(cfg: ExposureConfig, model: SystemModel, gain: FeedbackGain,
                    cert: UesCertificate, detector_cfg: DetectorConfig,
                    x_hat_now: np.ndarray, x_goal_traj: np.ndarray,
                    rng: np.random.Generator) -> ShakeSequence:
    """Lowest-cost shake sequence satisfying the tightened exposure constraint.

    One QP per (component, sign) candidate; the feasible solution with the
    lowest tracking cost wins, with ties broken by component index and then
    the positive sign. Raises ``ExposureInfeasibleError`` when the masked
    budget cannot meet the constraint for any candidate, which happens exactly
    when ``u_bar`` falls below the exposure lower bound (up to the mask).
    """
    k_exp, N = cfg.k_exp, cfg.horizon
    n_u = model.n_u
    x_goal_traj = np.asarray(x_goal_traj, dtype=float)
    if x_goal_traj.shape != (N + 1, model.n_x):
        raise DimensionError("x_goal_traj", (N + 1, model.n_x), x_goal_traj.shape)
    x_tilde0 = np.asarray(x_hat_now, dtype=float) - x_goal_traj[0]

    eps = rng.uniform(0.0, cfg.eps_mask_max, size=(k_exp, n_u))
    caps = cfg.u_bar - np.linalg.norm(eps, axis=1)
    if np.any(caps <= 0):
        raise ExposureInfeasibleError("mask draws exhaust the entire shake budget")

    Gx, x_free, Gu, u_free = _rollout_maps(model, gain, k_exp, N, x_tilde0,
                                           x_goal_traj)
    Qbar = np.kron(np.eye(N), cfg.Q_w)
    Rbar = np.kron(np.eye(N), cfg.R_w)
    H = 2.0 * (Gx.T @ Qbar @ Gx + Gu.T @ Rbar @ Gu)
    H = 0.5 * (H + H.T)
    gvec = 2.0 * (Gx.T @ Qbar @ x_free + Gu.T @ Rbar @ u_free)

    c, rho = cert.c, cert.rho
    B_norm = b_norm_value(model.B, cfg.norm_convention)
    T_bar = detector_cfg.T_bar
    w_bar = model.noise_radius
    geo = c * (1.0 - rho ** k_exp) / (1.0 - rho)
    rhs = 2.0 * T_bar + geo * (2.0 * w_bar + T_bar)
    coeffs = c * rho ** (k_exp - 1 - np.arange(k_exp)) * B_norm

    best = None
    best_key = None
    achievable = 0.0
    for comp in cfg.target_components:
        row = model.B[comp, :]
        row_norm = np.linalg.norm(row)
        if row_norm < 1e-12:
            continue
        b_dir = row / row_norm
        for sign_order, sign in enumerate((1.0, -1.0)):
            a = (sign * coeffs[:, None] * b_dir[None, :]).ravel()
            sol = solve_ball_linear_qp(H, gvec, a, rhs, caps, n_u)
            achievable = max(achievable, sol.constraint_value + rhs)
            if not sol.feasible:
                continue
            key = (sol.cost, comp, sign_order)
            if best_key is None or key < best_key:
                best_key = key
                best = (comp, sign, b_dir, sol)
    if best is None:
        raise ExposureInfeasibleError(
            f"no (component, sign) candidate meets the exposure constraint: "
            f"achievable {achievable:.6g} < required {rhs:.6g}; "
            f"the shake budget {cfg.u_bar:.6g} is below the exposure lower bound",
            achievable=achievable, required=rhs)

    comp, sign, b_dir, sol = best
    return ShakeSequence(shakes=sol.u.reshape(k_exp, n_u), masked=cfg.eps_mask_max > 0,
                         component=comp, sign=sign, b_dir=b_dir, coeffs=coeffs,
                         rhs=rhs, caps=caps, u_bar=cfg.u_bar,
                         kkt_residual=sol.stationarity)


def shift_sequence(seq: ShakeSequence, cfg: ExposureConfig,
                   rng: np.random.Generator) -> ShakeSequence:
    """Drop the consumed head and append a tail element restoring feasibility.

    The surviving elements keep their values but move to heavier-discounted
    slots; the appended element supplies whatever aligned authority the
    tightened constraint still needs, within a freshly masked budget.
    """
    k = seq.k_exp
    n_u = seq.shakes.shape[1]
    new_shakes = np.zeros_like(seq.shakes)
    new_shakes[:k - 1] = seq.shakes[1:]
    new_caps = np.empty(k)
    new_caps[:k - 1] = seq.caps[1:]
    eps_new = rng.uniform(0.0, cfg.eps_mask_max, size=n_u)
    new_caps[k - 1] = seq.u_bar - np.linalg.norm(eps_new)
    if new_caps[k - 1] <= 0:
        raise ExposureInfeasibleError("mask draw exhausts the tail budget")

    partial = float(np.sum(seq.coeffs[:k - 1] * seq.sign *
                           (new_shakes[:k - 1] @ seq.b_dir)))
    needed = (seq.rhs - partial) / seq.coeffs[k - 1]
    magnitude = min(max(needed, 0.0), new_caps[k - 1])
    new_shakes[k - 1] = seq.sign * magnitude * seq.b_dir
    if needed > new_caps[k - 1] + 1e-9:
        raise ExposureInfeasibleError(
            "shifted sequence cannot restore the exposure constraint",
            achievable=partial + seq.coeffs[k - 1] * new_caps[k - 1],
            required=seq.rhs)
    return replace(seq, shakes=new_shakes, caps=new_caps)
