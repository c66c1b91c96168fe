"""White-box attacker: a twin of the defender's estimator used to craft injections.

The attacker knows the plant matrices, the control law, the filter gain, and
the detector thresholds. It maintains a twin of the defender's fused estimate,
propagates it with the nominal control law (it cannot see exposure shakes),
and replaces the suspicious sensor's measurement with one built on the twin:

    y = H x_twin_pred + iota,   K iota = planned per-step bias.

While the loop runs normally the twin tracks the defender's estimate almost
exactly and the residual equals the planned bias, so the statistic stays
strictly below the alarm level. Injected biases walk the velocity (or
position) estimate along the drift direction for ``lure_steps`` steps, walk
it back for ``release_steps``, then hold the accumulated offset.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .controller import FeedbackGain, nominal_input
from .detector import DetectorConfig
from .errors import AttackInfeasibleError, ParameterError
from .lin_model import SystemModel, _frozen_array, sample_process_noise


@dataclass(frozen=True)
class AttackPlan:
    """Attack window, per-step intensity, and targeted measurement channels.

    ``intensity`` is the fraction of the per-step stealth budget (the detector
    threshold on the targeted residual component) consumed by each injection.
    ``channels`` are suspicious-sensor measurement indices; ``target_rows``
    are the state-residual components the walk drives, one per channel.
    """

    start_step: int
    end_step: int
    intensity: float
    channels: tuple[int, ...]
    beta_target: float
    target_rows: tuple[int, ...]
    lure_steps: int = 10
    release_steps: int | None = None
    direction: float = 1.0
    noise_scale: float = 0.2

    def __post_init__(self):
        if self.start_step >= self.end_step:
            raise ParameterError(
                f"need start_step < end_step, got {self.start_step} >= {self.end_step}")
        if not (0.0 < self.intensity <= 1.0):
            raise ParameterError(f"intensity must lie in (0, 1], got {self.intensity}")
        if len(self.channels) == 0:
            raise ParameterError("channels must be nonempty")
        if len(self.target_rows) != len(self.channels):
            raise ParameterError("need one target row per channel")
        if self.beta_target < 0:
            raise ParameterError(f"beta_target must be >= 0, got {self.beta_target}")
        if self.lure_steps < 1:
            raise ParameterError(f"lure_steps must be >= 1, got {self.lure_steps}")
        if not (0.0 <= self.noise_scale <= 1.0):
            raise ParameterError(f"noise_scale must lie in [0, 1], got {self.noise_scale}")
        if abs(self.direction) != 1.0:
            raise ParameterError(f"direction must be +-1, got {self.direction}")

    @property
    def pull_steps(self) -> int:
        return self.lure_steps if self.release_steps is None else self.release_steps

    def in_window(self, k: int) -> bool:
        return self.start_step <= k <= self.end_step


def deception_target(plan: AttackPlan, k: int, cfg: DetectorConfig) -> np.ndarray:
    """Planned per-step residual bias at step k (state units).

    Positive-signed walk during the lure phase, reversed during the release
    phase, zero afterwards (the accumulated offset is held).
    """
    n_x = cfg.T.shape[0]
    target = np.zeros(n_x)
    if not plan.in_window(k):
        return target
    phase = k - plan.start_step
    if phase < plan.lure_steps:
        sign = 1.0
    elif phase < plan.lure_steps + plan.pull_steps:
        sign = -1.0
    else:
        return target
    for row in plan.target_rows:
        target[row] = plan.direction * sign * plan.intensity * cfg.T[row]
    return target


@dataclass(frozen=True)
class AttackerState:
    """Twin state: pre-deception prediction, deceived estimate, cumulative bias."""

    x_hat_a: np.ndarray
    x_hat_a_plus: np.ndarray
    cumulative_bias: np.ndarray
    delta_mirror: np.ndarray  # twin of the defender's error-state correction
    mirror_reset: bool = False  # defender folds corrections into its nominal state

    def __post_init__(self):
        for name in ("x_hat_a", "x_hat_a_plus", "cumulative_bias", "delta_mirror"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))


def sync_attacker(defender_estimate: np.ndarray, defender_delta: np.ndarray,
                  reset_mode: bool = False) -> AttackerState:
    """Initialize the twin from a one-time white-box read of the filter state."""
    est = np.asarray(defender_estimate, dtype=float)
    delta = np.asarray(defender_delta, dtype=float)
    return AttackerState(x_hat_a=est.copy(), x_hat_a_plus=est.copy(),
                         cumulative_bias=np.zeros_like(est),
                         delta_mirror=delta.copy(), mirror_reset=reset_mode)


def attacker_step(state: AttackerState, model: SystemModel, gain: FeedbackGain,
                  plan: AttackPlan, k: int, x_goal: np.ndarray,
                  rng: np.random.Generator,
                  u_limit: float | None = 0.5) -> AttackerState:
    """Propagate the twin one step with the nominal control law.

    The twin replicates the defender's predict step: the deceived estimate is
    pushed through the plant model with the same (saturated) control law, the
    attacker's own noise guess, and the error-state carry term that the
    defender's split propagation produces. Requires k inside the plan window.
    """
    if not plan.in_window(k):
        raise ParameterError(f"step {k} outside attack window "
                             f"[{plan.start_step}, {plan.end_step}]")
    u_a = nominal_input(gain, state.x_hat_a_plus, x_goal, u_limit)
    w_a = sample_process_noise(model.noise_radius * plan.noise_scale, model.n_x, rng)
    carry = (np.eye(model.n_x) - model.A) @ state.delta_mirror
    pred = model.A @ state.x_hat_a_plus + model.B @ u_a + w_a + carry
    return replace(state, x_hat_a=pred)


def _beta_scale(gap: np.ndarray, iota: np.ndarray, beta: float) -> float:
    """Smallest s >= 1 with ||gap + s * iota||_inf >= beta."""
    if np.max(np.abs(gap + iota)) >= beta:
        return 1.0
    best = np.inf
    for g, i in zip(gap, iota):
        if abs(i) < 1e-15:
            continue
        s = (beta - g * np.sign(i)) / abs(i)
        best = min(best, max(1.0, s))
    if not np.isfinite(best):
        raise AttackInfeasibleError("cannot reach the intolerance magnitude: "
                                    "zero injection direction")
    s = best * (1.0 + 1e-12)
    # Guard against rounding leaving the norm a hair short.
    for _ in range(100):
        if np.max(np.abs(gap + s * iota)) >= beta:
            return s
        s *= 1.0 + 1e-9
    return s


def craft_injection(state: AttackerState, k_gain: np.ndarray, plan: AttackPlan,
                    cfg: DetectorConfig, y_star: np.ndarray, H: np.ndarray,
                    k: int) -> tuple[np.ndarray, AttackerState]:
    """Craft the attack vector for step k and update the deceived twin.

    Solves for the innovation whose gain image matches the planned bias on the
    targeted residual rows (least squares through the gain restricted to the
    plan's channels), replaces the true measurement with the twin's predicted
    one plus that innovation, and scales the first injection up if needed so
    its infinity norm reaches the plan's intolerance magnitude.
    """
    target = deception_target(plan, k, cfg)
    rows = list(plan.target_rows)
    cols = list(plan.channels)
    K_sub = k_gain[np.ix_(rows, cols)]
    svals = np.linalg.svd(K_sub, compute_uv=False)
    if svals.size == 0 or svals[0] < 1e-12 or svals[-1] < 1e-10 * svals[0]:
        raise AttackInfeasibleError(
            f"gain block for rows {rows} / channels {cols} is rank deficient")
    iota = np.zeros(y_star.shape[0])
    iota[cols] = np.linalg.lstsq(K_sub, target[rows], rcond=None)[0]

    gap = H @ state.x_hat_a - y_star
    if k == plan.start_step:
        iota = iota * _beta_scale(gap, iota, plan.beta_target)
    delta_y = gap + iota

    r_induced = k_gain @ iota
    assert np.all(np.abs(r_induced) <= cfg.T * (1.0 + 1e-9)), \
        "planned deception exceeds the stealth envelope"

    deceived = state.x_hat_a + r_induced
    delta_mirror = (state.delta_mirror if state.mirror_reset
                    else state.delta_mirror + r_induced)
    new_state = replace(
        state,
        x_hat_a_plus=deceived,
        cumulative_bias=state.cumulative_bias + r_induced,
        delta_mirror=delta_mirror,
    )
    return delta_y, new_state
