"""Closed-loop episode orchestration and the bundled UAV/GNSS case study.

One episode wires together the plant, the tracking controller, the two-sensor
error-state filter, the residual detector with its three-mode rule, the
white-box attacker, and the suspect-mode machinery:

* every step the plant moves under the composite input (nominal plus shake),
  the dead-reckoning sensor propagates the nominal state, the position sensor
  measures (possibly corrupted), the filter predicts and, unless frozen,
  updates; the detector classifies the statistic;
* on a first entry into suspect classification the filter freezes and a shake
  sequence is generated once, then shifted forward each step;
* an alarm (statistic >= 1) latches the exposure flag, zeroes further shakes,
  and returns the loop to nominal control with updates resumed;
* if the window elapses without an alarm the loop returns to normal operation
  and may trigger again.

Everything is driven by a single seed; identical configurations replay
bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimator as est
from .adversary import (AttackerState, AttackPlan, attacker_step, craft_injection,
                        sync_attacker)
from .controller import (FeedbackGain, UesCertificate, certificate_holds,
                         certify_ues, closed_loop, nominal_input, saturate,
                         synthesize_feedback)
from .detector import DetectorConfig, Mode, classify_mode, statistic
from .errors import ConfigError, ExposureInfeasibleError, ParameterError
from .exposure import ExposureConfig, generate_shakes, shift_sequence
from .lin_model import SystemModel, build_uav_model, sample_process_noise, step_dynamics


@dataclass(frozen=True)
class AttackSpec:
    """Serializable attack plan for the UAV scenario.

    The suspicious sensor reports full position and velocity, so measurement
    channels coincide with state components; the default plan rides the x-axis
    pair (position channel 0, velocity channel 3).
    """

    start_step: int
    end_step: int
    intensity: float
    channels: tuple[int, ...] = (0, 3)
    beta_target: float = 0.05
    lure_steps: int = 12
    release_steps: int | None = None
    direction: float = 1.0
    noise_scale: float = 0.1

    def to_plan(self) -> AttackPlan:
        return AttackPlan(start_step=self.start_step, end_step=self.end_step,
                          intensity=self.intensity, channels=tuple(self.channels),
                          beta_target=self.beta_target,
                          target_rows=tuple(self.channels),
                          lure_steps=self.lure_steps, release_steps=self.release_steps,
                          direction=self.direction, noise_scale=self.noise_scale)


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one episode; the seed makes it a replayable run."""

    dt: float = 0.5
    n_steps: int = 260
    seed: int = 0
    # plant
    w_bar: float = 0.01
    quadratic_noise_bound: bool = False
    # controller
    ctrl_q_diag: tuple[float, ...] = (1.0, 1.0, 1.0, 8.0, 8.0, 8.0)
    ctrl_r_diag: tuple[float, ...] = (0.1, 0.1, 0.1)
    u_limit: float | None = 0.5
    # decay certificate used by the shake machinery (injectable)
    cert_c: float | None = 3.4157
    cert_rho: float | None = 0.5164
    cert_horizon: int = 200
    cert_rho_margin: float = 0.05
    # estimator (suspicious sensor reports position and velocity, H = I)
    qn_diag: tuple[float, ...] = (1e-5,) * 3 + (5e-5,) * 3
    rn_diag: tuple[float, ...] = (7e-4,) * 6
    p0_diag: tuple[float, ...] = (1e-4,) * 6
    v_bar: float = 0.001
    drift_rate: float = 1e-4
    reset_mode: bool = True
    # detector
    thresholds: tuple[float, ...] = (0.05,) * 6
    eta: float = 0.2
    # suspect-mode machinery
    exposure_enabled: bool = True
    k_exp: int = 10
    pred_horizon: int = 20
    u_bar: float = 0.087
    qw_diag: tuple[float, ...] = (10.0, 10.0, 10.0, 5.0, 5.0, 5.0)
    rw_diag: tuple[float, ...] = (1.0, 1.0, 1.0)
    eps_mask_max: float = 1e-3
    epsilon_tol: float = 0.7
    norm_convention: str = "unit"
    target_components: tuple[int, ...] = (0, 1, 2)
    force_suspect_at: int | None = None
    # refractory steps after an elapsed window, letting the filter absorb the
    # correction backlog before suspect classification may trigger again
    retrigger_cooldown: int = 5
    # attack (None = clean run)
    attack: AttackSpec | None = None
    # goal trajectory: propagated with the plant map, velocity overrides at steps
    goal_start: tuple[float, ...] = (0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
    goal_segments: tuple[tuple[int, tuple[float, ...]], ...] = ()

    def __post_init__(self):
        if self.n_steps < 2:
            raise ConfigError(f"n_steps must be >= 2, got {self.n_steps}")
        if self.attack is not None and self.attack.end_step >= self.n_steps:
            raise ConfigError("episode must outlast the attack window")


def build_goals(cfg: ScenarioConfig, model: SystemModel, n: int) -> np.ndarray:
    """Goal states for steps 0..n-1, consistent with the plant map."""
    goals = np.zeros((n, model.n_x))
    goals[0] = np.asarray(cfg.goal_start, dtype=float)
    overrides = {step: np.asarray(vel, dtype=float) for step, vel in cfg.goal_segments}
    vel_slice = slice(model.n_x - model.n_u, model.n_x)
    for k in range(1, n):
        goals[k] = model.A @ goals[k - 1]
        if k in overrides:
            goals[k][vel_slice] = overrides[k]
    return goals


@dataclass
class EpisodeTrace:
    """Per-step record of one episode (columnar arrays of length n_steps)."""

    dt: float
    k: np.ndarray
    x_true: np.ndarray
    x_hat: np.ndarray
    x_hat_a: np.ndarray
    x_goal: np.ndarray
    u_nominal: np.ndarray
    u_shake: np.ndarray
    y: np.ndarray
    delta_y: np.ndarray
    r: np.ndarray
    q: np.ndarray
    mode: np.ndarray
    frozen: np.ndarray
    attack_window: tuple[int, int] | None
    warnings: list[str] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return self.k.shape[0]


@dataclass(frozen=True)
class EpisodeSummary:
    """Outcome metrics of one episode."""

    exposed: bool
    exposure_latency: int | None
    false_alarm: bool
    max_true_deviation: float
    max_estimate_deviation: float
    tail_tracking_error: float
    alarm_statistic: float | None = None


def summarize(trace: EpisodeTrace) -> EpisodeSummary:
    """Pure fold over the trace records."""
    attacked = trace.mode == Mode.ATTACKED.value
    suspect = trace.mode == Mode.SUSPECT.value
    alarm_steps = np.flatnonzero(attacked)
    suspect_steps = np.flatnonzero(suspect | attacked)
    has_attack = trace.attack_window is not None

    latency = None
    alarm_statistic = None
    if alarm_steps.size:
        latency = int(alarm_steps[0] - suspect_steps[0])
        alarm_statistic = float(trace.q[alarm_steps[0]])

    dev_true = np.max(np.abs(trace.x_true - trace.x_goal), axis=1)
    dev_est = np.max(np.abs(trace.x_hat - trace.x_goal), axis=1)
    tail_start = trace.n_steps - max(1, math.ceil(0.2 * trace.n_steps))
    tail_err = np.linalg.norm(trace.x_true[tail_start:] - trace.x_goal[tail_start:],
                              axis=1)
    return EpisodeSummary(
        exposed=bool(alarm_steps.size) and has_attack,
        exposure_latency=latency,
        false_alarm=bool(alarm_steps.size) and not has_attack,
        max_true_deviation=float(np.max(dev_true)),
        max_estimate_deviation=float(np.max(dev_est)),
        tail_tracking_error=float(np.max(tail_err)),
        alarm_statistic=alarm_statistic,
    )


@dataclass(frozen=True)
class ScenarioParts:
    """Deterministic objects shared by every episode of a configuration."""

    model: SystemModel
    gain: FeedbackGain
    cert: UesCertificate
    detector_cfg: DetectorConfig
    exposure_cfg: ExposureConfig
    H: np.ndarray


def build_parts(cfg: ScenarioConfig) -> ScenarioParts:
    model = build_uav_model(cfg.dt, cfg.w_bar)
    if cfg.quadratic_noise_bound:
        model = replace(model, quadratic_noise_bound=True)
    gain = synthesize_feedback(model, np.diag(cfg.ctrl_q_diag), np.diag(cfg.ctrl_r_diag))
    A_cl = closed_loop(model, gain)
    if cfg.cert_c is not None and cfg.cert_rho is not None:
        cert = UesCertificate(c=cfg.cert_c, rho=cfg.cert_rho,
                              horizon_checked=cfg.cert_horizon)
        if not certificate_holds(A_cl, cert):
            raise ConfigError(
                f"injected certificate (c={cfg.cert_c}, rho={cfg.cert_rho}) "
                f"does not cover the synthesized closed loop")
    else:
        cert = certify_ues(A_cl, horizon=cfg.cert_horizon,
                           rho_margin=cfg.cert_rho_margin)
    detector_cfg = DetectorConfig(T=np.asarray(cfg.thresholds, dtype=float),
                                  eta=cfg.eta)
    exposure_cfg = ExposureConfig(
        k_exp=cfg.k_exp, horizon=cfg.pred_horizon, u_bar=cfg.u_bar,
        Q_w=np.diag(cfg.qw_diag), R_w=np.diag(cfg.rw_diag),
        eps_mask_max=cfg.eps_mask_max, epsilon_tol=cfg.epsilon_tol,
        norm_convention=cfg.norm_convention,
        target_components=cfg.target_components)
    H = np.eye(model.n_x)
    return ScenarioParts(model=model, gain=gain, cert=cert,
                         detector_cfg=detector_cfg, exposure_cfg=exposure_cfg, H=H)


def run_episode(cfg: ScenarioConfig,
                parts: ScenarioParts | None = None) -> tuple[EpisodeTrace, EpisodeSummary]:
    """Run one seeded episode and fold it into a summary."""
    parts = build_parts(cfg) if parts is None else parts
    model, gain, cert = parts.model, parts.gain, parts.cert
    det_cfg, exp_cfg, H = parts.detector_cfg, parts.exposure_cfg, parts.H
    n_x, n_u = model.n_x, model.n_u
    n = cfg.n_steps

    plan = cfg.attack.to_plan() if cfg.attack is not None else None
    n_y = parts.H.shape[0]
    goals = build_goals(cfg, model, n + cfg.pred_horizon + 2)
    drift = np.concatenate([np.zeros(n_u), cfg.dt * cfg.drift_rate * np.ones(n_u)])

    ss = np.random.SeedSequence(cfg.seed)
    rng_plant, rng_meas, rng_att, rng_mask = (np.random.default_rng(s)
                                              for s in ss.spawn(4))

    x_true = goals[0].copy()
    eskf = est.EskfState(x_nominal=x_true.copy(), delta_x_hat=np.zeros(n_x),
                         P=np.diag(cfg.p0_diag), Qn=np.diag(cfg.qn_diag),
                         Rn=np.diag(cfg.rn_diag), H=H,
                         reset_mode=cfg.reset_mode)
    attacker: AttackerState | None = None

    tr_x_true = np.zeros((n, n_x)); tr_x_hat = np.zeros((n, n_x))
    tr_x_hat_a = np.full((n, n_x), np.nan); tr_goal = np.zeros((n, n_x))
    tr_u_nom = np.zeros((n, n_u)); tr_u_shk = np.zeros((n, n_u))
    tr_y = np.zeros((n, n_y)); tr_dy = np.zeros((n, n_y))
    tr_r = np.zeros((n, n_x)); tr_q = np.zeros(n)
    tr_mode = np.full(n, Mode.NORMAL.value, dtype="<U8")
    tr_frozen = np.zeros(n, dtype=bool)
    warnings: list[str] = []

    tr_x_true[0] = x_true
    tr_x_hat[0] = est.fused_estimate(eskf)
    tr_goal[0] = goals[0]

    seq = None
    window_active = False
    window_left = 0
    cooldown = 0
    exposed_latch = False
    machinery_disabled = False
    force_done = False

    for k in range(n - 1):
        # inputs applied at step k, computed from the row-k estimate
        u_nom = nominal_input(gain, est.fused_estimate(eskf), goals[k], cfg.u_limit)
        u_shk = seq.shakes[0].copy() if (window_active and seq is not None) else np.zeros(n_u)
        u_app = saturate(u_nom + u_shk, cfg.u_limit)
        tr_u_nom[k] = u_nom
        tr_u_shk[k] = u_shk

        step = k + 1
        if plan is not None and plan.in_window(step) and attacker is None:
            attacker = sync_attacker(est.fused_estimate(eskf), eskf.delta_x_hat,
                                     reset_mode=cfg.reset_mode)

        w = sample_process_noise(model.noise_radius, n_x, rng_plant)
        x_true = step_dynamics(model, x_true, u_app, w)
        eskf = est.eskf_predict(eskf, model, u_app, drift)
        v = rng_meas.uniform(-cfg.v_bar, cfg.v_bar, size=n_y)
        y_star = H @ x_true + v

        if plan is not None and plan.in_window(step):
            attacker = attacker_step(attacker, model, gain, plan, step, goals[k],
                                     rng_att, cfg.u_limit)
            k_oracle = est.kalman_gain(eskf)
            delta_y, attacker = craft_injection(attacker, k_oracle, plan, det_cfg,
                                                y_star, H, step)
            y = y_star + delta_y
            tr_x_hat_a[step] = attacker.x_hat_a_plus
        else:
            delta_y = np.zeros(n_y)
            y = y_star

        frozen_now = eskf.frozen
        if frozen_now:
            report = est.detection_residual(eskf, y)
        else:
            eskf, report = est.eskf_update(eskf, y)
        q = statistic(report.r, det_cfg)
        mode = classify_mode(q, det_cfg)

        tr_x_true[step] = x_true
        tr_x_hat[step] = est.fused_estimate(eskf)
        tr_goal[step] = goals[step]
        tr_y[step] = y
        tr_dy[step] = delta_y
        tr_r[step] = report.r
        tr_q[step] = q
        tr_mode[step] = mode.value
        tr_frozen[step] = frozen_now

        # suspect-mode machinery
        if cfg.exposure_enabled and not exposed_latch and not machinery_disabled:
            if mode is Mode.ATTACKED:
                exposed_latch = True
                if window_active:
                    window_active = False
                    seq = None
                    eskf = est.unfreeze(eskf)
            elif window_active:
                window_left -= 1
                if window_left <= 0:
                    window_active = False
                    seq = None
                    eskf = est.unfreeze(eskf)
                    cooldown = cfg.retrigger_cooldown
                    warnings.append(
                        f"suspect window elapsed without exposure at step {step}")
                elif seq is not None:
                    seq = shift_sequence(seq, exp_cfg, rng_mask)
            else:
                if cooldown > 0:
                    cooldown -= 1
                forced = cfg.force_suspect_at == step and not force_done
                if cfg.force_suspect_at == step:
                    force_done = True
                if (mode is Mode.SUSPECT and cooldown == 0) or forced:
                    eskf = est.freeze(eskf)
                    try:
                        seq = generate_shakes(
                            exp_cfg, model, gain, cert, det_cfg,
                            est.fused_estimate(eskf),
                            goals[step:step + cfg.pred_horizon + 1], rng_mask)
                        window_active = True
                        window_left = cfg.k_exp
                    except ExposureInfeasibleError as exc:
                        eskf = est.unfreeze(eskf)
                        machinery_disabled = True
                        warnings.append(
                            f"shake generation infeasible at step {step}: {exc}")

    # the controller's action at the final recorded step (not applied)
    tr_u_nom[n - 1] = nominal_input(gain, est.fused_estimate(eskf), goals[n - 1],
                                    cfg.u_limit)

    trace = EpisodeTrace(
        dt=cfg.dt, k=np.arange(n), x_true=tr_x_true, x_hat=tr_x_hat,
        x_hat_a=tr_x_hat_a, x_goal=tr_goal, u_nominal=tr_u_nom,
        u_shake=tr_u_shk, y=tr_y, delta_y=tr_dy, r=tr_r, q=tr_q,
        mode=tr_mode, frozen=tr_frozen,
        attack_window=(plan.start_step, plan.end_step) if plan else None,
        warnings=warnings)
    return trace, summarize(trace)


def uav_scenario(attack: str | None = None, exposure_enabled: bool = True,
                 force_suspect_at: int | None = None, seed: int = 0,
                 **overrides) -> ScenarioConfig:
    """Bundled UAV/GNSS case study configuration.

    ``attack`` selects the bundled plan: "A" (moderate tampering, intensity
    0.6) or "B" (aggressive tampering, intensity 0.9), both riding the x-axis
    position channel inside the 30 s to 100 s window. ``None`` runs clean.
    """
    plans = {
        "A": AttackSpec(start_step=60, end_step=200, intensity=0.6,
                        channels=(0, 3), beta_target=0.05,
                        lure_steps=8, release_steps=8, direction=1.0),
        "B": AttackSpec(start_step=60, end_step=200, intensity=0.9,
                        channels=(0, 3), beta_target=0.05,
                        lure_steps=13, release_steps=13, direction=1.0),
    }
    if attack is not None and attack not in plans:
        raise ConfigError(f"unknown bundled attack {attack!r}; expected 'A' or 'B'")
    return ScenarioConfig(seed=seed, exposure_enabled=exposure_enabled,
                          force_suspect_at=force_suspect_at,
                          attack=plans[attack] if attack else None,
                          **overrides)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Plain-type representation suitable for YAML round-tripping."""
    d = {
        "dt": cfg.dt, "n_steps": cfg.n_steps, "seed": cfg.seed,
        "w_bar": cfg.w_bar, "quadratic_noise_bound": cfg.quadratic_noise_bound,
        "ctrl_q_diag": list(cfg.ctrl_q_diag), "ctrl_r_diag": list(cfg.ctrl_r_diag),
        "u_limit": cfg.u_limit,
        "cert_c": cfg.cert_c, "cert_rho": cfg.cert_rho,
        "cert_horizon": cfg.cert_horizon, "cert_rho_margin": cfg.cert_rho_margin,
        "qn_diag": list(cfg.qn_diag), "rn_diag": list(cfg.rn_diag),
        "p0_diag": list(cfg.p0_diag), "v_bar": cfg.v_bar,
        "drift_rate": cfg.drift_rate, "reset_mode": cfg.reset_mode,
        "thresholds": list(cfg.thresholds), "eta": cfg.eta,
        "exposure_enabled": cfg.exposure_enabled, "k_exp": cfg.k_exp,
        "pred_horizon": cfg.pred_horizon, "u_bar": cfg.u_bar,
        "qw_diag": list(cfg.qw_diag), "rw_diag": list(cfg.rw_diag),
        "eps_mask_max": cfg.eps_mask_max, "epsilon_tol": cfg.epsilon_tol,
        "norm_convention": cfg.norm_convention,
        "target_components": list(cfg.target_components),
        "force_suspect_at": cfg.force_suspect_at,
        "retrigger_cooldown": cfg.retrigger_cooldown,
        "goal_start": list(cfg.goal_start),
        "goal_segments": [[step, list(vel)] for step, vel in cfg.goal_segments],
        "attack": None,
    }
    if cfg.attack is not None:
        a = cfg.attack
        d["attack"] = {
            "start_step": a.start_step, "end_step": a.end_step,
            "intensity": a.intensity, "channels": list(a.channels),
            "beta_target": a.beta_target,
            "lure_steps": a.lure_steps, "release_steps": a.release_steps,
            "direction": a.direction, "noise_scale": a.noise_scale,
        }
    return d


def config_from_dict(d: dict) -> ScenarioConfig:
    """Inverse of ``config_to_dict``; raises ConfigError on unknown keys."""
    d = dict(d)
    attack_d = d.pop("attack", None)
    attack = None
    if attack_d is not None:
        try:
            attack = AttackSpec(
                start_step=int(attack_d["start_step"]),
                end_step=int(attack_d["end_step"]),
                intensity=float(attack_d["intensity"]),
                channels=tuple(int(c) for c in attack_d.get("channels", [0, 3])),
                beta_target=float(attack_d.get("beta_target", 0.05)),
                lure_steps=int(attack_d.get("lure_steps", 12)),
                release_steps=(None if attack_d.get("release_steps") is None
                               else int(attack_d["release_steps"])),
                direction=float(attack_d.get("direction", 1.0)),
                noise_scale=float(attack_d.get("noise_scale", 0.1)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad attack block: {exc}") from exc
    kwargs = {}
    tuple_keys = {"ctrl_q_diag", "ctrl_r_diag", "qn_diag", "rn_diag", "p0_diag",
                  "thresholds", "qw_diag", "rw_diag", "goal_start"}
    valid = {f.name for f in ScenarioConfig.__dataclass_fields__.values()}
    for key, value in d.items():
        if key not in valid:
            raise ConfigError(f"unknown configuration key {key!r}")
        if key in tuple_keys:
            kwargs[key] = tuple(float(v) for v in value)
        elif key == "target_components":
            kwargs[key] = tuple(int(v) for v in value)
        elif key == "goal_segments":
            kwargs[key] = tuple((int(step), tuple(float(v) for v in vel))
                                for step, vel in value)
        else:
            kwargs[key] = value
    try:
        return ScenarioConfig(attack=attack, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad configuration: {exc}") from exc


@dataclass
class BatchResult:
    summaries: list[EpisodeSummary]
    aggregates: dict


def run_batch(cfg: ScenarioConfig, n_seeds: int,
              parts: ScenarioParts | None = None) -> BatchResult:
    """Independent episodes on seeds cfg.seed .. cfg.seed + n_seeds - 1."""
    if n_seeds < 1:
        raise ParameterError(f"n_seeds must be >= 1, got {n_seeds}")
    parts = build_parts(cfg) if parts is None else parts
    summaries = [run_episode(replace(cfg, seed=cfg.seed + i), parts)[1]
                 for i in range(n_seeds)]
    latencies = [s.exposure_latency for s in summaries if s.exposure_latency is not None]
    aggregates = {
        "n_episodes": n_seeds,
        "exposure_rate": sum(s.exposed for s in summaries) / n_seeds,
        "false_alarm_rate": sum(s.false_alarm for s in summaries) / n_seeds,
        "latency_median": float(np.median(latencies)) if latencies else None,
        "latency_max": max(latencies) if latencies else None,
        "max_true_deviation_mean": float(np.mean([s.max_true_deviation for s in summaries])),
        "max_true_deviation_max": float(np.max([s.max_true_deviation for s in summaries])),
        "tail_tracking_error_max": float(np.max([s.tail_tracking_error for s in summaries])),
    }
    return BatchResult(summaries=summaries, aggregates=aggregates)
