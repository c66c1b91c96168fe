"""Simulation library for actively exposing stealthy sensor-deception attacks.

A plant tracked by a state-feedback controller fuses a reliable dead-reckoning
sensor with a spoofable position sensor through an error-state Kalman filter.
A residual detector classifies each step as normal, suspect, or attacked; in
suspect operation the loop freezes the spoofable correction and injects
randomized exposure shakes whose magnitude is chosen so that any white-box
deception attack is revealed within a fixed horizon while the closed-loop
deviation stays within a prescribed tolerance.
"""

__version__ = "0.1.0"

from .adversary import AttackerState, AttackPlan, attacker_step, craft_injection, sync_attacker
from .controller import (ErrorDynamics, FeedbackGain, UesCertificate, certificate_holds,
                         certify_ues, closed_loop, nominal_input, solve_dare,
                         synthesize_feedback)
from .detector import DetectorConfig, Mode, classify_mode, in_normal_set, statistic, suspect_threshold_bound
from .errors import (AttackExposureError, AttackInfeasibleError, CertificationError,
                     ConfigError, DimensionError, ExposureInfeasibleError,
                     FrozenUpdateError, ParameterError, SynthesisError)
from .estimator import (EskfState, ResidualReport, detection_residual, eskf_predict,
                        eskf_update, freeze, fused_estimate, kalman_gain,
                        steady_state_gain, unfreeze)
from .exposure import (BoundsParams, BoundsReport, ExposureConfig, ShakeSequence,
                       b_norm_value, compensability_upper_bound, epsilon_min,
                       exposure_constraint_met, exposure_lower_bound,
                       feasible_interval, generate_shakes, shift_sequence)
from .harness import (AttackSpec, BatchResult, EpisodeSummary, EpisodeTrace,
                      ScenarioConfig, build_parts, config_from_dict, config_to_dict,
                      run_batch, run_episode, summarize, uav_scenario)
from .lin_model import SystemModel, build_uav_model, sample_process_noise, step_dynamics

__all__ = [name for name in dir() if not name.startswith("_")]
