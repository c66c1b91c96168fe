"""State-residual detector: max-ratio statistic, mode rule, and threshold bound."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .lin_model import _frozen_array


class Mode(enum.Enum):
    NORMAL = "normal"
    SUSPECT = "suspect"
    ATTACKED = "attacked"


@dataclass(frozen=True)
class DetectorConfig:
    """Per-component residual thresholds T and the suspect threshold eta."""

    T: np.ndarray
    eta: float

    def __post_init__(self):
        T = _frozen_array(self.T)
        if T.ndim != 1:
            raise DimensionError("T", "(n_x,)", T.shape)
        if np.any(T <= 0):
            raise ParameterError("all threshold components must be > 0")
        if not (0.0 < self.eta < 1.0):
            raise ParameterError(f"eta must lie in (0, 1), got {self.eta}")
        object.__setattr__(self, "T", T)

    @property
    def T_bar(self) -> float:
        """Largest threshold component."""
        return float(np.max(self.T))


def statistic(r: np.ndarray, cfg: DetectorConfig) -> float:
    """max_i |r_i| / T_i."""
    r = np.asarray(r, dtype=float)
    if r.shape != cfg.T.shape:
        raise DimensionError("r", cfg.T.shape, r.shape)
    return float(np.max(np.abs(r) / cfg.T))


def in_normal_set(r: np.ndarray, cfg: DetectorConfig) -> bool:
    """True iff |r_i| <= T_i for every component (closed set)."""
    r = np.asarray(r, dtype=float)
    if r.shape != cfg.T.shape:
        raise DimensionError("r", cfg.T.shape, r.shape)
    return bool(np.all(np.abs(r) <= cfg.T))


def classify_mode(q: float, cfg: DetectorConfig) -> Mode:
    """Normal below eta, Suspect on [eta, 1), Attacked at or above 1.

    The alarm wins at q == 1 exactly, even though the normal-operation set is
    closed.
    """
    if q < 0:
        raise ParameterError(f"q must be >= 0, got {q}")
    if q >= 1.0:
        return Mode.ATTACKED
    if q >= cfg.eta:
        return Mode.SUSPECT
    return Mode.NORMAL


def suspect_threshold_bound(beta: float, K_inf: float, T_bar: float) -> float:
    """Largest admissible suspect threshold, (K_inf * beta - T_bar) / T_bar.

    May be non-positive; callers must check the result against (0, 1) before
    using it as a mode threshold.
    """
    if beta <= 0:
        raise ParameterError(f"beta must be > 0, got {beta}")
    if K_inf <= 0:
        raise ParameterError(f"K_inf must be > 0, got {K_inf}")
    if T_bar <= 0:
        raise ParameterError(f"T_bar must be > 0, got {T_bar}")
    return (K_inf * beta - T_bar) / T_bar
