"""Discrete-time LTI plant model, bounded process noise, and the UAV testbed model.

The plant is x[k+1] = A x[k] + B u[k] + w[k] with a hard bound on the process
noise. Two bound conventions are supported: the default treats ``w_bar`` as a
bound on the Euclidean norm of w; the quadratic reading treats it as a bound
on w'w (radius sqrt(w_bar)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError


def _frozen_array(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SystemModel:
    """Plant matrices and noise bound for x[k+1] = A x[k] + B u[k] + w[k].

    A is n_x by n_x, B is n_x by n_u, and w_bar >= 0 bounds the process noise
    (see ``sample_process_noise`` for the bound convention).
    """

    A: np.ndarray
    B: np.ndarray
    w_bar: float
    quadratic_noise_bound: bool = False
    n_x: int = field(init=False)
    n_u: int = field(init=False)

    def __post_init__(self):
        A = _frozen_array(self.A)
        B = _frozen_array(self.B)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError("A", "(n_x, n_x)", A.shape)
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise DimensionError("B", f"({A.shape[0]}, n_u)", B.shape)
        if A.shape[0] < 1 or B.shape[1] < 1:
            raise ParameterError(f"need n_x >= 1 and n_u >= 1, got {A.shape[0]}, {B.shape[1]}")
        if not (self.w_bar >= 0.0):
            raise ParameterError(f"w_bar must be >= 0, got {self.w_bar}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "n_x", A.shape[0])
        object.__setattr__(self, "n_u", B.shape[1])

    @property
    def noise_radius(self) -> float:
        """Euclidean radius of the admissible noise set."""
        return float(np.sqrt(self.w_bar)) if self.quadratic_noise_bound else float(self.w_bar)


def _check_vector(name: str, v: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise DimensionError(name, (n,), v.shape)
    if not np.all(np.isfinite(v)):
        raise ParameterError(f"{name} contains non-finite entries")
    return v


def step_dynamics(model: SystemModel, x: np.ndarray, u: np.ndarray,
                  w: np.ndarray) -> np.ndarray:
    """Advance the plant one step: A x + B u + w."""
    x = _check_vector("x", x, model.n_x)
    u = _check_vector("u", u, model.n_u)
    w = _check_vector("w", w, model.n_x)
    return model.A @ x + model.B @ u + w


def sample_process_noise(w_bar: float, n: int, rng: np.random.Generator,
                         quadratic_bound: bool = False) -> np.ndarray:
    """Draw a bounded noise vector: uniform direction, uniform magnitude.

    The magnitude is uniform on [0, radius] where radius is w_bar under the
    norm-bound convention and sqrt(w_bar) under the quadratic one.
    """
    if w_bar < 0:
        raise ParameterError(f"w_bar must be >= 0, got {w_bar}")
    radius = float(np.sqrt(w_bar)) if quadratic_bound else float(w_bar)
    if radius == 0.0:
        return np.zeros(n)
    direction = rng.standard_normal(n)
    norm = np.linalg.norm(direction)
    while norm < 1e-12:  # essentially impossible; keeps the draw well-defined
        direction = rng.standard_normal(n)
        norm = np.linalg.norm(direction)
    magnitude = rng.uniform(0.0, radius)
    return (magnitude / norm) * direction


def build_uav_model(dt: float, w_bar: float = 0.01) -> SystemModel:
    """Six-state, three-input double integrator used by the UAV case study.

    State is [p_x, p_y, p_z, v_x, v_y, v_z] (m, m/s), input is acceleration
    (m/s^2), and A = [[I, dt I], [0, I]], B = [[dt^2/2 I], [dt I]].
    """
    if dt <= 0:
        raise ParameterError(f"dt must be > 0, got {dt}")
    eye3 = np.eye(3)
    A = np.block([[eye3, dt * eye3], [np.zeros((3, 3)), eye3]])
    B = np.vstack([0.5 * dt ** 2 * eye3, dt * eye3])
    return SystemModel(A=A, B=B, w_bar=w_bar)
