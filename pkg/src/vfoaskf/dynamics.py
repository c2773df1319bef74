"""Linear-Gaussian building blocks of the state-space model.

The per-person latent state is the 8-vector

    L = [gaze(2), gaze velocity(2), reference(2), reference velocity(2)]

in degrees and degrees/frame. The observed head direction is emitted
around a convex combination of gaze and reference,

    H ~ N(alpha * G + (I - alpha) * R, Sigma_H),

and, per focus hypothesis j, the gaze block either follows a constant
velocity random walk (j = 0) or is additionally pulled toward the
person-to-target direction at rate (I - beta). The reference block is
always a constant-velocity random walk. All dynamics run in frame
units (dt = 1); a recording's real frame period is metadata.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .geometry import Direction, Position3D, direction_from_points, wrap_delta
from .scene import NO_TARGET, Scene

__all__ = [
    "GAZE",
    "GAZE_VEL",
    "REF",
    "REF_VEL",
    "STATE_DIM",
    "ModelParams",
    "SingularCovarianceError",
    "emission_matrix",
    "floor_spd",
    "gaussian_logpdf",
    "predictive_obs_likelihood",
    "predictive_obs_loglik",
    "process_noise",
    "symmetrize",
    "system_from_target",
    "target_direction",
    "transition_system",
]

STATE_DIM = 8
OBS_DIM = 2

#: Block slices of the stacked state vector.
GAZE = slice(0, 2)
GAZE_VEL = slice(2, 4)
REF = slice(4, 6)
REF_VEL = slice(6, 8)

#: Condition number beyond which a covariance is treated as singular.
MAX_CONDITION = 1e12

#: Smallest eigenvalue kept by :func:`floor_spd`.
EIGENVALUE_FLOOR = 1e-9

_LOG_2PI = math.log(2.0 * math.pi)


class SingularCovarianceError(np.linalg.LinAlgError):
    """A covariance matrix is numerically singular."""


def symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def floor_spd(mat: np.ndarray, floor: float = EIGENVALUE_FLOOR) -> np.ndarray:
    """Symmetrize and clip eigenvalues from below; numerical hygiene
    for covariances updated over long recordings."""
    sym = symmetrize(np.asarray(mat, dtype=float))
    eigval, eigvec = np.linalg.eigh(sym)
    if eigval[0] >= floor:
        return sym
    return (eigvec * np.maximum(eigval, floor)) @ eigvec.T


def _check_spd(name: str, mat: np.ndarray) -> np.ndarray:
    arr = np.asarray(mat, dtype=float)
    if arr.shape != (2, 2):
        raise ValueError(f"{name} must be 2x2, got shape {arr.shape}")
    if not np.allclose(arr, arr.T, atol=1e-10):
        raise ValueError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(arr)[0] <= 0.0:
        raise ValueError(f"{name} is not positive definite")
    return arr.copy()


def _check_mixing(name: str, diag: Sequence[float]) -> np.ndarray:
    arr = np.asarray(diag, dtype=float)
    if arr.shape != (2,):
        raise ValueError(f"{name} must hold two diagonal entries, got shape {arr.shape}")
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError(f"{name} entries must lie strictly inside (0, 1), got {arr}")
    return arr.copy()


@dataclass(frozen=True)
class ModelParams:
    """All Gaussian model parameters.

    alpha, beta: diagonals of the 2x2 mixing matrices.
    gamma_g, gamma_gdot, gamma_r, gamma_rdot: 2x2 process-noise blocks
    (degrees^2), stacked block-diagonally into the 8x8 state noise.
    sigma_h: 2x2 head-observation noise (degrees^2).
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma_g: np.ndarray
    gamma_gdot: np.ndarray
    gamma_r: np.ndarray
    gamma_rdot: np.ndarray
    sigma_h: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", _check_mixing("alpha", self.alpha))
        object.__setattr__(self, "beta", _check_mixing("beta", self.beta))
        for name in ("gamma_g", "gamma_gdot", "gamma_r", "gamma_rdot", "sigma_h"):
            object.__setattr__(self, name, _check_spd(name, getattr(self, name)))
        if np.trace(self.gamma_g) <= np.trace(self.gamma_r):
            # Advisory: gaze is expected to vary much more than the
            # reference orientation; checked but never enforced.
            warnings.warn(
                f"tr(gamma_g)={np.trace(self.gamma_g):.3g} <= tr(gamma_r)={np.trace(self.gamma_r):.3g}; "
                "gaze variance is expected to dominate the reference variance",
                stacklevel=2,
            )

    @property
    def gamma_l(self) -> np.ndarray:
        """The 8x8 block-diagonal process noise."""
        return process_noise(self.gamma_g, self.gamma_gdot, self.gamma_r, self.gamma_rdot)

    @classmethod
    def defaults(cls) -> "ModelParams":
        """Standard initialization: alpha = beta = diag(0.5, 0.5) and
        isotropic covariances sigma_h = 15 I, gamma_g = gamma_gdot = 5 I,
        gamma_r = gamma_rdot = 0.5 I."""
        eye = np.eye(2)
        return cls(
            alpha=np.array([0.5, 0.5]),
            beta=np.array([0.5, 0.5]),
            gamma_g=5.0 * eye,
            gamma_gdot=5.0 * eye,
            gamma_r=0.5 * eye,
            gamma_rdot=0.5 * eye,
            sigma_h=15.0 * eye,
        )

    def replace(self, **kwargs) -> "ModelParams":
        data = {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma_g": self.gamma_g,
            "gamma_gdot": self.gamma_gdot,
            "gamma_r": self.gamma_r,
            "gamma_rdot": self.gamma_rdot,
            "sigma_h": self.sigma_h,
        }
        data.update(kwargs)
        return ModelParams(**data)

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "gamma_G": self.gamma_g.tolist(),
            "gamma_Gdot": self.gamma_gdot.tolist(),
            "gamma_R": self.gamma_r.tolist(),
            "gamma_Rdot": self.gamma_rdot.tolist(),
            "sigma_H": self.sigma_h.tolist(),
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "ModelParams":
        keys = ("alpha", "beta", "gamma_G", "gamma_Gdot", "gamma_R", "gamma_Rdot", "sigma_H")
        missing = [k for k in keys if k not in data]
        if missing:
            raise ValueError(f"parameter file is missing fields: {missing}")
        return cls(
            alpha=np.asarray(data["alpha"], dtype=float),
            beta=np.asarray(data["beta"], dtype=float),
            gamma_g=np.asarray(data["gamma_G"], dtype=float),
            gamma_gdot=np.asarray(data["gamma_Gdot"], dtype=float),
            gamma_r=np.asarray(data["gamma_R"], dtype=float),
            gamma_rdot=np.asarray(data["gamma_Rdot"], dtype=float),
            sigma_h=np.asarray(data["sigma_H"], dtype=float),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ModelParams":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def emission_matrix(alpha: Sequence[float]) -> np.ndarray:
    """The 2x8 matrix C with C @ L = alpha * G + (I - alpha) * R."""
    a = np.asarray(alpha, dtype=float)
    C = np.zeros((OBS_DIM, STATE_DIM))
    C[0, 0] = a[0]
    C[1, 1] = a[1]
    C[0, 4] = 1.0 - a[0]
    C[1, 5] = 1.0 - a[1]
    return C


def process_noise(
    gamma_g: np.ndarray,
    gamma_gdot: np.ndarray,
    gamma_r: np.ndarray,
    gamma_rdot: np.ndarray,
) -> np.ndarray:
    """Assemble the 8x8 block-diagonal state noise; off-blocks are zero."""
    out = np.zeros((STATE_DIM, STATE_DIM))
    for sl, block in ((GAZE, gamma_g), (GAZE_VEL, gamma_gdot), (REF, gamma_r), (REF_VEL, gamma_rdot)):
        out[sl, sl] = _check_spd("process noise block", block)
    return out


def target_direction(
    scene: Scene,
    i: int,
    j: int,
    positions: Mapping[int, Position3D],
    ref: Optional[Sequence[float]] = None,
) -> Optional[np.ndarray]:
    """Person-to-target (pan, tilt), or None for the no-target label.

    When ``ref`` is given (a (pan, tilt) pair), the direction is moved
    to the branch nearest ``ref``: the pull it feeds is a residual and
    must not jump across the +/-180 seam while the state is unwrapped.
    """
    if j == NO_TARGET:
        return None
    x = direction_from_points(positions[i], positions[j]).as_array()
    if ref is None:
        return x
    r = np.asarray(ref, dtype=float)
    return np.array([r[0] + wrap_delta(x[0], r[0]), r[1] + wrap_delta(x[1], r[1])])


def system_from_target(
    beta: Sequence[float], target: Optional[np.ndarray], dt: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Assemble (A, b) from an already branch-adjusted target direction."""
    A = np.eye(STATE_DIM)
    A[0, 2] = dt
    A[1, 3] = dt
    A[4, 6] = dt
    A[5, 7] = dt
    b = np.zeros(STATE_DIM)
    if target is None:
        return A, b
    b_diag = np.asarray(beta, dtype=float)
    A[0, 0] = b_diag[0]
    A[1, 1] = b_diag[1]
    b[0] = (1.0 - b_diag[0]) * target[0]
    b[1] = (1.0 - b_diag[1]) * target[1]
    return A, b


def transition_system(
    scene: Scene,
    i: int,
    j: int,
    beta: Sequence[float],
    positions: Mapping[int, Position3D],
    dt: float = 1.0,
    ref: Optional[Sequence[float]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Transition matrix A and offset b of person i under hypothesis j.

    For j = 0 the gaze block keeps its constant-velocity random walk
    (A gaze block = I, b = 0); otherwise the gaze is pulled toward the
    direction from i to target j at rate (I - beta).
    """
    return system_from_target(beta, target_direction(scene, i, j, positions, ref), dt)


def _as_angles(direction: Union[Direction, Sequence[float]]) -> np.ndarray:
    if isinstance(direction, Direction):
        return direction.as_array()
    arr = np.asarray(direction, dtype=float)
    if arr.shape != (2,):
        raise ValueError(f"expected a (pan, tilt) pair, got shape {arr.shape}")
    return arr


def gaussian_logpdf(x: Union[Direction, Sequence[float]], mean: Sequence[float], cov: np.ndarray) -> float:
    """Bivariate normal log-density of the wrapped residual x - mean."""
    xv = _as_angles(x)
    mv = np.asarray(mean, dtype=float)
    cv = np.asarray(cov, dtype=float)
    if np.linalg.cond(cv) > MAX_CONDITION:
        raise SingularCovarianceError(f"covariance is numerically singular: {cv}")
    resid = np.array([wrap_delta(xv[0], mv[0]), wrap_delta(xv[1], mv[1])])
    sign, logdet = np.linalg.slogdet(cv)
    if sign <= 0:
        raise SingularCovarianceError(f"covariance is not positive definite: {cv}")
    maha = float(resid @ np.linalg.solve(cv, resid))
    return -0.5 * (2.0 * _LOG_2PI + logdet + maha)


def predictive_obs_loglik(
    mu_prev: np.ndarray,
    cov_prev: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    C: np.ndarray,
    gamma_l: np.ndarray,
    sigma_h: np.ndarray,
    obs: Union[Direction, Sequence[float]],
) -> float:
    """Log of the closed-form predictive density of one head observation.

    Integrating the latent state out of emission and transition leaves
    N(H; C(A mu + b), C(A P A^T + Gamma_L)C^T + Sigma_H).
    """
    mean = C @ (A @ mu_prev + b)
    pred_cov = A @ cov_prev @ A.T + gamma_l
    cov = C @ pred_cov @ C.T + sigma_h
    return gaussian_logpdf(obs, mean, symmetrize(cov))


def predictive_obs_likelihood(
    mu_prev: np.ndarray,
    cov_prev: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    C: np.ndarray,
    gamma_l: np.ndarray,
    sigma_h: np.ndarray,
    obs: Union[Direction, Sequence[float]],
) -> float:
    """Density value of :func:`predictive_obs_loglik`."""
    return math.exp(predictive_obs_loglik(mu_prev, cov_prev, A, b, C, gamma_l, sigma_h, obs))
