"""EM estimation of the Gaussian model parameters from annotated data.

With focus labels annotated, each person's latent trajectory follows a
time-varying linear-Gaussian model (the annotation fixes the per-frame
transition system), so the E-step is an exact forward-backward Kalman
smoother and the M-step has closed forms for the covariances plus one
2x2 linear solve each for the mixing diagonals alpha and beta.

The smoother is unconstrained: the gaze-range projection used during
tracking is an inference-time device and does not appear in the
learning equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import (
    GAZE,
    ModelParams,
    STATE_DIM,
    SingularCovarianceError,
    emission_matrix,
    floor_spd,
    symmetrize,
    system_from_target,
    target_direction,
)
from .geometry import wrap_delta
from .scene import NO_TARGET, Recording, RecordingSet, UNANNOTATED

__all__ = [
    "EMError",
    "EMResult",
    "SmootherInternals",
    "SmoothedMoments",
    "em_fit",
    "kalman_smoother",
    "m_step_covariances",
    "m_step_mixing",
]

_PRIOR_COV_SCALE = 100.0
_MIXING_MIN = 1e-3

_BLOCKS = (slice(0, 2), slice(2, 4), slice(4, 6), slice(6, 8))


class EMError(RuntimeError):
    """An EM iteration failed; the message names the iteration."""


@dataclass
class SmootherInternals:
    """Forward/backward internals of one smoothing pass."""

    filtered_means: np.ndarray  # (T, 8)
    filtered_covs: np.ndarray  # (T, 8, 8)
    predicted_means: np.ndarray  # (T, 8), index 0 = prior
    predicted_covs: np.ndarray  # (T, 8, 8)
    gains: np.ndarray  # (T, 8, 2)
    smoother_gains: np.ndarray  # (T-1, 8, 8)


@dataclass
class SmoothedMoments:
    """Posterior moments of one person's latent trajectory.

    ``cross_covs[t-1]`` is Cov(L_t, L_{t-1}); the raw expectations
    E[L_t], E[L_t L_t^T] and E[L_t L_{t-1}^T] are exposed through
    :meth:`second_moment` and :meth:`cross_moment`. ``obs`` holds the
    head observations re-branched next to the filter prediction so that
    downstream residuals never jump across the +/-180 seam, and
    ``target_dirs`` the branch-adjusted person-to-target directions
    driving each transition (NaN where the label was 0).
    """

    means: np.ndarray  # (T, 8)
    covs: np.ndarray  # (T, 8, 8)
    cross_covs: np.ndarray  # (T-1, 8, 8)
    obs: np.ndarray  # (T, 2)
    target_dirs: np.ndarray  # (T, 2), NaN rows for label 0
    vfoa: np.ndarray  # (T,)
    loglik: float
    internals: Optional[SmootherInternals] = None

    @property
    def n_frames(self) -> int:
        return self.means.shape[0]

    def second_moment(self, t: int) -> np.ndarray:
        """E[L_t L_t^T] (0-based t)."""
        return self.covs[t] + np.outer(self.means[t], self.means[t])

    def cross_moment(self, t: int) -> np.ndarray:
        """E[L_t L_{t-1}^T] (0-based t >= 1)."""
        return self.cross_covs[t - 1] + np.outer(self.means[t], self.means[t - 1])


def _logpdf_innovation(innov: np.ndarray, cov: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise SingularCovarianceError(f"innovation covariance not positive definite: {cov}")
    maha = float(innov @ np.linalg.solve(cov, innov))
    return -0.5 * (2.0 * np.log(2.0 * np.pi) + logdet + maha)


def kalman_smoother(
    rec: Recording,
    person: int,
    params: ModelParams,
    keep_internals: bool = False,
) -> SmoothedMoments:
    """Exact forward-backward smoothing under annotation-fixed dynamics.

    The person must be fully annotated; the per-frame transition system
    is selected by the annotated label of the destination frame. The
    observed-data log-likelihood accumulates the innovation densities
    of the forward pass.
    """
    ann = rec.annotations.get(person)
    if ann is None or np.any(ann == UNANNOTATED):
        raise ValueError(f"person {person} is not fully annotated")
    scene = rec.scene
    T = rec.n_frames
    C = emission_matrix(params.alpha)
    gamma_l = params.gamma_l
    sigma_h = params.sigma_h
    eye = np.eye(STATE_DIM)

    mu_f = np.empty((T, STATE_DIM))
    P_f = np.empty((T, STATE_DIM, STATE_DIM))
    mu_p = np.empty((T, STATE_DIM))
    P_p = np.empty((T, STATE_DIM, STATE_DIM))
    gains = np.empty((T, STATE_DIM, 2))
    A_all = np.empty((T, STATE_DIM, STATE_DIM))
    obs_adj = np.empty((T, 2))
    target_dirs = np.full((T, 2), np.nan)
    loglik = 0.0

    h1 = rec.frames[0].head[person].as_array()
    pred_mu = np.concatenate([h1, [0.0, 0.0], h1, [0.0, 0.0]])
    pred_cov = _PRIOR_COV_SCALE * eye
    for t in range(T):
        obs = rec.frames[t]
        h = obs.head[person].as_array()
        if t > 0:
            j = int(ann[t])
            target = target_direction(scene, person, j, obs.positions, ref=mu_f[t - 1][GAZE])
            A, b = system_from_target(params.beta, target)
            if target is not None:
                target_dirs[t] = target
            A_all[t] = A
            pred_mu = A @ mu_f[t - 1] + b
            pred_cov = symmetrize(A @ P_f[t - 1] @ A.T + gamma_l)
        mu_p[t] = pred_mu
        P_p[t] = pred_cov

        pred_obs = C @ pred_mu
        h_adj = pred_obs + np.array(
            [wrap_delta(h[0], pred_obs[0]), wrap_delta(h[1], pred_obs[1])]
        )
        obs_adj[t] = h_adj
        S = C @ pred_cov @ C.T + sigma_h
        if np.linalg.cond(S) > 1e12:
            raise SingularCovarianceError(f"singular innovation covariance at frame {t + 1}")
        innov = h_adj - pred_obs
        K = pred_cov @ C.T @ np.linalg.inv(S)
        gains[t] = K
        mu_f[t] = pred_mu + K @ innov
        P_f[t] = floor_spd((eye - K @ C) @ pred_cov)
        loglik += _logpdf_innovation(innov, S)

    mu_s = np.empty_like(mu_f)
    P_s = np.empty_like(P_f)
    J_all = np.empty((max(T - 1, 0), STATE_DIM, STATE_DIM))
    cross = np.empty((max(T - 1, 0), STATE_DIM, STATE_DIM))
    mu_s[T - 1] = mu_f[T - 1]
    P_s[T - 1] = P_f[T - 1]
    for t in range(T - 2, -1, -1):
        # J_t = P_t A_{t+1}^T P_{t+1|t}^{-1}, via a solve on the symmetric
        # predicted covariance.
        J = np.linalg.solve(P_p[t + 1], A_all[t + 1] @ P_f[t]).T
        J_all[t] = J
        mu_s[t] = mu_f[t] + J @ (mu_s[t + 1] - mu_p[t + 1])
        P_s[t] = floor_spd(P_f[t] + J @ (P_s[t + 1] - P_p[t + 1]) @ J.T)
        cross[t] = P_s[t + 1] @ J.T  # Cov(L_{t+1}, L_t)

    internals = None
    if keep_internals:
        internals = SmootherInternals(mu_f, P_f, mu_p, P_p, gains, J_all)
    return SmoothedMoments(
        means=mu_s,
        covs=P_s,
        cross_covs=cross,
        obs=obs_adj,
        target_dirs=target_dirs,
        vfoa=ann.copy(),
        loglik=loglik,
        internals=internals,
    )


def _transition_residual_sum(
    sm: SmoothedMoments, beta: np.ndarray, dt: float = 1.0
) -> np.ndarray:
    """Sum over t >= 2 of E[(L_t - A_t L_{t-1} - b_t)(...)^T].

    Evaluated in centered form (covariances plus small mean residuals)
    to avoid cancellation between huge raw second moments.
    """
    T = sm.n_frames
    total = np.zeros((STATE_DIM, STATE_DIM))
    if T < 2:
        return total
    dst = np.arange(1, T)
    for nonzero in (False, True):
        mask = (sm.vfoa[dst] != NO_TARGET) == nonzero
        if not np.any(mask):
            continue
        idx = dst[mask]
        A = np.eye(STATE_DIM)
        A[0, 2] = A[1, 3] = A[4, 6] = A[5, 7] = dt
        b_sel = np.zeros((len(idx), STATE_DIM))
        if nonzero:
            A[0, 0] = beta[0]
            A[1, 1] = beta[1]
            b_sel[:, 0] = (1.0 - beta[0]) * sm.target_dirs[idx, 0]
            b_sel[:, 1] = (1.0 - beta[1]) * sm.target_dirs[idx, 1]
        P_t = sm.covs[idx]
        P_prev = sm.covs[idx - 1]
        M = sm.cross_covs[idx - 1]  # Cov(L_t, L_{t-1})
        rbar = sm.means[idx] - sm.means[idx - 1] @ A.T - b_sel
        cov_part = (
            P_t.sum(axis=0)
            - np.einsum("tab,cb->ac", M, A)
            - np.einsum("ab,tcb->ac", A, M)
            + A @ P_prev.sum(axis=0) @ A.T
        )
        total += cov_part + rbar.T @ rbar
    return total


def m_step_covariances(
    moments: dict, params_old: ModelParams
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form covariance updates.

    Returns the 8x8 process noise (masked to its block-diagonal
    structure) and the 2x2 observation noise, both symmetrized and
    eigenvalue-floored. The expectations use the previous mixing
    parameters, the mixing update then uses the new covariances.
    """
    C = emission_matrix(params_old.alpha)
    num_gamma = np.zeros((STATE_DIM, STATE_DIM))
    num_sigma = np.zeros((2, 2))
    n_trans = 0
    n_obs = 0
    for sm in moments.values():
        T = sm.n_frames
        num_gamma += _transition_residual_sum(sm, params_old.beta)
        n_trans += max(T - 1, 0)
        resid = sm.obs - sm.means @ C.T
        num_sigma += np.einsum("ab,tbc,dc->ad", C, sm.covs, C) + resid.T @ resid
        n_obs += T
    if n_trans == 0:
        raise EMError("no transitions available to estimate the process noise")
    if n_obs == 0:
        raise EMError("no observations available to estimate the observation noise")
    gamma_full = num_gamma / n_trans
    gamma_masked = np.zeros_like(gamma_full)
    for sl in _BLOCKS:
        gamma_masked[sl, sl] = gamma_full[sl, sl]
    return floor_spd(gamma_masked), floor_spd(num_sigma / n_obs)


def m_step_mixing(
    moments: dict,
    gamma_l: np.ndarray,
    sigma_h: np.ndarray,
    params_old: ModelParams,
    dt: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Solve the two 2x2 stationarity systems for alpha and beta.

    A singular system keeps the previous value for that parameter and
    reports it in the returned flags. Solutions are clamped to
    [1e-3, 1 - 1e-3] per entry.
    """
    W = np.linalg.inv(gamma_l[0:2, 0:2])
    S = np.linalg.inv(sigma_h)
    mat_b = np.zeros((2, 2))
    rhs_b = np.zeros(2)
    mat_a = np.zeros((2, 2))
    rhs_a = np.zeros(2)
    for sm in moments.values():
        T = sm.n_frames
        mu = sm.means
        P = sm.covs

        # beta: only transitions into a nonzero label carry information.
        if T >= 2:
            dst = np.arange(1, T)
            idx = dst[sm.vfoa[dst] != NO_TARGET]
            if idx.size:
                x = sm.target_dirs[idx]
                mu_t = mu[idx]
                mu_prev = mu[idx - 1]
                P_prev = P[idx - 1]
                M = sm.cross_covs[idx - 1]
                mv = np.stack([mu_prev[:, 0] - x[:, 0], mu_prev[:, 1] - x[:, 1]], axis=1)
                mu_u = np.stack(
                    [
                        mu_t[:, 0] - dt * mu_prev[:, 2] - x[:, 0],
                        mu_t[:, 1] - dt * mu_prev[:, 3] - x[:, 1],
                    ],
                    axis=1,
                )
                e_vv = np.empty((2, 2))
                e_uv = np.empty((2, 2))  # e_uv[a, b] = sum E[u_a v_b]
                for a in range(2):
                    for bb in range(2):
                        e_vv[a, bb] = np.sum(P_prev[:, a, bb] + mv[:, a] * mv[:, bb])
                        cov_uv = M[:, a, bb] - dt * P_prev[:, a + 2, bb]
                        e_uv[a, bb] = np.sum(cov_uv + mu_u[:, a] * mv[:, bb])
                mat_b[0, 0] += W[0, 0] * e_vv[0, 0]
                mat_b[0, 1] += W[1, 0] * e_vv[1, 0]
                mat_b[1, 0] += W[0, 1] * e_vv[0, 1]
                mat_b[1, 1] += W[1, 1] * e_vv[1, 1]
                rhs_b[0] += W[0, 0] * e_uv[0, 0] + W[1, 0] * e_uv[1, 0]
                rhs_b[1] += W[0, 1] * e_uv[0, 1] + W[1, 1] * e_uv[1, 1]

        # alpha: every frame contributes.
        mb = np.stack([mu[:, 0] - mu[:, 4], mu[:, 1] - mu[:, 5]], axis=1)
        ma = np.stack([sm.obs[:, 0] - mu[:, 4], sm.obs[:, 1] - mu[:, 5]], axis=1)
        e_bb = np.empty((2, 2))
        e_ab = np.empty((2, 2))  # e_ab[a, b] = sum E[a_a b_b]
        for a in range(2):
            for bb in range(2):
                cov_bb = (
                    P[:, a, bb] - P[:, a, bb + 4] - P[:, a + 4, bb] + P[:, a + 4, bb + 4]
                )
                e_bb[a, bb] = np.sum(cov_bb + mb[:, a] * mb[:, bb])
                cov_ab = -P[:, a + 4, bb] + P[:, a + 4, bb + 4]
                e_ab[a, bb] = np.sum(cov_ab + ma[:, a] * mb[:, bb])
        mat_a[0, 0] += S[0, 0] * e_bb[0, 0]
        mat_a[0, 1] += S[1, 0] * e_bb[1, 0]
        mat_a[1, 0] += S[0, 1] * e_bb[0, 1]
        mat_a[1, 1] += S[1, 1] * e_bb[1, 1]
        rhs_a[0] += S[0, 0] * e_ab[0, 0] + S[1, 0] * e_ab[1, 0]
        rhs_a[1] += S[0, 1] * e_ab[0, 1] + S[1, 1] * e_ab[1, 1]

    flags: list[str] = []

    def _solve(mat: np.ndarray, rhs: np.ndarray, fallback: np.ndarray, name: str) -> np.ndarray:
        if np.linalg.cond(mat) > 1e12:
            flags.append(f"singular {name} system; keeping previous value")
            return fallback.copy()
        return np.clip(np.linalg.solve(mat, rhs), _MIXING_MIN, 1.0 - _MIXING_MIN)

    beta = _solve(mat_b, rhs_b, params_old.beta, "beta")
    alpha = _solve(mat_a, rhs_a, params_old.alpha, "alpha")
    return alpha, beta, flags


@dataclass
class EMResult:
    """Fitted parameters plus the log-likelihood trace."""

    params: ModelParams
    loglik_trace: list[float]
    converged: bool
    n_iterations: int
    flags: list[str] = field(default_factory=list)


def em_fit(
    data: RecordingSet,
    init: Optional[ModelParams] = None,
    max_iters: int = 50,
    tol: float = 1e-6,
) -> EMResult:
    """Alternate smoothing and the closed-form/linear M-steps.

    Stops when the relative log-likelihood improvement drops below
    ``tol`` or after ``max_iters``. The block masking of the process
    noise makes this a generalized EM step, so tiny transient
    decreases of the trace are possible; they stay well below any
    practical tolerance.
    """
    for rec in data.recordings:
        for person in rec.scene.tracked_ids:
            if not rec.is_fully_annotated(person):
                raise ValueError(f"person {person} is not fully annotated in some recording; EM needs full annotation")
    params = init if init is not None else ModelParams.defaults()
    trace: list[float] = []
    flags: list[str] = []
    converged = False
    iterations = 0

    def _e_step(p: ModelParams) -> tuple[dict, float]:
        moments = {}
        total = 0.0
        for q, rec in enumerate(data.recordings):
            for person in rec.scene.tracked_ids:
                try:
                    sm = kalman_smoother(rec, person, p)
                except Exception as exc:
                    raise EMError(
                        f"E-step failed at iteration {len(trace)} (recording {q}, person {person}): {exc}"
                    ) from exc
                moments[(q, person)] = sm
                total += sm.loglik
        return moments, total

    for it in range(max_iters):
        moments, ll = _e_step(params)
        trace.append(ll)
        iterations = it + 1
        if it > 0 and ll - trace[-2] < tol * abs(trace[-2]):
            converged = True
            break
        gamma_l, sigma_h = m_step_covariances(moments, params)
        alpha, beta, mix_flags = m_step_mixing(moments, gamma_l, sigma_h, params)
        flags.extend(mix_flags)
        params = ModelParams(
            alpha=alpha,
            beta=beta,
            gamma_g=gamma_l[0:2, 0:2],
            gamma_gdot=gamma_l[2:4, 2:4],
            gamma_r=gamma_l[4:6, 4:6],
            gamma_rdot=gamma_l[6:8, 6:8],
            sigma_h=sigma_h,
        )
    if not converged:
        # The last M-step result was never scored; complete the trace.
        _, ll = _e_step(params)
        trace.append(ll)
    return EMResult(params, trace, converged, iterations, flags)
