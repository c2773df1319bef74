"""Online joint inference of focus labels and gaze directions.

Per tracked person the filtering posterior is a bank of Gaussians, one
per eligible focus label j, each with a weight c^{ij}, a state mean and
a covariance. One frame update expands every (previous label k, next
label j) pair with a constrained Kalman step, reweights the pairs with
the closed-form observation likelihood and the transition prior, and
collapses back to one Gaussian per j by moment matching. The gaze mean
is kept within a fixed angular distance of the observed head direction
(eyeball range), by projecting the mean only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .dynamics import (
    GAZE,
    ModelParams,
    STATE_DIM,
    emission_matrix,
    floor_spd,
    predictive_obs_loglik,
    symmetrize,
    transition_system,
)
from .geometry import Direction, Position3D, angular_distance, direction_from_points, wrap_angle, wrap_delta
from .scene import (
    FrameObservation,
    NO_TARGET,
    Recording,
    Scene,
    eligible_vfoa_labels,
    validate_recording,
)
from .transitions import TransitionTable, marginal_transition_prior

__all__ = [
    "MAX_GAZE_HEAD_DEG",
    "PersonBelief",
    "TrackResult",
    "TrackerState",
    "constrained_kf_step",
    "gaze_estimate",
    "initialize",
    "map_vfoa",
    "moment_match",
    "track",
    "update",
    "vfoa_from_gaze_geometric",
]

#: Eyeball range: the gaze mean is kept within this angle of the head.
MAX_GAZE_HEAD_DEG = 35.0


@dataclass
class PersonBelief:
    """Filtering state of one person: per eligible label j a weight,
    a state mean and a state covariance."""

    person: int
    labels: np.ndarray  # (K,) eligible labels, ascending
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, 8)
    covs: np.ndarray  # (K, 8, 8)

    def index_of(self, label: int) -> int:
        idx = int(np.searchsorted(self.labels, label))
        if idx >= len(self.labels) or self.labels[idx] != label:
            raise KeyError(f"label {label} not eligible for person {self.person}")
        return idx

    def map_label(self) -> int:
        # argmax returns the first maximum; labels ascend, so ties go
        # to the smaller label.
        return int(self.labels[int(np.argmax(self.weights))])


@dataclass
class TrackerState:
    """Beliefs of all tracked persons plus the cached focus
    distributions of untracked active targets (previous frame)."""

    scene: Scene
    beliefs: dict[int, PersonBelief]
    frame: int
    untracked_vfoa: dict[int, np.ndarray] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    converged: bool = True


def constrained_kf_step(
    mu_prev: np.ndarray,
    cov_prev: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    C: np.ndarray,
    gamma_l: np.ndarray,
    sigma_h: np.ndarray,
    obs,
    max_gaze_head_deg: float = MAX_GAZE_HEAD_DEG,
) -> tuple[np.ndarray, np.ndarray]:
    """One predict/update cycle followed by the gaze-range projection.

    The innovation is wrapped component-wise. If the posterior gaze
    mean ends up farther than ``max_gaze_head_deg`` from the observed
    head direction, it is moved along the segment toward the head until
    the distance is exactly the bound; the covariance is untouched.
    """
    h = obs.as_array() if isinstance(obs, Direction) else np.asarray(obs, dtype=float)
    m = A @ mu_prev + b
    P = symmetrize(A @ cov_prev @ A.T + gamma_l)
    S = C @ P @ C.T + sigma_h
    if np.linalg.cond(S) > 1e12:
        raise np.linalg.LinAlgError(f"singular innovation covariance: {S}")
    pred = C @ m
    innov = np.array([wrap_delta(h[0], pred[0]), wrap_delta(h[1], pred[1])])
    K = P @ C.T @ np.linalg.inv(S)
    mu = m + K @ innov
    cov = floor_spd((np.eye(STATE_DIM) - K @ C) @ P)
    # Project the gaze mean back into the feasible ball around h.
    dp = wrap_delta(mu[0], h[0])
    dtl = wrap_delta(mu[1], h[1])
    dist = float(np.hypot(dp, dtl))
    if dist > max_gaze_head_deg:
        shrink = 1.0 - max_gaze_head_deg / dist
        mu = mu.copy()
        mu[0] -= shrink * dp
        mu[1] -= shrink * dtl
    return mu, cov


def moment_match(
    weights: Sequence[float], means: np.ndarray, covs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Collapse a Gaussian mixture to the Gaussian with its exact
    mean and covariance."""
    w = np.asarray(weights, dtype=float)
    mu = w @ means
    diffs = means - mu
    cov = np.einsum("k,kab->ab", w, covs) + np.einsum("k,ka,kb->ab", w, diffs, diffs)
    return mu, cov


def vfoa_from_gaze_geometric(
    gaze: Direction,
    positions: Mapping[int, Position3D],
    person: int,
    threshold_deg: float = 15.0,
) -> int:
    """Nearest target to a known gaze direction, or 0 beyond the threshold.

    Supplies focus labels for active targets whose gaze is known
    externally (e.g. a robot head read from its motors).
    """
    best_label = NO_TARGET
    best_dist = float("inf")
    for target_id, pos in positions.items():
        if target_id == person:
            continue
        d = angular_distance(gaze, direction_from_points(positions[person], pos))
        if d < best_dist:
            best_dist = d
            best_label = target_id
    return best_label if best_dist <= threshold_deg else NO_TARGET


def _untracked_distribution(scene: Scene, obs: FrameObservation, uid: int) -> Optional[np.ndarray]:
    """Point-mass focus distribution of an untracked active target."""
    labels = eligible_vfoa_labels(scene, uid)
    label = obs.vfoa.get(uid)
    if label is None and uid in obs.gaze:
        label = vfoa_from_gaze_geometric(obs.gaze[uid], obs.positions, uid)
    if label is None:
        return None
    dist = np.zeros(len(labels))
    dist[labels.index(label)] = 1.0
    return dist


def update(
    state: TrackerState,
    obs: FrameObservation,
    params: ModelParams,
    table: TransitionTable,
    max_gaze_head_deg: float = MAX_GAZE_HEAD_DEG,
) -> TrackerState:
    """Advance all beliefs by one frame; returns a new state.

    Weight arithmetic runs in log space; the per-person (j, k) weights
    are normalized jointly so the per-label weights sum to one by
    construction. The cross-person factor of the exact weight
    expression is constant in (j, k) and cancels in that normalization,
    so it is never computed. If every (j, k) weight of a person
    underflows to zero the previous belief is kept and the frame is
    flagged.
    """
    scene = state.scene
    C = emission_matrix(params.alpha)
    gamma_l = params.gamma_l
    sigma_h = params.sigma_h
    flags: list[str] = []

    prev_dists: dict[int, np.ndarray] = {}
    for a_id in scene.active_ids:
        if a_id in state.beliefs:
            prev_dists[a_id] = state.beliefs[a_id].weights
        elif a_id in state.untracked_vfoa:
            prev_dists[a_id] = state.untracked_vfoa[a_id]

    new_beliefs: dict[int, PersonBelief] = {}
    for i in scene.tracked_ids:
        belief = state.beliefs[i]
        labels = belief.labels
        K = len(labels)
        h = obs.head[i].as_array()
        log_c = np.full((K, K), -np.inf)
        means_jk = np.empty((K, K, STATE_DIM))
        covs_jk = np.empty((K, K, STATE_DIM, STATE_DIM))
        with np.errstate(divide="ignore"):
            log_prev = np.log(belief.weights)
        for j_idx, j in enumerate(labels):
            A, b = transition_system(scene, i, int(j), params.beta, obs.positions, ref=h)
            for k_idx, k in enumerate(labels):
                prior = marginal_transition_prior(table, scene, i, int(j), int(k), prev_dists.get(int(k)))
                loglike = predictive_obs_loglik(
                    belief.means[k_idx], belief.covs[k_idx], A, b, C, gamma_l, sigma_h, h
                )
                with np.errstate(divide="ignore"):
                    log_c[j_idx, k_idx] = loglike + log_prev[k_idx] + np.log(prior)
                means_jk[j_idx, k_idx], covs_jk[j_idx, k_idx] = constrained_kf_step(
                    belief.means[k_idx], belief.covs[k_idx], A, b, C, gamma_l, sigma_h, h,
                    max_gaze_head_deg,
                )
        peak = log_c.max()
        if not np.isfinite(peak):
            flags.append(f"frame {obs.frame}: person {i}: all hypothesis weights vanished; keeping previous belief")
            new_beliefs[i] = belief
            continue
        c = np.exp(log_c - peak)
        c /= c.sum()
        c_j = c.sum(axis=1)
        new_means = np.empty((K, STATE_DIM))
        new_covs = np.empty((K, STATE_DIM, STATE_DIM))
        for j_idx in range(K):
            if c_j[j_idx] > 0.0:
                w = c[j_idx] / c_j[j_idx]
            else:
                w = np.full(K, 1.0 / K)
            mu, cov = moment_match(w, means_jk[j_idx], covs_jk[j_idx])
            new_means[j_idx] = mu
            new_covs[j_idx] = floor_spd(cov)
        new_beliefs[i] = PersonBelief(i, labels, c_j, new_means, new_covs)

    new_untracked = dict(state.untracked_vfoa)
    for uid in scene.untracked_active_ids:
        dist = _untracked_distribution(scene, obs, uid)
        if dist is None:
            if uid not in new_untracked:
                raise ValueError(f"no focus information for untracked active target {uid}")
            flags.append(f"frame {obs.frame}: untracked target {uid} has no focus information; keeping previous")
        else:
            new_untracked[uid] = dist

    return TrackerState(
        scene=scene,
        beliefs=new_beliefs,
        frame=obs.frame,
        untracked_vfoa=new_untracked,
        flags=state.flags + flags,
        converged=state.converged,
    )


def initialize(
    scene: Scene,
    obs: FrameObservation,
    params: ModelParams,
    table: TransitionTable,
    tol: float = 1e-6,
    max_iter: int = 100,
    max_gaze_head_deg: float = MAX_GAZE_HEAD_DEG,
) -> TrackerState:
    """Steady-state initialization by repeated updates on the first frame.

    Beliefs are seeded with mean [H; 0; H; 0], unit covariance and
    uniform weights, then updated with the same observation until the
    largest weight change drops below ``tol`` (or ``max_iter`` is hit,
    which flags the returned state as unconverged).
    """
    beliefs: dict[int, PersonBelief] = {}
    for i in scene.tracked_ids:
        labels = np.array(eligible_vfoa_labels(scene, i), dtype=int)
        K = len(labels)
        h = obs.head[i].as_array()
        mu = np.concatenate([h, [0.0, 0.0], h, [0.0, 0.0]])
        beliefs[i] = PersonBelief(
            person=i,
            labels=labels,
            weights=np.full(K, 1.0 / K),
            means=np.tile(mu, (K, 1)),
            covs=np.tile(np.eye(STATE_DIM), (K, 1, 1)),
        )
    untracked: dict[int, np.ndarray] = {}
    for uid in scene.untracked_active_ids:
        dist = _untracked_distribution(scene, obs, uid)
        if dist is None:
            raise ValueError(f"first frame has no focus information for untracked active target {uid}")
        untracked[uid] = dist

    state = TrackerState(scene, beliefs, obs.frame, untracked, [], converged=False)
    for _ in range(max_iter):
        new_state = update(state, obs, params, table, max_gaze_head_deg)
        delta = max(
            float(np.max(np.abs(new_state.beliefs[i].weights - state.beliefs[i].weights)))
            for i in scene.tracked_ids
        )
        state = new_state
        if delta < tol:
            state.converged = True
            break
    if not state.converged:
        state.flags.append(f"initialization did not converge within {max_iter} iterations")
    return state


def map_vfoa(state: TrackerState) -> dict[int, int]:
    """Most probable focus label per person; ties go to the smaller label."""
    return {i: belief.map_label() for i, belief in state.beliefs.items()}


def gaze_estimate(state: TrackerState) -> dict[int, Direction]:
    """Gaze block of the most probable hypothesis, per person."""
    out = {}
    for i, belief in state.beliefs.items():
        g = belief.means[int(np.argmax(belief.weights))][GAZE]
        # Tilt cannot leave [-90, 90] here unless the head observations
        # themselves sit at the poles; clip defensively.
        out[i] = Direction(wrap_angle(float(g[0])), float(np.clip(g[1], -90.0, 90.0)))
    return out


@dataclass
class TrackResult:
    """Per-frame tracker outputs for one recording."""

    scene: Scene
    frames: np.ndarray  # (T,)
    labels: dict[int, np.ndarray]  # person -> eligible labels
    vfoa: dict[int, np.ndarray]  # person -> (T,)
    gaze: dict[int, np.ndarray]  # person -> (T, 2)
    weights: dict[int, np.ndarray]  # person -> (T, K)
    flags: list[str] = field(default_factory=list)

    @property
    def persons(self) -> tuple[int, ...]:
        return tuple(sorted(self.vfoa))


def track(
    recording: Recording,
    params: ModelParams,
    table: TransitionTable,
    tol: float = 1e-6,
    max_iter: int = 100,
    max_gaze_head_deg: float = MAX_GAZE_HEAD_DEG,
) -> TrackResult:
    """Run the full tracker over a recording.

    The first frame is handled by :func:`initialize`; every following
    frame by :func:`update`. Deterministic: identical inputs give
    byte-identical outputs.
    """
    problems = validate_recording(recording)
    if problems:
        preview = "\n  ".join(problems[:10])
        raise ValueError(f"recording failed validation ({len(problems)} problems):\n  {preview}")
    scene = recording.scene
    T = recording.n_frames
    persons = scene.tracked_ids
    frames_idx = np.arange(1, T + 1)
    labels = {i: np.array(eligible_vfoa_labels(scene, i), dtype=int) for i in persons}
    vfoa = {i: np.empty(T, dtype=int) for i in persons}
    gaze = {i: np.empty((T, 2)) for i in persons}
    weights = {i: np.empty((T, len(labels[i]))) for i in persons}

    state = initialize(scene, recording.frames[0], params, table, tol, max_iter, max_gaze_head_deg)
    for t in range(T):
        if t > 0:
            state = update(state, recording.frames[t], params, table, max_gaze_head_deg)
        labels_t = map_vfoa(state)
        gaze_t = gaze_estimate(state)
        for i in persons:
            vfoa[i][t] = labels_t[i]
            gaze[i][t] = gaze_t[i].as_array()
            weights[i][t] = state.beliefs[i].weights
    return TrackResult(scene, frames_idx, labels, vfoa, gaze, weights, list(state.flags))
