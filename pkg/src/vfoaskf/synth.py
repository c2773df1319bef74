"""Exact generative sampler of the tracking model.

Samples focus-label chains from the transition table, latent gaze and
reference trajectories from the linear-Gaussian dynamics, and head
observations from the emission model. Used as the ground-truth oracle
for inference and learning tests and by the simulate command.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .dynamics import ModelParams, STATE_DIM, emission_matrix, system_from_target, target_direction
from .geometry import Direction, Position3D, direction_from_points, wrap_angle
from .scene import FrameObservation, NO_TARGET, Recording, Scene, Target, eligible_vfoa_labels
from .transitions import TransitionTable, transition_prob

__all__ = [
    "SynthConfig",
    "SynthGroundTruth",
    "easy_scene_preset",
    "sample_recording",
    "sample_vfoa_chains",
]


@dataclass
class SynthConfig:
    """Everything needed to sample one recording.

    Positions are static unless ``position_paths`` supplies per-frame
    (T, 3) overrides. Untracked active targets need a scripted focus
    stream and/or gaze stream, exactly like real recordings do.
    """

    scene: Scene
    params: ModelParams
    table: TransitionTable
    frames: int
    seed: int
    positions: dict[int, Position3D]
    position_paths: Optional[dict[int, np.ndarray]] = None
    untracked_vfoa: Optional[dict[int, np.ndarray]] = None
    untracked_gaze: Optional[dict[int, np.ndarray]] = None
    dt_seconds: float = 0.04  # 25 fps metadata

    def __post_init__(self) -> None:
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")
        for tid in (t.id for t in self.scene.targets):
            if tid not in self.positions:
                raise ValueError(f"missing position for target {tid}")

    def positions_at(self, t: int) -> dict[int, Position3D]:
        """Target positions of frame t (0-based)."""
        if not self.position_paths:
            return self.positions
        out = dict(self.positions)
        for tid, path in self.position_paths.items():
            out[tid] = Position3D(*path[t])
        return out


@dataclass
class SynthGroundTruth:
    """Latent truth of a sampled recording."""

    vfoa: dict[int, np.ndarray]  # person -> (T,)
    latent: dict[int, np.ndarray]  # person -> (T, 8)

    def gaze(self, person: int) -> np.ndarray:
        return self.latent[person][:, 0:2]


def _untracked_streams(cfg: SynthConfig) -> dict[int, np.ndarray]:
    """Focus-label streams of the untracked active targets."""
    from .tracker import vfoa_from_gaze_geometric  # local import: synth feeds the tracker's tests

    scene = cfg.scene
    streams: dict[int, np.ndarray] = {}
    for uid in scene.untracked_active_ids:
        if cfg.untracked_vfoa and uid in cfg.untracked_vfoa:
            streams[uid] = np.asarray(cfg.untracked_vfoa[uid], dtype=np.int64)
            if streams[uid].shape != (cfg.frames,):
                raise ValueError(f"focus stream for target {uid} must have length {cfg.frames}")
        elif cfg.untracked_gaze and uid in cfg.untracked_gaze:
            gaze = np.asarray(cfg.untracked_gaze[uid], dtype=float)
            labels = np.empty(cfg.frames, dtype=np.int64)
            for t in range(cfg.frames):
                d = Direction(wrap_angle(gaze[t, 0]), float(np.clip(gaze[t, 1], -90, 90)))
                labels[t] = vfoa_from_gaze_geometric(d, cfg.positions_at(t), uid)
            streams[uid] = labels
        else:
            raise ValueError(f"untracked active target {uid} needs a scripted focus or gaze stream")
    return streams


def sample_vfoa_chains(
    scene: Scene,
    table: TransitionTable,
    frames: int,
    rng: np.random.Generator,
    untracked: Optional[Mapping[int, np.ndarray]] = None,
) -> dict[int, np.ndarray]:
    """Sample joint focus chains for all tracked persons.

    The first frame is uniform over each person's eligible labels;
    later frames follow the per-label transition probabilities, with
    active-target conditioning read from the previous frame of the
    other chains (tracked or scripted).
    """
    untracked = dict(untracked or {})
    tracked = scene.tracked_ids
    labels_of = {i: np.array(eligible_vfoa_labels(scene, i), dtype=np.int64) for i in tracked}
    chains = {i: np.empty(frames, dtype=np.int64) for i in tracked}

    prev: dict[int, int] = {}
    for i in tracked:
        chains[i][0] = rng.choice(labels_of[i])
        prev[i] = int(chains[i][0])
    for uid, stream in untracked.items():
        prev[uid] = int(stream[0])

    # Per (person, k, l) cumulative distributions, built lazily.
    cumdist: dict[tuple[int, int, int], np.ndarray] = {}

    def _cum(i: int, k: int, l: int) -> np.ndarray:
        key = (i, k, l)
        cached = cumdist.get(key)
        if cached is None:
            probs = [
                transition_prob(table, scene, i, int(j), k, l if scene.is_active(k) else None)
                for j in labels_of[i]
            ]
            cached = np.cumsum(probs)
            cumdist[key] = cached
        return cached

    u = rng.random((frames, len(tracked)))
    for t in range(1, frames):
        current: dict[int, int] = {}
        for col, i in enumerate(tracked):
            k = prev[i]
            l = prev.get(k, -1) if scene.is_active(k) else -1
            cum = _cum(i, k, l)
            idx = int(np.searchsorted(cum, u[t, col] * cum[-1], side="right"))
            idx = min(idx, len(cum) - 1)
            label = int(labels_of[i][idx])
            chains[i][t] = label
            current[i] = label
        prev.update(current)
        for uid, stream in untracked.items():
            prev[uid] = int(stream[t])
    return chains


def _scene_center_direction(cfg: SynthConfig, person: int) -> np.ndarray:
    """Direction from a person to the centroid of the other targets."""
    others = [cfg.positions[t.id].as_array() for t in cfg.scene.targets if t.id != person]
    center = np.mean(others, axis=0)
    return direction_from_points(cfg.positions[person], Position3D(*center)).as_array()


def sample_recording(cfg: SynthConfig) -> tuple[Recording, SynthGroundTruth]:
    """Draw one full recording plus its latent ground truth.

    Deterministic given the seed. Gaze and reference start on the
    direction of the initially sampled focus target (scene centroid for
    label 0) with zero velocities. Observed head tilts are clipped to
    the physical [-90, 90] range; a warning is raised if that ever
    happens on more than 0.1% of the frames.
    """
    scene = cfg.scene
    T = cfg.frames
    rng = np.random.default_rng(cfg.seed)
    untracked = _untracked_streams(cfg)
    chains = sample_vfoa_chains(scene, cfg.table, T, rng, untracked)

    C = emission_matrix(cfg.params.alpha)
    chol_blocks = [
        np.linalg.cholesky(block)
        for block in (cfg.params.gamma_g, cfg.params.gamma_gdot, cfg.params.gamma_r, cfg.params.gamma_rdot)
    ]
    chol_h = np.linalg.cholesky(cfg.params.sigma_h)

    latent: dict[int, np.ndarray] = {}
    heads: dict[int, np.ndarray] = {}
    clipped = 0
    for person in scene.tracked_ids:
        L = np.empty((T, STATE_DIM))
        noise = rng.standard_normal((T, STATE_DIM))
        for blk, chol in enumerate(chol_blocks):
            noise[:, 2 * blk : 2 * blk + 2] = noise[:, 2 * blk : 2 * blk + 2] @ chol.T
        h_noise = rng.standard_normal((T, 2)) @ chol_h.T

        v1 = int(chains[person][0])
        if v1 == NO_TARGET:
            g1 = _scene_center_direction(cfg, person)
        else:
            g1 = direction_from_points(cfg.positions_at(0)[person], cfg.positions_at(0)[v1]).as_array()
        L[0] = np.concatenate([g1, [0.0, 0.0], g1, [0.0, 0.0]])
        for t in range(1, T):
            positions = cfg.positions_at(t)
            target = target_direction(scene, person, int(chains[person][t]), positions, ref=L[t - 1][0:2])
            A, b = system_from_target(cfg.params.beta, target)
            L[t] = A @ L[t - 1] + b + noise[t]
        latent[person] = L
        H = L @ C.T + h_noise
        over = np.abs(H[:, 1]) > 90.0
        clipped += int(over.sum())
        H[:, 1] = np.clip(H[:, 1], -90.0, 90.0)
        heads[person] = H
    if clipped > 0.001 * T * max(len(scene.tracked_ids), 1):
        warnings.warn(
            f"{clipped} head tilts clipped to [-90, 90]; the sampled dynamics drift beyond physical range",
            stacklevel=2,
        )

    frames = []
    for t in range(T):
        positions = cfg.positions_at(t)
        head = {
            person: Direction(wrap_angle(heads[person][t, 0]), heads[person][t, 1])
            for person in scene.tracked_ids
        }
        gaze = {}
        vfoa = {}
        for uid in scene.untracked_active_ids:
            vfoa[uid] = int(untracked[uid][t])
            if cfg.untracked_gaze and uid in cfg.untracked_gaze:
                g = cfg.untracked_gaze[uid][t]
                gaze[uid] = Direction(wrap_angle(float(g[0])), float(np.clip(g[1], -90, 90)))
            elif vfoa[uid] != NO_TARGET:
                gaze[uid] = direction_from_points(positions[uid], positions[vfoa[uid]])
        frames.append(FrameObservation(frame=t + 1, positions=positions, head=head, gaze=gaze, vfoa=vfoa))

    annotations = {person: chains[person].copy() for person in scene.tracked_ids}
    rec = Recording(scene=scene, frames=frames, dt=cfg.dt_seconds, annotations=annotations)
    truth = SynthGroundTruth(vfoa={p: chains[p].copy() for p in scene.tracked_ids}, latent=latent)
    return rec, truth


def _sticky_table() -> TransitionTable:
    """A dwell-heavy transition table for well-separated test scenes."""
    groups = [
        [0.97, None],  # from no-target: mostly stay
        [0.01, 0.98, None],  # from a passive target: long dwells
        [0.02, 0.96, None],  # watched person looks at nothing
        [0.01, 0.98, None],  # mutual gaze is stable
        [0.01, 0.93, 0.05, None],  # follow the watched person's focus sometimes
    ]
    values = []
    for group in groups:
        head = [v for v in group if v is not None]
        values.extend(head + [1.0 - sum(head)])
    return TransitionTable.from_array(values)


def _rotate_xy(p: tuple[float, float, float], angle_deg: float) -> Position3D:
    c = math.cos(math.radians(angle_deg))
    s = math.sin(math.radians(angle_deg))
    x, y, z = p
    return Position3D(c * x - s * y, s * x + c * y, z)


def easy_scene_preset(
    frames: int = 1000,
    seed: int = 42,
    all_tracked: bool = False,
    params: Optional[ModelParams] = None,
    table: Optional[TransitionTable] = None,
) -> SynthConfig:
    """Canonical two-person + robot + three-painting layout.

    Every pair of targets is at least 40 degrees apart from both
    persons' viewpoints, so focus hypotheses are geometrically well
    separated. The default parameters follow the standard
    initialization except for the velocity-noise blocks, which are
    scaled down so that multi-thousand-frame sampled trajectories stay
    inside the physical angular range (an integrated velocity random
    walk diverges cubically in time otherwise).

    ``all_tracked=True`` marks the robot as a tracked person too, which
    is the configuration used for learning tests.
    """
    rot = -20.0  # keep all person-to-target pans well away from the seam
    positions = {
        1: _rotate_xy((2.5, 0.0, 0.0), rot),  # robot, front center
        2: _rotate_xy((0.0, -1.0, 0.0), rot),  # left person
        3: _rotate_xy((0.0, 1.0, 0.0), rot),  # right person
        4: _rotate_xy((-2.0, -1.0, 0.0), rot),  # painting, back left
        5: _rotate_xy((-2.0, 1.0, 0.0), rot),  # painting, back right
        6: _rotate_xy((2.5, 0.0, 2.5), rot),  # painting, high front
    }
    targets = (
        Target(1, "active", tracked=all_tracked, name="robot"),
        Target(2, "active", tracked=True, name="left-person"),
        Target(3, "active", tracked=True, name="right-person"),
        Target(4, "passive", name="painting-1"),
        Target(5, "passive", name="painting-2"),
        Target(6, "passive", name="painting-3"),
    )
    scene = Scene(targets)
    if params is None:
        eye = np.eye(2)
        params = ModelParams(
            alpha=np.array([0.5, 0.5]),
            beta=np.array([0.5, 0.5]),
            gamma_g=5.0 * eye,
            gamma_gdot=0.01 * eye,
            gamma_r=0.5 * eye,
            gamma_rdot=1e-6 * eye,
            sigma_h=15.0 * eye,
        )
    if table is None:
        table = _sticky_table()

    untracked_vfoa = None
    if not all_tracked:
        # The robot alternates between the two persons with short
        # gaze-aversion gaps, mimicking an art-guide addressing its
        # audience.
        pattern = np.concatenate(
            [np.full(140, 2), np.full(20, 0), np.full(140, 3), np.full(20, 0)]
        )
        stream = np.tile(pattern, frames // len(pattern) + 1)[:frames]
        untracked_vfoa = {1: stream.astype(np.int64)}

    return SynthConfig(
        scene=scene,
        params=params,
        table=table,
        frames=frames,
        seed=seed,
        positions=positions,
        untracked_vfoa=untracked_vfoa,
    )
