"""Scenes, recordings and per-frame observations.

A scene has N active targets (ids 1..N) and M passive targets
(ids N+1..N+M); id 0 is reserved for "no target" (gaze aversion).
Active targets may look at things and be looked at; passive targets can
only be looked at. A *tracked* target is an active target whose gaze
and focus-of-attention are inferred; untracked active targets (e.g. a
robot whose head direction is read from its motors) must supply their
own focus label and/or gaze direction per frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .geometry import Direction, Position3D

__all__ = [
    "NO_TARGET",
    "UNANNOTATED",
    "FrameObservation",
    "Recording",
    "RecordingSet",
    "Scene",
    "Target",
    "as_annotation_array",
    "eligible_vfoa_labels",
    "validate_recording",
]

#: Label of the "looking at no known target" state.
NO_TARGET = 0

#: Sentinel used in annotation arrays for frames without a label.
UNANNOTATED = -1

ACTIVE = "active"
PASSIVE = "passive"


@dataclass(frozen=True)
class Target:
    """One target of the scene.

    ``tracked`` may be true only for active targets.
    """

    id: int
    kind: str
    tracked: bool = False
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in (ACTIVE, PASSIVE):
            raise ValueError(f"target kind must be '{ACTIVE}' or '{PASSIVE}', got {self.kind!r}")
        if self.id <= 0:
            raise ValueError(f"target id must be >= 1 (0 is reserved), got {self.id}")
        if self.tracked and self.kind != ACTIVE:
            raise ValueError(f"target {self.id} is tracked but not active")


@dataclass(frozen=True)
class Scene:
    """A fixed set of targets; active ids 1..N, passive ids N+1..N+M."""

    targets: tuple[Target, ...]

    def __init__(self, targets: Iterable[Target]):
        object.__setattr__(self, "targets", tuple(targets))
        self._validate()

    def _validate(self) -> None:
        n = sum(1 for t in self.targets if t.kind == ACTIVE)
        m = len(self.targets) - n
        ids = sorted(t.id for t in self.targets)
        if ids != list(range(1, n + m + 1)):
            raise ValueError(f"target ids must be exactly 1..{n + m}, got {ids}")
        for t in self.targets:
            if t.kind == ACTIVE and not 1 <= t.id <= n:
                raise ValueError(f"active target ids must lie in 1..{n}, got {t.id}")
            if t.kind == PASSIVE and not n < t.id <= n + m:
                raise ValueError(f"passive target ids must lie in {n + 1}..{n + m}, got {t.id}")
        if not any(t.tracked for t in self.targets):
            raise ValueError("scene has no tracked target")

    @cached_property
    def n_active(self) -> int:
        return sum(1 for t in self.targets if t.kind == ACTIVE)

    @cached_property
    def m_passive(self) -> int:
        return len(self.targets) - self.n_active

    @cached_property
    def active_ids(self) -> tuple[int, ...]:
        return tuple(t.id for t in self.targets if t.kind == ACTIVE)

    @cached_property
    def passive_ids(self) -> tuple[int, ...]:
        return tuple(t.id for t in self.targets if t.kind == PASSIVE)

    @cached_property
    def tracked_ids(self) -> tuple[int, ...]:
        return tuple(t.id for t in self.targets if t.tracked)

    @cached_property
    def untracked_active_ids(self) -> tuple[int, ...]:
        return tuple(t.id for t in self.targets if t.kind == ACTIVE and not t.tracked)

    @cached_property
    def labels(self) -> tuple[int, ...]:
        """All focus labels including the no-target label 0."""
        return tuple(range(0, self.n_active + self.m_passive + 1))

    def target(self, target_id: int) -> Target:
        for t in self.targets:
            if t.id == target_id:
                return t
        raise KeyError(f"unknown target id {target_id}")

    def is_active(self, target_id: int) -> bool:
        return 1 <= target_id <= self.n_active

    def is_passive(self, target_id: int) -> bool:
        return self.n_active < target_id <= self.n_active + self.m_passive


def eligible_vfoa_labels(scene: Scene, person: int) -> tuple[int, ...]:
    """Focus labels person may take: {0, 1, ..., N+M} minus itself.

    ``person`` must be an active target (the self label is excluded for
    any looker, tracked or not).
    """
    if not scene.is_active(person):
        raise KeyError(f"target {person} is not an active target of the scene")
    return tuple(l for l in scene.labels if l != person)


@dataclass(frozen=True)
class FrameObservation:
    """Observed quantities of one video frame.

    positions: world position of every target.
    head: observed head direction of every tracked person.
    gaze: known gaze direction of untracked active targets, if any.
    vfoa: known focus label of untracked active targets, if any.
    """

    frame: int
    positions: Mapping[int, Position3D]
    head: Mapping[int, Direction]
    gaze: Mapping[int, Direction] = field(default_factory=dict)
    vfoa: Mapping[int, int] = field(default_factory=dict)


def as_annotation_array(values: Sequence[Optional[int]], n_frames: int) -> np.ndarray:
    """Normalize a per-frame label sequence to an int array, -1 for gaps."""
    if len(values) != n_frames:
        raise ValueError(f"annotation length {len(values)} != number of frames {n_frames}")
    arr = np.empty(n_frames, dtype=np.int64)
    for idx, v in enumerate(values):
        arr[idx] = UNANNOTATED if v is None else int(v)
    return arr


@dataclass
class Recording:
    """One recording: a scene, its frames, and optional annotations.

    ``dt`` is the real frame period in seconds; it is metadata only
    (all internal dynamics run in frame units). ``annotations`` maps a
    tracked person id to a length-T integer array of focus labels,
    ``UNANNOTATED`` (-1) marking unannotated frames.
    """

    scene: Scene
    frames: Sequence[FrameObservation]
    dt: float
    annotations: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        T = len(self.frames)
        normalized = {}
        for person, values in self.annotations.items():
            if isinstance(values, np.ndarray) and values.dtype.kind == "i":
                if values.shape != (T,):
                    raise ValueError(f"annotation for person {person} has shape {values.shape}, expected ({T},)")
                normalized[person] = values
            else:
                normalized[person] = as_annotation_array(values, T)
        self.annotations = normalized

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def is_fully_annotated(self, person: int) -> bool:
        ann = self.annotations.get(person)
        return ann is not None and not np.any(ann == UNANNOTATED)


@dataclass
class RecordingSet:
    """A collection of recordings used for learning or evaluation."""

    recordings: list[Recording]

    def __post_init__(self) -> None:
        if not self.recordings:
            raise ValueError("a recording set needs at least one recording")


def _check_frame(rec: Recording, obs: FrameObservation, idx: int, problems: list[str]) -> None:
    scene = rec.scene
    for target in scene.targets:
        pos = obs.positions.get(target.id)
        if pos is None:
            problems.append(f"frame {obs.frame}: missing position for target {target.id}")
        elif not np.all(np.isfinite(pos.as_array())):
            problems.append(f"frame {obs.frame}: non-finite position for target {target.id}")
    for person in scene.tracked_ids:
        if person not in obs.head:
            problems.append(f"frame {obs.frame}: missing head direction for person {person}")
    for uid in scene.untracked_active_ids:
        if uid not in obs.vfoa and uid not in obs.gaze:
            problems.append(
                f"frame {obs.frame}: untracked active target {uid} has neither a focus label nor a gaze direction"
            )
        label = obs.vfoa.get(uid)
        if label is not None and label not in eligible_vfoa_labels(scene, uid):
            problems.append(f"frame {obs.frame}: focus label {label} of target {uid} outside its eligible set")


def validate_recording(rec: Recording) -> list[str]:
    """Collect consistency violations; an empty list means valid.

    Diagnostics, not exceptions: every problem is reported with the
    frame (and target) it concerns.
    """
    problems: list[str] = []
    for idx, obs in enumerate(rec.frames):
        if obs.frame != idx + 1:
            problems.append(f"frame index {obs.frame} at position {idx}; expected contiguous indices from 1")
        _check_frame(rec, obs, idx, problems)
    for person, ann in rec.annotations.items():
        if person not in rec.scene.tracked_ids:
            problems.append(f"annotations given for target {person}, which is not a tracked person")
            continue
        eligible = set(eligible_vfoa_labels(rec.scene, person))
        for idx, label in enumerate(ann):
            if label == UNANNOTATED:
                continue
            if label == person:
                problems.append(f"frame {idx + 1}: self-VFOA annotation for person {person}")
            elif int(label) not in eligible:
                problems.append(f"frame {idx + 1}: annotation {label} for person {person} outside eligible set")
    return problems
