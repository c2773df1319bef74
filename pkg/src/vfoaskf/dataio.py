"""File formats and ingestion.

Scene files are JSON with a format tag; recordings are one CSV per
recording with the header

    frame,target_id,x,y,z,pan,tilt,vfoa

one row per (frame, target). The pan/tilt columns carry the observed
head direction for tracked persons and the known gaze direction for
untracked active targets (a robot's head direction and gaze coincide);
they are empty for passive targets. The vfoa column carries the
annotation of tracked persons (empty when unannotated) and the known
focus label of untracked active targets. All angles conform to the
package-wide pan/tilt conventions (see geometry module).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .geometry import Direction, Position3D
from .scene import FrameObservation, Recording, Scene, Target, UNANNOTATED
from .tracker import TrackResult

__all__ = [
    "CameraModel",
    "CameraPose",
    "FORMAT_VERSION",
    "RECORDING_HEADER",
    "bbox_to_position",
    "camera_to_world",
    "coarse_orientation_to_direction",
    "load_recording",
    "load_scene",
    "read_ground_truth_csv",
    "read_track_csv",
    "save_recording",
    "save_scene",
    "write_ground_truth_csv",
    "write_track_csv",
]

FORMAT_VERSION = "vfoa-skf/1"

RECORDING_HEADER = ["frame", "target_id", "x", "y", "z", "pan", "tilt", "vfoa"]

#: Pan angles of the five coarse head-orientation labels; tilt is 0.
_COARSE_PAN = {
    "frontal-left": -20.0,
    "frontal-right": 20.0,
    "profile-left": -80.0,
    "profile-right": 80.0,
    "backwards": 180.0,
}


class FormatError(ValueError):
    """A file does not conform to the documented formats."""


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world transform: world = rotation @ p_cam + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the assumed physical face width."""

    focal_px: float
    principal_point: tuple[float, float]
    face_width_m: float = 0.18

    def __post_init__(self) -> None:
        if self.focal_px <= 0:
            raise ValueError(f"focal length must be positive, got {self.focal_px}")
        if self.face_width_m <= 0:
            raise ValueError(f"face width must be positive, got {self.face_width_m}")


def coarse_orientation_to_direction(label: str) -> Direction:
    """Map a coarse head-orientation label to a (pan, tilt) direction."""
    pan = _COARSE_PAN.get(label)
    if pan is None:
        raise ValueError(f"unknown coarse orientation {label!r}; expected one of {sorted(_COARSE_PAN)}")
    return Direction(pan, 0.0)


def bbox_to_position(bbox: tuple[float, float, float, float], cam: CameraModel) -> Position3D:
    """Back-project a face bounding box to a 3D point in camera frame.

    ``bbox`` is (x, y, width, height) in pixels. The bounding-box width
    gives a rough depth along the line of sight through the box center:
    depth = focal * face_width / bbox_width. Camera frame is the usual
    pinhole one: x right, y down, z along the optical axis.
    """
    x, y, w, h = bbox
    if w <= 0:
        raise ValueError(f"bounding box width must be positive, got {w}")
    depth = cam.focal_px * cam.face_width_m / w
    cx, cy = cam.principal_point
    ray = np.array([(x + 0.5 * w - cx) / cam.focal_px, (y + 0.5 * h - cy) / cam.focal_px, 1.0])
    point = depth * ray / np.linalg.norm(ray)
    return Position3D(*point)


def camera_to_world(pose: CameraPose, point: Position3D) -> Position3D:
    return Position3D(*(pose.rotation @ point.as_array() + pose.translation))


def save_scene(scene: Scene, dt: float, path, camera_pose: Optional[CameraPose] = None) -> None:
    data = {
        "format": FORMAT_VERSION,
        "dt": dt,
        "targets": [
            {"id": t.id, "kind": t.kind, "tracked": t.tracked, "name": t.name}
            for t in scene.targets
        ],
    }
    if camera_pose is not None:
        data["camera_to_world"] = {
            "rotation": camera_pose.rotation.tolist(),
            "translation": camera_pose.translation.tolist(),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def load_scene(path) -> tuple[Scene, float, CameraPose]:
    """Load a scene file; returns (scene, dt, camera pose)."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("format") != FORMAT_VERSION:
        raise FormatError(f"{path}: format field is {data.get('format')!r}, expected {FORMAT_VERSION!r}")
    if "dt" not in data:
        raise FormatError(f"{path}: missing required field 'dt'")
    if "targets" not in data:
        raise FormatError(f"{path}: missing required field 'targets'")
    dt = float(data["dt"])
    targets = []
    for entry in data["targets"]:
        try:
            targets.append(
                Target(
                    id=int(entry["id"]),
                    kind=str(entry["kind"]),
                    tracked=bool(entry.get("tracked", False)),
                    name=str(entry.get("name", "")),
                )
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}: bad target entry {entry}: {exc}") from exc
    scene = Scene(targets)
    pose = CameraPose.identity()
    if "camera_to_world" in data:
        raw = data["camera_to_world"]
        pose = CameraPose(np.asarray(raw["rotation"], dtype=float), np.asarray(raw["translation"], dtype=float))
    return scene, dt, pose


def _fmt(value: float) -> str:
    return repr(float(value))


def save_recording(rec: Recording, path) -> None:
    """Write a recording CSV; numeric fields keep full precision."""
    scene = rec.scene
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORDING_HEADER)
        for t_idx, obs in enumerate(rec.frames):
            for target in scene.targets:
                pos = obs.positions[target.id]
                pan = tilt = ""
                vfoa = ""
                if target.tracked:
                    head = obs.head[target.id]
                    pan, tilt = _fmt(head.pan), _fmt(head.tilt)
                    ann = rec.annotations.get(target.id)
                    if ann is not None and ann[t_idx] != UNANNOTATED:
                        vfoa = str(int(ann[t_idx]))
                elif target.kind == "active":
                    if target.id in obs.gaze:
                        g = obs.gaze[target.id]
                        pan, tilt = _fmt(g.pan), _fmt(g.tilt)
                    if target.id in obs.vfoa:
                        vfoa = str(int(obs.vfoa[target.id]))
                writer.writerow(
                    [obs.frame, target.id, _fmt(pos.x), _fmt(pos.y), _fmt(pos.z), pan, tilt, vfoa]
                )


def load_recording(path, scene: Scene, dt: float) -> Recording:
    """Parse a recording CSV against a scene; errors carry line numbers."""
    rows_by_frame: dict[int, dict[int, dict]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RECORDING_HEADER:
            raise FormatError(f"{path}:1: header {header} does not match {RECORDING_HEADER}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(RECORDING_HEADER):
                raise FormatError(f"{path}:{line_no}: expected {len(RECORDING_HEADER)} fields, got {len(row)}")
            try:
                frame = int(row[0])
                target_id = int(row[1])
                x, y, z = float(row[2]), float(row[3]), float(row[4])
            except ValueError as exc:
                raise FormatError(f"{path}:{line_no}: {exc}") from exc
            try:
                scene.target(target_id)
            except KeyError as exc:
                raise FormatError(f"{path}:{line_no}: unknown target id {target_id}") from exc
            if not all(math.isfinite(v) for v in (x, y, z)):
                raise FormatError(f"{path}:{line_no}: non-finite position")
            entry = {"pos": Position3D(x, y, z), "pan": row[5], "tilt": row[6], "vfoa": row[7], "line": line_no}
            rows_by_frame.setdefault(frame, {})[target_id] = entry

    if not rows_by_frame:
        raise FormatError(f"{path}: no data rows")
    frames_idx = sorted(rows_by_frame)
    if frames_idx != list(range(1, len(frames_idx) + 1)):
        raise FormatError(f"{path}: frame indices are not contiguous from 1: {frames_idx[:5]}...")

    frames = []
    annotations: dict[int, list[Optional[int]]] = {p: [] for p in scene.tracked_ids}
    for frame in frames_idx:
        entries = rows_by_frame[frame]
        positions = {}
        head = {}
        gaze = {}
        vfoa = {}
        for target in scene.targets:
            entry = entries.get(target.id)
            if entry is None:
                raise FormatError(f"{path}: frame {frame}: missing row for target {target.id}")
            positions[target.id] = entry["pos"]
            has_dir = entry["pan"] != "" and entry["tilt"] != ""
            if target.tracked:
                if not has_dir:
                    raise FormatError(f"{path}:{entry['line']}: tracked person {target.id} lacks pan/tilt")
                try:
                    head[target.id] = Direction(float(entry["pan"]), float(entry["tilt"]))
                except ValueError as exc:
                    raise FormatError(f"{path}:{entry['line']}: {exc}") from exc
                label = None if entry["vfoa"] == "" else int(entry["vfoa"])
                annotations[target.id].append(label)
            elif target.kind == "active":
                if has_dir:
                    gaze[target.id] = Direction(float(entry["pan"]), float(entry["tilt"]))
                if entry["vfoa"] != "":
                    vfoa[target.id] = int(entry["vfoa"])
        frames.append(FrameObservation(frame=frame, positions=positions, head=head, gaze=gaze, vfoa=vfoa))

    ann_arrays = {
        person: values for person, values in annotations.items() if any(v is not None for v in values)
    }
    return Recording(scene=scene, frames=frames, dt=dt, annotations=ann_arrays)


def write_track_csv(result: TrackResult, path) -> None:
    """Track output: one row per (frame, person) with the MAP focus
    label, the gaze estimate, and one weight column per label (the
    person's own column stays empty)."""
    scene = result.scene
    all_labels = list(scene.labels)
    header = ["frame", "person_id", "vfoa_label", "gaze_pan", "gaze_tilt"] + [f"w_{l}" for l in all_labels]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t, frame in enumerate(result.frames):
            for person in result.persons:
                weights = {int(l): w for l, w in zip(result.labels[person], result.weights[person][t])}
                row = [
                    int(frame),
                    person,
                    int(result.vfoa[person][t]),
                    _fmt(result.gaze[person][t, 0]),
                    _fmt(result.gaze[person][t, 1]),
                ]
                row += ["" if l == person else _fmt(weights[l]) for l in all_labels]
                writer.writerow(row)


def read_track_csv(path) -> dict:
    """Read a track CSV back into arrays keyed by person id."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:5] != ["frame", "person_id", "vfoa_label", "gaze_pan", "gaze_tilt"]:
            raise FormatError(f"{path}:1: not a track CSV (header {header})")
        weight_labels = [int(name[2:]) for name in header[5:]]
        rows = [row for row in reader if row]
    persons = sorted({int(r[1]) for r in rows})
    out = {
        "labels": weight_labels,
        "vfoa": {},
        "gaze": {},
        "weights": {},
        "frames": None,
    }
    for person in persons:
        mine = [r for r in rows if int(r[1]) == person]
        mine.sort(key=lambda r: int(r[0]))
        out["frames"] = np.array([int(r[0]) for r in mine])
        out["vfoa"][person] = np.array([int(r[2]) for r in mine])
        out["gaze"][person] = np.array([[float(r[3]), float(r[4])] for r in mine])
        out["weights"][person] = np.array(
            [[float(v) if v != "" else np.nan for v in r[5:]] for r in mine]
        )
    return out


def write_ground_truth_csv(truth, path) -> None:
    """Latent ground truth sidecar emitted next to synthetic recordings."""
    header = [
        "frame",
        "person",
        "vfoa_true",
        "gaze_pan_true",
        "gaze_tilt_true",
        "gaze_vel_pan_true",
        "gaze_vel_tilt_true",
        "ref_pan_true",
        "ref_tilt_true",
        "ref_vel_pan_true",
        "ref_vel_tilt_true",
    ]
    persons = sorted(truth.vfoa)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for person in persons:
            labels = truth.vfoa[person]
            latent = truth.latent[person]
            for t in range(len(labels)):
                writer.writerow(
                    [t + 1, person, int(labels[t])] + [_fmt(v) for v in latent[t]]
                )


def read_ground_truth_csv(path) -> dict:
    """Read a ground-truth sidecar into per-person arrays."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["frame", "person", "vfoa_true"]:
            raise FormatError(f"{path}:1: not a ground-truth CSV (header {header})")
        rows = [row for row in reader if row]
    persons = sorted({int(r[1]) for r in rows})
    vfoa = {}
    latent = {}
    for person in persons:
        mine = sorted((r for r in rows if int(r[1]) == person), key=lambda r: int(r[0]))
        vfoa[person] = np.array([int(r[2]) for r in mine])
        latent[person] = np.array([[float(v) for v in r[3:]] for r in mine])
    return {"vfoa": vfoa, "latent": latent}
