"""Command-line surface: simulate | learn | track | evaluate | bench.

Every command writes a run manifest into its output directory before
any other file; other outputs reference the manifest hash (JSON reports
embed it, CSV outputs are listed with it in outputs.json). Commands are
deterministic given the manifest: all randomness is seeded.

The VFOA_SKF_THREADS environment variable caps the worker pool used for
leave-one-out folds and multi-shot evaluation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    load_recording,
    load_scene,
    read_ground_truth_csv,
    read_track_csv,
    save_recording,
    save_scene,
    write_ground_truth_csv,
    write_track_csv,
)
from .dynamics import ModelParams
from .learning import em_fit
from .metrics import average_precision, confusion, frr, mutual_gaze_score, srr
from .scene import RecordingSet
from .synth import SynthConfig, easy_scene_preset, sample_recording
from .tracker import initialize, track, update
from .transitions import TransitionTable, learn_table

__all__ = ["main"]


class CommandError(RuntimeError):
    """Fatal command failure; the message goes to stderr."""


def _worker_count() -> int:
    raw = os.environ.get("VFOA_SKF_THREADS", "")
    try:
        cap = int(raw) if raw else os.cpu_count() or 1
    except ValueError:
        raise CommandError(f"VFOA_SKF_THREADS must be an integer, got {raw!r}")
    return max(1, cap)


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace, seed=None) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    core = {
        "command": command,
        "args": {k: str(v) for k, v in sorted(vars(args).items()) if k != "func"},
        "seed": seed,
        "tool_version": __version__,
        "started_utc": datetime.now(timezone.utc).isoformat(),
    }
    manifest_hash = hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()
    manifest = dict(core, manifest_hash=manifest_hash)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


def _finish(out_dir: Path, manifest: dict, files: list[str], started: float) -> None:
    manifest["wall_clock_s"] = round(time.perf_counter() - started, 3)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    summary = {"manifest_hash": manifest["manifest_hash"], "files": sorted(files)}
    with open(out_dir / "outputs.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")


def _load_params(path: str) -> ModelParams:
    try:
        return ModelParams.load(path)
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot load parameters from {path}: {exc}")


def _load_table(path: str) -> TransitionTable:
    try:
        return TransitionTable.load(path)
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot load transition table from {path}: {exc}")


def cmd_simulate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    out_dir = Path(args.out)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if raw.get("preset", "") != "easy":
            raise CommandError(f"{args.config}: only the 'easy' preset is supported in config files")
        cfg = easy_scene_preset(
            frames=int(raw.get("frames", args.frames)),
            seed=int(raw.get("seed", args.seed)),
            all_tracked=bool(raw.get("all_tracked", False)),
        )
    else:
        cfg = easy_scene_preset(frames=args.frames, seed=args.seed)
    manifest = _write_manifest(out_dir, "simulate", args, seed=cfg.seed)
    rec, truth = sample_recording(cfg)
    save_scene(rec.scene, cfg.dt_seconds, out_dir / "scene.json")
    save_recording(rec, out_dir / "recording.csv")
    write_ground_truth_csv(truth, out_dir / "ground_truth.csv")
    cfg.params.save(out_dir / "params.json")
    cfg.table.save(out_dir / "table.json")
    _finish(
        out_dir,
        manifest,
        ["scene.json", "recording.csv", "ground_truth.csv", "params.json", "table.json"],
        started,
    )
    return 0


def _load_training_data(data_dir: Path) -> tuple[RecordingSet, list[Path]]:
    scene_path = data_dir / "scene.json"
    if not scene_path.exists():
        raise CommandError(f"{data_dir}: missing scene.json")
    scene, dt, _ = load_scene(scene_path)
    rec_paths = sorted(p for p in data_dir.glob("*.csv") if not p.name.startswith("ground_truth"))
    if not rec_paths:
        raise CommandError(f"{data_dir}: no recording CSV files found")
    recordings = [load_recording(p, scene, dt) for p in rec_paths]
    for path, rec in zip(rec_paths, recordings):
        for person in rec.scene.tracked_ids:
            if not rec.is_fully_annotated(person):
                raise CommandError(f"{path}: person {person} is not fully annotated; learning needs annotations")
    return RecordingSet(recordings), rec_paths


def _fit_fold(recordings: RecordingSet, out_dir: Path, max_iters: int, tol: float) -> list[str]:
    table = learn_table(recordings)
    result = em_fit(recordings, max_iters=max_iters, tol=tol)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.save(out_dir / "table.json")
    result.params.save(out_dir / "params.json")
    with open(out_dir / "loglik.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration,loglik\n")
        for it, ll in enumerate(result.loglik_trace):
            fh.write(f"{it},{ll!r}\n")
    return [str(out_dir / name) for name in ("table.json", "params.json", "loglik.csv")]


def cmd_learn(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    out_dir = Path(args.out)
    manifest = _write_manifest(out_dir, "learn", args)
    data, rec_paths = _load_training_data(Path(args.data))
    files: list[str] = []
    if args.leave_one_out:
        if len(data.recordings) < 2:
            raise CommandError("leave-one-out needs at least two recordings")
        folds = []
        for held_out, path in enumerate(rec_paths):
            rest = [r for q, r in enumerate(data.recordings) if q != held_out]
            folds.append((RecordingSet(rest), out_dir / f"heldout_{path.stem}"))
        with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
            futures = [
                pool.submit(_fit_fold, fold_data, fold_dir, args.max_iters, args.tol)
                for fold_data, fold_dir in folds
            ]
            for future in futures:
                files.extend(future.result())
    else:
        files.extend(_fit_fold(data, out_dir, args.max_iters, args.tol))
    _finish(out_dir, manifest, [str(Path(f).relative_to(out_dir)) for f in files], started)
    return 0


def cmd_track(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    out_path = Path(args.out)
    out_dir = out_path.parent if out_path.suffix else out_path
    manifest = _write_manifest(out_dir, "track", args)
    scene, dt, _ = load_scene(args.scene)
    rec = load_recording(args.recording, scene, dt)
    params = _load_params(args.params)
    table = _load_table(args.table)
    try:
        result = track(rec, params, table)
    except ValueError as exc:
        raise CommandError(str(exc))
    csv_path = out_path if out_path.suffix else out_path / "track.csv"
    write_track_csv(result, csv_path)
    _finish(out_dir, manifest, [csv_path.name], started)
    return 0


def _evaluate_frames(args, report: dict, out_dir: Path, files: list[str], wanted: set) -> None:
    data = read_track_csv(args.track)
    truth = read_ground_truth_csv(args.truth)
    persons = sorted(data["vfoa"])
    per_person = {}
    for person in persons:
        if person not in truth["vfoa"]:
            raise CommandError(f"ground truth lacks person {person}")
        if len(truth["vfoa"][person]) != len(data["vfoa"][person]):
            raise CommandError(f"track and ground truth disagree on length for person {person}")
        per_person[person] = frr(data["vfoa"][person].tolist(), truth["vfoa"][person].tolist())
    if "frr" in wanted:
        report["frr"] = {
            "per_person": {str(p): v for p, v in per_person.items()},
            "mean": float(np.mean(list(per_person.values()))),
        }
    if "confusion" in wanted:
        labels = data["labels"]
        for person in persons:
            cm = confusion(data["vfoa"][person].tolist(), truth["vfoa"][person].tolist(), labels)
            name = f"confusion_person_{person}.csv"
            cm.to_csv(out_dir / name)
            files.append(name)
        report["confusion_files"] = sorted(f for f in files if f.startswith("confusion_"))


def _shot_score(entry: dict) -> tuple[float, int]:
    data = read_track_csv(entry["track"])
    score = mutual_gaze_score({p: v.tolist() for p, v in data["vfoa"].items()})
    return score, int(entry["label"])


def _evaluate_shots(args, report: dict, wanted: set) -> None:
    with open(args.shots, "r", encoding="utf-8") as fh:
        shots = json.load(fh)
    if not isinstance(shots, list) or not shots:
        raise CommandError(f"{args.shots}: expected a non-empty JSON list of shots")
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        results = list(pool.map(_shot_score, shots))
    scores = [s for s, _ in results]
    labels = [l for _, l in results]
    report["shots"] = {"scores": scores, "labels": labels}
    if "srr" in wanted:
        report["srr"] = srr(scores, labels, threshold=args.srr_threshold)
    if "ap" in wanted:
        report["ap"] = average_precision(scores, labels)


def cmd_evaluate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    out_dir = Path(args.out)
    manifest = _write_manifest(out_dir, "evaluate", args)
    wanted = {m.strip() for m in args.metrics.split(",") if m.strip()}
    unknown = wanted - {"frr", "confusion", "srr", "ap"}
    if unknown:
        raise CommandError(f"unknown metrics: {sorted(unknown)}")
    report: dict = {"manifest_hash": manifest["manifest_hash"]}
    files = ["report.json"]
    if wanted & {"frr", "confusion"}:
        if not args.track or not args.truth:
            raise CommandError("frr/confusion need --track and --truth")
        _evaluate_frames(args, report, out_dir, files, wanted)
    if wanted & {"srr", "ap"}:
        if not args.shots:
            raise CommandError("srr/ap need --shots")
        _evaluate_shots(args, report, wanted)
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    _finish(out_dir, manifest, files, started)
    return 0


def _bench_one(n_active: int, m_passive: int, frames: int, seed: int) -> float:
    """Median seconds per update call on a random synthetic scene."""
    from .geometry import Position3D
    from .scene import Scene, Target

    rng = np.random.default_rng(seed)
    targets = [Target(i, "active", tracked=True) for i in range(1, n_active + 1)]
    targets += [Target(i, "passive") for i in range(n_active + 1, n_active + m_passive + 1)]
    scene = Scene(targets)
    angles = np.linspace(0.0, 2 * np.pi, len(targets), endpoint=False)
    positions = {
        t.id: Position3D(3.0 * np.cos(a), 3.0 * np.sin(a), 0.0)
        for t, a in zip(targets, angles)
    }
    params = ModelParams.defaults()
    table = TransitionTable.uniform()
    cfg = SynthConfig(
        scene=scene, params=params, table=table, frames=frames, seed=seed, positions=positions
    )
    rec, _ = sample_recording(cfg)
    state = initialize(scene, rec.frames[0], params, table)
    timings = []
    for obs in rec.frames[1:]:
        t0 = time.perf_counter()
        state = update(state, obs, params, table)
        timings.append(time.perf_counter() - t0)
    return float(np.median(timings))


def cmd_bench(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    out_dir = Path(args.out)
    manifest = _write_manifest(out_dir, "bench", args, seed=args.seed)
    n_values = [int(v) for v in args.n_active.split(",")]
    m_values = [int(v) for v in args.m_passive.split(",")]
    rows = []
    for n in n_values:
        for m in m_values:
            if n + m < 1 or (n == 1 and m == 0):
                continue  # a lone person with no other target has a single hypothesis
            secs = _bench_one(n, m, args.frames, args.seed)
            rows.append((n, m, n + m, secs))
    if len(rows) < 3:
        raise CommandError("bench needs at least three (N, M) combinations to fit an exponent")
    with open(out_dir / "bench.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("n_active,m_passive,n_targets,seconds_per_update\n")
        for n, m, total, secs in rows:
            fh.write(f"{n},{m},{total},{secs!r}\n")
    # Update cost is expected to scale as N * (N+M)^2; fit
    # log t = c + a log N + e log(N+M) and report e.
    X = np.array([[1.0, np.log(n), np.log(total)] for n, _, total, _ in rows])
    y = np.log([secs for *_, secs in rows])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    summary = {
        "manifest_hash": manifest["manifest_hash"],
        "fitted_exponent_targets": float(coef[2]),
        "fitted_exponent_persons": float(coef[1]),
        "rows": len(rows),
    }
    with open(out_dir / "bench_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"fitted (N+M) exponent: {coef[2]:.3f}")
    _finish(out_dir, manifest, ["bench.csv", "bench_summary.json"], started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vfoa-skf",
        description="Joint gaze and visual-focus-of-attention tracking and learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a synthetic recording")
    p.add_argument("--config", default=None, help="JSON config; defaults to the easy preset")
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("learn", help="fit the transition table and Gaussian parameters")
    p.add_argument("--data", required=True, help="directory with scene.json and recording CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--leave-one-out", action="store_true")
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("track", help="run the tracker over a recording")
    p.add_argument("--scene", required=True)
    p.add_argument("--recording", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--out", required=True, help="output CSV path or directory")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("evaluate", help="score tracks against ground truth")
    p.add_argument("--track", default=None)
    p.add_argument("--truth", default=None)
    p.add_argument("--shots", default=None, help="JSON list of {track, label} shot entries")
    p.add_argument("--metrics", default="frr,confusion")
    p.add_argument("--srr-threshold", type=float, default=0.25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="time the update step over an (N, M) grid")
    p.add_argument("--n-active", default="1,2,3")
    p.add_argument("--m-passive", default="0,1,2,3,4,5,6")
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
