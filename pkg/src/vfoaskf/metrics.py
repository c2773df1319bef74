"""Evaluation metrics: frame recognition rate, confusion matrices, and
shot-level mutual-gaze scores (shot recognition rate, average precision)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .scene import UNANNOTATED

__all__ = [
    "ConfusionMatrix",
    "average_precision",
    "confusion",
    "frr",
    "mutual_gaze_score",
    "srr",
]


def _as_labels(seq: Sequence[Optional[int]]) -> np.ndarray:
    arr = np.empty(len(seq), dtype=np.int64)
    for i, v in enumerate(seq):
        arr[i] = UNANNOTATED if v is None else int(v)
    return arr


def frr(pred: Sequence[Optional[int]], gt: Sequence[Optional[int]]) -> float:
    """Frame recognition rate: percent of annotated frames whose focus
    label is correct. Unannotated ground-truth frames are skipped."""
    p = _as_labels(pred)
    g = _as_labels(gt)
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {len(p)} predictions vs {len(g)} ground-truth labels")
    annotated = g != UNANNOTATED
    n = int(annotated.sum())
    if n == 0:
        raise ValueError("no annotated frames to score")
    return 100.0 * float((p[annotated] == g[annotated]).sum()) / n


@dataclass
class ConfusionMatrix:
    """Counts with ground truth on rows and predictions on columns."""

    labels: tuple[int, ...]
    counts: np.ndarray

    def normalized(self) -> np.ndarray:
        """Row-normalized view; the diagonal holds per-label recall.
        Empty rows stay all-zero."""
        out = self.counts.astype(float)
        sums = out.sum(axis=1, keepdims=True)
        nonzero = sums[:, 0] > 0
        out[nonzero] /= sums[nonzero]
        return out

    def to_csv(self, path) -> None:
        header = "gt_label," + ",".join(f"pred_{l}" for l in self.labels)
        rows = [header]
        for l, row in zip(self.labels, self.counts):
            rows.append(f"{l}," + ",".join(str(int(v)) for v in row))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(rows) + "\n")


def confusion(
    pred: Sequence[Optional[int]],
    gt: Sequence[Optional[int]],
    labels: Sequence[int],
) -> ConfusionMatrix:
    """Count (ground truth, prediction) pairs over annotated frames."""
    p = _as_labels(pred)
    g = _as_labels(gt)
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {len(p)} predictions vs {len(g)} ground-truth labels")
    labels = tuple(labels)
    index = {l: i for i, l in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for gi, pi in zip(g, p):
        if gi == UNANNOTATED:
            continue
        counts[index[int(gi)], index[int(pi)]] += 1
    return ConfusionMatrix(labels, counts)


def mutual_gaze_score(tracks: Mapping[int, Sequence[int]]) -> float:
    """Longest mutual-gaze run over any ordered person pair, as a
    fraction of the shot length.

    Two persons i and j are in mutual gaze on a frame when i's focus is
    j and j's focus is i. Needs at least two persons and one frame.
    """
    persons = sorted(tracks)
    if len(persons) < 2:
        raise ValueError("mutual gaze needs at least two persons")
    lengths = {len(tracks[p]) for p in persons}
    if len(lengths) != 1:
        raise ValueError(f"track lengths differ: {sorted(lengths)}")
    T = lengths.pop()
    if T == 0:
        raise ValueError("empty tracks")
    best = 0
    for a_idx, a in enumerate(persons):
        for b in persons[a_idx + 1 :]:
            va = np.asarray(tracks[a])
            vb = np.asarray(tracks[b])
            mutual = (va == b) & (vb == a)
            run = 0
            for m in mutual:
                run = run + 1 if m else 0
                best = max(best, run)
    return best / T


def srr(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.25) -> float:
    """Shot recognition rate: fraction of shots where thresholding the
    score reproduces the binary label. The default threshold accepts
    runs of at least a quarter of the shot."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {len(s)} scores vs {len(y)} labels")
    if s.size == 0:
        raise ValueError("no shots to score")
    return float(((s >= threshold).astype(int) == y).mean())


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the precision-recall curve by the finite-sum rule:
    precision at each positive, averaged, in descending-score order
    (ties keep input order)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {len(s)} scores vs {len(y)} labels")
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive shot")
    order = np.argsort(-s, kind="stable")
    total = 0.0
    seen_pos = 0
    for rank, idx in enumerate(order, start=1):
        if y[idx] == 1:
            seen_pos += 1
            total += seen_pos / rank
    return total / n_pos
