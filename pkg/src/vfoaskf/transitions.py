"""The 15-entry focus-of-attention transition model.

Writing k for a person's previous focus label and, when k is an active
target, l for k's own previous focus label, only fifteen distinct
transition probabilities exist:

====  ==========================  =======================
entry previous state              next label j
====  ==========================  =======================
p1    k = 0                       j = 0
p2    k = 0                       j != 0        (aggregate)
p3    k passive                   j = 0
p4    k passive                   j = k
p5    k passive                   j != 0, k     (aggregate)
p6    k active, l = 0             j = 0
p7    k active, l = 0             j = k
p8    k active, l = 0             j != 0, k     (aggregate)
p9    k active, l = i             j = 0
p10   k active, l = i             j = k
p11   k active, l = i             j != 0, k     (aggregate)
p12   k active, l not in {0,i,k}  j = 0
p13   k active, l not in {0,i,k}  j = k
p14   k active, l not in {0,i,k}  j = l
p15   k active, l not in {0,i,k}  j != 0, k, l  (aggregate)
====  ==========================  =======================

The aggregate entries are total masses over their residual label set;
per-label probabilities divide them uniformly over that set (the split
is not dictated by the counting estimators, which only see the
aggregates). Each of the five groups sums to one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from typing import Mapping, Optional, Sequence

import numpy as np

from .scene import NO_TARGET, Recording, RecordingSet, Scene, UNANNOTATED, eligible_vfoa_labels

__all__ = [
    "GROUPS",
    "TransitionTable",
    "learn_table",
    "marginal_transition_prior",
    "transition_prob",
]

#: Entry numbers of the five normalization groups; the last entry of
#: each group is the aggregate (residual) mass.
GROUPS = ((1, 2), (3, 4, 5), (6, 7, 8), (9, 10, 11), (12, 13, 14, 15))

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class TransitionTable:
    """The fifteen transition probabilities p1..p15."""

    p1: float
    p2: float
    p3: float
    p4: float
    p5: float
    p6: float
    p7: float
    p8: float
    p9: float
    p10: float
    p11: float
    p12: float
    p13: float
    p14: float
    p15: float

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{f.name} = {v} outside [0, 1]")
        for group in GROUPS:
            total = sum(self.entry(n) for n in group)
            if abs(total - 1.0) > _SUM_TOL:
                raise ValueError(f"group {group} sums to {total}, expected 1")

    def entry(self, n: int) -> float:
        return getattr(self, f"p{n}")

    def as_array(self) -> np.ndarray:
        return np.array([self.entry(n) for n in range(1, 16)], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "TransitionTable":
        if len(values) != 15:
            raise ValueError(f"expected 15 entries, got {len(values)}")
        return cls(*[float(v) for v in values])

    @classmethod
    def uniform(cls) -> "TransitionTable":
        """Uniform mass over each group's categories."""
        values = []
        for group in GROUPS:
            values.extend([1.0 / len(group)] * len(group))
        return cls.from_array(values)

    def to_json_dict(self) -> dict[str, float]:
        return {f"p{n}": self.entry(n) for n in range(1, 16)}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, float]) -> "TransitionTable":
        missing = [f"p{n}" for n in range(1, 16) if f"p{n}" not in data]
        if missing:
            raise ValueError(f"transition table is missing entries: {missing}")
        return cls(**{f"p{n}": float(data[f"p{n}"]) for n in range(1, 16)})

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TransitionTable":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def _group_layout(
    scene: Scene, i: int, k: int, l: Optional[int]
) -> tuple[dict[int, int], int, tuple[int, ...]]:
    """Specific-label entry map, aggregate entry, and residual set for (k, l)."""
    eligible = eligible_vfoa_labels(scene, i)
    if k == NO_TARGET:
        specific = {NO_TARGET: 1}
        aggregate = 2
    elif scene.is_passive(k):
        specific = {NO_TARGET: 3, k: 4}
        aggregate = 5
    else:  # k is an active target, k != i
        if l is None:
            raise ValueError(f"previous focus of active target {k} is required")
        if l == k:
            raise ValueError(f"active target {k} cannot have itself as focus")
        if l == NO_TARGET:
            specific = {NO_TARGET: 6, k: 7}
            aggregate = 8
        elif l == i:
            specific = {NO_TARGET: 9, k: 10}
            aggregate = 11
        else:
            specific = {NO_TARGET: 12, k: 13, l: 14}
            aggregate = 15
    residual = tuple(j for j in eligible if j not in specific)
    return specific, aggregate, residual


def transition_prob(
    table: TransitionTable,
    scene: Scene,
    i: int,
    j: int,
    k: int,
    l: Optional[int] = None,
) -> float:
    """Probability that person i switches focus to j given (k, l).

    k is i's previous label; l is the previous label of k itself and is
    required exactly when k is an active target. Aggregate masses are
    split uniformly over their residual label set; when that set is
    empty (tiny scenes) the mass is redistributed proportionally over
    the group's remaining categories so the row still sums to one.
    """
    eligible = eligible_vfoa_labels(scene, i)
    if j not in eligible:
        raise ValueError(f"label {j} is not eligible for person {i}")
    if k not in eligible:
        raise ValueError(f"previous label {k} is not eligible for person {i}")
    specific, aggregate, residual = _group_layout(scene, i, k, l)
    p_agg = table.entry(aggregate)
    if residual:
        if j in specific:
            return table.entry(specific[j])
        return p_agg / len(residual)
    # No residual labels: fold the aggregate mass back into the
    # specific categories, proportionally to their probabilities.
    mass = sum(table.entry(n) for n in specific.values())
    if j not in specific:  # unreachable for well-formed inputs
        raise ValueError(f"label {j} has no category under (k={k}, l={l})")
    if mass <= 0.0:
        return 1.0 / len(specific)
    return table.entry(specific[j]) / mass


def marginal_transition_prior(
    table: TransitionTable,
    scene: Scene,
    i: int,
    j: int,
    k: int,
    c_prev_k: Optional[Sequence[float]] = None,
) -> float:
    """P(next focus of i is j | previous focus k), marginalizing over l.

    For an active k the conditioning on k's own previous label l is
    marginalized against ``c_prev_k``, a distribution over k's eligible
    labels (in ascending label order). For passive k or k = 0 the value
    equals :func:`transition_prob` and ``c_prev_k`` is ignored.
    """
    if k == NO_TARGET or scene.is_passive(k):
        return transition_prob(table, scene, i, j, k)
    labels_k = eligible_vfoa_labels(scene, k)
    if c_prev_k is None:
        raise ValueError(f"distribution over previous labels of active target {k} is required")
    weights = np.asarray(c_prev_k, dtype=float)
    if weights.shape != (len(labels_k),):
        raise ValueError(f"distribution for target {k} has shape {weights.shape}, expected ({len(labels_k)},)")
    if abs(weights.sum() - 1.0) > 1e-6:
        raise ValueError(f"distribution for target {k} sums to {weights.sum()}, expected 1")
    total = 0.0
    for w, l in zip(weights, labels_k):
        if w > 0.0:
            total += w * transition_prob(table, scene, i, j, k, l)
    return total


def _closing_ratios(numerators: Sequence[int], denominator: int, smoothing: bool) -> list[float]:
    """Ratios n/d with the last entry closed to make the group sum exact."""
    if smoothing:
        numerators = [n + 1 for n in numerators]
        denominator = denominator + len(numerators)
    if denominator == 0:
        return [1.0 / len(numerators)] * len(numerators)
    values = [n / denominator for n in numerators[:-1]]
    values.append(1.0 - sum(values))
    return values


def _active_label_matrix(rec: Recording) -> np.ndarray:
    """Per-frame focus labels of every active target, shape (N, T).

    Tracked persons contribute their annotations; untracked active
    targets contribute their known per-frame labels.
    """
    scene = rec.scene
    T = rec.n_frames
    labels = np.full((scene.n_active, T), UNANNOTATED, dtype=np.int64)
    for person in scene.tracked_ids:
        ann = rec.annotations.get(person)
        if ann is None or np.any(ann == UNANNOTATED):
            raise ValueError(f"person {person} is not fully annotated; transition learning needs full annotation")
        labels[person - 1] = ann
    for uid in scene.untracked_active_ids:
        stream = np.fromiter(
            (obs.vfoa.get(uid, UNANNOTATED) for obs in rec.frames), dtype=np.int64, count=T
        )
        if np.any(stream == UNANNOTATED):
            raise ValueError(f"untracked active target {uid} lacks a focus label on some frames")
        labels[uid - 1] = stream
    return labels


def learn_table(data: RecordingSet, smoothing: bool = False) -> TransitionTable:
    """Counting estimators of the fifteen transition probabilities.

    Every transition of every tracked person is classified by the
    (k, l) case of its source frame and the Kronecker matches are
    accumulated over recordings, persons and frames. Groups whose
    denominator is zero fall back to a uniform split; ``smoothing``
    adds one pseudo-count per category instead.
    """
    num = np.zeros(16, dtype=np.int64)  # 1-based entry counts
    den = np.zeros(6, dtype=np.int64)  # 1-based group counts
    for rec in data.recordings:
        scene = rec.scene
        if rec.n_frames < 2:
            continue
        labels = _active_label_matrix(rec)
        n_active = scene.n_active
        for person in scene.tracked_ids:
            j = labels[person - 1, 1:]
            k = labels[person - 1, :-1]
            active_k = (k >= 1) & (k <= n_active)
            # Previous label of the previously watched person, where defined.
            l = np.full(k.shape, UNANNOTATED, dtype=np.int64)
            if np.any(active_k):
                l[active_k] = labels[k[active_k] - 1, np.nonzero(active_k)[0]]

            sel = k == NO_TARGET
            den[1] += int(sel.sum())
            num[1] += int((sel & (j == NO_TARGET)).sum())
            num[2] += int((sel & (j != NO_TARGET)).sum())

            sel = k > n_active
            den[2] += int(sel.sum())
            num[3] += int((sel & (j == NO_TARGET)).sum())
            num[4] += int((sel & (j == k)).sum())
            num[5] += int((sel & (j != NO_TARGET) & (j != k)).sum())

            for group, l_sel in ((3, active_k & (l == NO_TARGET)), (4, active_k & (l == person))):
                base = 3 * group - 3  # first entry of the group: 6 or 9
                den[group] += int(l_sel.sum())
                num[base] += int((l_sel & (j == NO_TARGET)).sum())
                num[base + 1] += int((l_sel & (j == k)).sum())
                num[base + 2] += int((l_sel & (j != NO_TARGET) & (j != k)).sum())

            sel = active_k & (l != NO_TARGET) & (l != person)
            den[5] += int(sel.sum())
            num[12] += int((sel & (j == NO_TARGET)).sum())
            num[13] += int((sel & (j == k)).sum())
            num[14] += int((sel & (j == l)).sum())
            num[15] += int((sel & (j != NO_TARGET) & (j != k) & (j != l)).sum())

    values: list[float] = []
    for g_idx, group in enumerate(GROUPS, start=1):
        counts = [int(num[n]) for n in group]
        if sum(counts) != int(den[g_idx]):  # pragma: no cover - internal consistency
            raise AssertionError(f"group {group} counts {counts} do not partition denominator {den[g_idx]}")
        values.extend(_closing_ratios(counts, int(den[g_idx]), smoothing))
    return TransitionTable.from_array(values)
