"""Centroid geometry of embeddings grouped by subject and task."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np


class UndefinedDistance(ValueError):
    """A common-subject or common-task distance has no pairs to average."""


@dataclass
class CentroidTable:
    """(subject, task) -> centroid; ``counts`` gives the number of embeddings per cell."""

    centroids: dict[tuple[str, str], np.ndarray]
    counts: dict[tuple[str, str], int]

    @property
    def subjects(self) -> list[str]:
        return sorted({s for s, _ in self.centroids})

    @property
    def tasks(self) -> list[str]:
        return sorted({t for _, t in self.centroids})


@dataclass
class GeometryReport:
    d_cs: float | None
    d_ct: float | None
    per_subject_terms: dict[str, float]
    per_task_terms: dict[str, float]
    excluded_subjects: list[str]
    excluded_tasks: list[str]
    undefined: list[str]

    def to_dict(self) -> dict:
        return asdict(self)


def centroids(emb, subjects, tasks) -> CentroidTable:
    """Arithmetic mean embedding of every observed (subject, task) cell."""
    x = np.asarray(getattr(emb, "data", emb), dtype=float)
    subjects = [str(s) for s in subjects]
    tasks = [str(t) for t in tasks]
    if not len(subjects) == len(tasks) == x.shape[0]:
        raise ValueError(
            f"label lengths ({len(subjects)}, {len(tasks)}) do not match {x.shape[0]} embeddings")
    groups: dict[tuple[str, str], list[int]] = {}
    for i, key in enumerate(zip(subjects, tasks)):
        groups.setdefault(key, []).append(i)
    return CentroidTable(
        {k: x[idx].mean(axis=0) for k, idx in sorted(groups.items())},
        {k: len(idx) for k, idx in sorted(groups.items())},
    )


def _mean_pairwise(vectors: list[np.ndarray]) -> float:
    # ordered pairs t1 != t2 over n(n-1), as in the definition
    n = len(vectors)
    total = 0.0
    for a, b in itertools.combinations(vectors, 2):
        total += 2.0 * float(np.linalg.norm(a - b))
    return total / (n * (n - 1))


def cluster_distances(table: CentroidTable, strict: bool = False) -> GeometryReport:
    """Common-subject and common-task centroid distances.

    ``d_cs`` averages, over subjects with at least two tasks, the mean Euclidean
    distance between that subject's task centroids; ``d_ct`` is the same with the
    roles swapped. Groups without a pair are excluded and listed. When no group
    qualifies the distance is ``None`` (or :class:`UndefinedDistance` is raised
    with ``strict=True``).
    """
    per_subject, per_task = {}, {}
    excl_s, excl_t = [], []
    for s in table.subjects:
        vecs = [table.centroids[(s, t)] for t in table.tasks if (s, t) in table.centroids]
        if len(vecs) >= 2:
            per_subject[s] = _mean_pairwise(vecs)
        else:
            excl_s.append(s)
    for t in table.tasks:
        vecs = [table.centroids[(s, t)] for s in table.subjects if (s, t) in table.centroids]
        if len(vecs) >= 2:
            per_task[t] = _mean_pairwise(vecs)
        else:
            excl_t.append(t)
    undefined = []
    if not per_subject:
        undefined.append("d_cs: no subject has two or more task centroids")
    if not per_task:
        undefined.append("d_ct: no task has two or more subject centroids")
    if strict and undefined:
        raise UndefinedDistance("; ".join(undefined))
    return GeometryReport(
        d_cs=float(np.mean(list(per_subject.values()))) if per_subject else None,
        d_ct=float(np.mean(list(per_task.values()))) if per_task else None,
        per_subject_terms=per_subject,
        per_task_terms=per_task,
        excluded_subjects=excl_s,
        excluded_tasks=excl_t,
        undefined=undefined,
    )


def pca2d(emb) -> np.ndarray:
    """Project mean-centered embeddings onto their top two principal directions.

    Each direction's sign is fixed so that its largest-magnitude loading is
    positive.
    """
    x = np.asarray(getattr(emb, "data", emb), dtype=float)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("pca2d needs at least 3 embeddings")
    if x.shape[1] < 2:
        raise ValueError("pca2d needs embeddings with at least 2 dimensions")
    xc = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:2].copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return xc @ comps.T


def pca_csv(coords: np.ndarray, subjects=None, tasks=None) -> str:
    n = len(coords)
    subjects = [""] * n if subjects is None else [str(s) for s in subjects]
    tasks = [""] * n if tasks is None else [str(t) for t in tasks]
    lines = ["epoch_index,x,y,subject_id,task_id"]
    for i, ((x, y), s, t) in enumerate(zip(coords, subjects, tasks)):
        lines.append(f"{i},{x:.17g},{y:.17g},{s},{t}")
    return "\n".join(lines) + "\n"
