"""Embedding-space surprise.

For each blank, every model's filling embedding is unitized and compared to
the unitized centroid of the cohort by cosine distance. Raw distances are
divided by the largest distance at that blank so the most divergent model
scores 1. Group surprise is the mean over the group's blanks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

EPS = 1e-9
NORM_FLOOR = 1e-12


class SurpriseError(ValueError):
    pass


def unitize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n <= NORM_FLOOR:
        raise SurpriseError("cannot unitize a near-zero vector")
    return v / n


@dataclass
class BlankCohort:
    blank_id: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.entries:
            raise SurpriseError(f"blank {self.blank_id}: cohort is empty")
        dims = {v.shape for v in self.entries.values()}
        if len(dims) != 1:
            raise SurpriseError(f"blank {self.blank_id}: embeddings differ in dimension")
        for m, v in self.entries.items():
            if abs(np.linalg.norm(v) - 1.0) > 1e-6:
                raise SurpriseError(f"blank {self.blank_id}: embedding for {m} is not unit norm")


def centroid(c: BlankCohort | Iterable[np.ndarray]) -> np.ndarray:
    vectors = list(c.entries.values()) if isinstance(c, BlankCohort) else [np.asarray(v, float) for v in c]
    mean = np.mean(np.stack(vectors), axis=0)
    if np.linalg.norm(mean) <= NORM_FLOOR:
        raise SurpriseError("cohort mean is degenerate (embeddings cancel out)")
    return unitize(mean)


def cosine_distance(v, c) -> float:
    v, c = np.asarray(v, float), np.asarray(c, float)
    if v.shape != c.shape:
        raise SurpriseError(f"dimension mismatch: {v.shape} vs {c.shape}")
    return float(1.0 - np.dot(v, c))


def normalize_per_blank(distances: Mapping[str, float]) -> dict[str, float]:
    """d / max(d); an all-(near-)zero blank normalizes to all zeros."""
    if not distances:
        return {}
    top = max(distances.values())
    if top < EPS:
        return {m: 0.0 for m in distances}
    return {m: d / top for m, d in distances.items()}


@dataclass
class SurpriseTable:
    raw: dict[int, dict[str, float]] = field(default_factory=dict)
    normalized: dict[int, dict[str, float]] = field(default_factory=dict)
    groups: dict[int, dict[str, float]] = field(default_factory=dict)

    def rows(self) -> list[tuple[int, str, float, float]]:
        return [(k, m, self.raw[k][m], self.normalized[k][m])
                for k in sorted(self.raw) for m in sorted(self.raw[k])]


def group_surprise(normalized: Mapping[int, Mapping[str, float]], blank_ids: Iterable[int], model_id: str) -> float:
    values = []
    for k in blank_ids:
        try:
            values.append(normalized[k][model_id])
        except KeyError:
            raise SurpriseError(f"no normalized surprise for model {model_id} at blank {k}") from None
    if not values:
        raise SurpriseError("group has no blanks")
    return sum(values) / len(values)


def blank_distances(embeddings: Mapping[str, np.ndarray], exclude_from_centroid: Iterable[str] = ()) -> dict[str, float]:
    """Raw cosine distance of each model's unitized embedding to the cohort centroid.

    Models in ``exclude_from_centroid`` are still scored but do not pull the
    centroid.
    """
    units = {m: unitize(v) for m, v in embeddings.items()}
    excluded = set(exclude_from_centroid)
    members = [u for m, u in units.items() if m not in excluded]
    if not members:
        raise SurpriseError("every model is excluded from the centroid")
    center = centroid(members)
    # clip tiny negatives from rounding when a vector equals the centroid
    return {m: max(0.0, cosine_distance(u, center)) for m, u in units.items()}


def build_surprise_table(embeddings: Mapping[int, Mapping[str, np.ndarray]],
                         groups: Mapping[int, Iterable[int]],
                         models: Iterable[str],
                         exclude_from_centroid: Iterable[str] = ()) -> SurpriseTable:
    """``embeddings[blank][model]`` -> full table.

    A model absent from a blank's cohort (unfilled blank) gets normalized
    surprise 0 there.
    """
    models = sorted(models)
    table = SurpriseTable()
    for k in sorted(embeddings):
        raw = blank_distances(embeddings[k], exclude_from_centroid) if embeddings[k] else {}
        table.raw[k] = raw
        norm = normalize_per_blank(raw)
        table.normalized[k] = {m: norm.get(m, 0.0) for m in models}
    for g, blanks in groups.items():
        blanks = list(blanks)
        table.groups[g] = {m: group_surprise(table.normalized, blanks, m) for m in models}
    return table
