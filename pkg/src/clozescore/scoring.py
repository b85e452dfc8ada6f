"""Composite calibrated-surprise scores, totals and the leaderboard."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence


@dataclass(frozen=True)
class CompositeScheme:
    variant: str  # "A" | "B" | "C" | "D"
    lam: float | None = None

    def __post_init__(self):
        if self.variant not in ("A", "B", "C", "D"):
            raise ValueError(f"unknown scheme {self.variant!r}")
        if self.variant == "C":
            if self.lam is None:
                object.__setattr__(self, "lam", 1.0)
            if not self.lam > 0:
                raise ValueError("scheme C needs lambda > 0")
        elif self.lam is not None:
            raise ValueError(f"scheme {self.variant} takes no lambda")

    @property
    def id(self) -> str:
        return f"C{self.lam:g}" if self.variant == "C" else self.variant

    @classmethod
    def parse(cls, text: str) -> "CompositeScheme":
        text = text.strip()
        if text.startswith("C") and len(text) > 1:
            return cls("C", float(text[1:]))
        return cls(text)


SCHEME_C1 = CompositeScheme("C", 1.0)


def composite(satisfy: float, surprise: float, scheme: CompositeScheme = SCHEME_C1) -> float:
    s, u = satisfy, surprise
    if scheme.variant == "C":
        return s * (1.0 + scheme.lam * u)
    if scheme.variant == "A":
        return s ** 1.5 * u
    if scheme.variant == "B":
        if s == 0 or u == 0:
            return 0.0
        return 2.0 * s * u / (s + u)
    return math.sqrt(s * u)


@dataclass(frozen=True)
class GroupScore:
    model_id: str
    group_id: int
    satisfy: float
    surprise: float
    composite: float


def group_score(model_id: str, group_id: int, satisfy: float, surprise: float,
                scheme: CompositeScheme = SCHEME_C1) -> GroupScore:
    return GroupScore(model_id, group_id, satisfy, surprise, composite(satisfy, surprise, scheme))


@dataclass
class ModelTotal:
    model_id: str
    total: float
    satisfy_mean: float
    surprise_mean: float
    groups: dict[int, float] = field(default_factory=dict)
    rank: int = 0


def model_total(scores: Sequence[GroupScore], group_ids: Iterable[int] | None = None) -> ModelTotal:
    if not scores:
        raise ValueError("no group scores")
    model_ids = {s.model_id for s in scores}
    if len(model_ids) != 1:
        raise ValueError(f"group scores span several models: {sorted(model_ids)}")
    by_group = {s.group_id: s for s in scores}
    if group_ids is not None:
        missing = set(group_ids) - by_group.keys()
        if missing:
            raise ValueError(f"{scores[0].model_id}: missing group(s) {sorted(missing)}")
    ordered = [by_group[g] for g in sorted(by_group)]
    n = len(ordered)
    return ModelTotal(
        model_id=scores[0].model_id,
        total=math.fsum(s.composite for s in ordered),
        satisfy_mean=math.fsum(s.satisfy for s in ordered) / n,
        surprise_mean=math.fsum(s.surprise for s in ordered) / n,
        groups={s.group_id: s.composite for s in ordered},
    )


def score_models(satisfy: Mapping[str, Mapping[int, float]], surprise: Mapping[str, Mapping[int, float]],
                 scheme: CompositeScheme = SCHEME_C1) -> list[ModelTotal]:
    """Per-group satisfy/surprise tables (model -> group -> value) to a ranked leaderboard."""
    totals = []
    for m in sorted(satisfy):
        groups = sorted(satisfy[m])
        totals.append(model_total([group_score(m, g, satisfy[m][g], surprise[m][g], scheme) for g in groups],
                                  groups))
    return leaderboard(totals)


def leaderboard(totals: Iterable[ModelTotal]) -> list[ModelTotal]:
    """Descending total; ties go to the higher satisfy mean, then model id."""
    ordered = sorted(totals, key=lambda t: (-t.total, -t.satisfy_mean, t.model_id))
    for i, t in enumerate(ordered, 1):
        t.rank = i
    return ordered
