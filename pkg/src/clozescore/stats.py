"""Reliability and robustness statistics.

Krippendorff's alpha with the interval metric, Spearman's rho with average
ranks for ties, and the pairwise Spearman matrix over scoring configurations.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations
from typing import Hashable, Mapping, Sequence

import numpy as np

from .judge import ScaleKind
from .scoring import CompositeScheme


class StatsError(ValueError):
    pass


def interval_metric(a: float, b: float) -> float:
    return (a - b) ** 2


@dataclass
class ReliabilityMatrix:
    """Partial map (item, rater) -> value; missing cells are simply absent."""

    values: dict[tuple[Hashable, Hashable], float]

    @property
    def items(self) -> list:
        return sorted({i for i, _ in self.values}, key=repr)

    @property
    def raters(self) -> list:
        return sorted({r for _, r in self.values}, key=repr)

    def units(self) -> dict[Hashable, list[float]]:
        out: dict[Hashable, list[float]] = defaultdict(list)
        for (item, _), v in sorted(self.values.items(), key=lambda kv: repr(kv[0])):
            out[item].append(float(v))
        return dict(out)

    def pairable(self) -> dict[Hashable, list[float]]:
        return {i: vs for i, vs in self.units().items() if len(vs) >= 2}

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float | None]], raters: Sequence[Hashable] | None = None):
        """Rows are items, columns raters; ``None`` or NaN marks a missing rating."""
        values = {}
        for i, row in enumerate(rows):
            for j, v in enumerate(row):
                if v is None or (isinstance(v, float) and math.isnan(v)):
                    continue
                values[(i, raters[j] if raters else j)] = float(v)
        return cls(values)


def krippendorff_alpha(m: ReliabilityMatrix, metric=interval_metric) -> float:
    """alpha = 1 - D_o / D_e via the coincidence matrix over pairable values."""
    if len(m.raters) < 2:
        raise StatsError("alpha needs at least two raters")
    units = m.pairable()
    if not units:
        raise StatsError("alpha needs at least one item with two or more ratings")
    labels = sorted({v for vs in units.values() for v in vs})
    index = {v: i for i, v in enumerate(labels)}
    coincidence = np.zeros((len(labels), len(labels)))
    for vs in units.values():
        counts = np.zeros(len(labels))
        for v in vs:
            counts[index[v]] += 1
        pairs = np.outer(counts, counts) - np.diag(counts)
        coincidence += pairs / (len(vs) - 1)
    n_c = coincidence.sum(axis=1)
    n = n_c.sum()
    delta = np.array([[metric(a, b) for b in labels] for a in labels])
    d_o = float((coincidence * delta).sum() / n)
    d_e = float((np.outer(n_c, n_c) * delta).sum() / (n * (n - 1)))
    if d_e <= 0:
        raise StatsError("expected disagreement is zero (all values identical); alpha is undefined")
    return 1.0 - d_o / d_e


def drift_diagnostic(m: ReliabilityMatrix) -> tuple[float, float]:
    """Mean squared difference over rating pairs within items and across items."""
    if len(m.raters) < 2:
        raise StatsError("drift diagnostic needs at least two raters")
    units = m.pairable()
    if not units:
        raise StatsError("drift diagnostic needs at least one item with two or more ratings")
    if len(units) < 2:
        raise StatsError("between-item disagreement needs at least two items")
    within_sum, within_n = 0.0, 0
    for vs in units.values():
        for a, b in combinations(vs, 2):
            within_sum += interval_metric(a, b)
            within_n += 1
    values = np.array([v for vs in units.values() for v in vs])
    n = len(values)
    # sum of (a - b)^2 over all unordered pairs is n*sum(a^2) - (sum a)^2
    all_pairs_sum = n * float((values ** 2).sum()) - float(values.sum()) ** 2
    between_sum = all_pairs_sum - within_sum
    between_n = n * (n - 1) // 2 - within_n
    return within_sum / within_n, between_sum / between_n


def rankdata(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) != len(y):
        raise StatsError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise StatsError("spearman needs at least two observations")
    if len(set(x)) < 2 or len(set(y)) < 2:
        raise StatsError("spearman is undefined for a constant sequence")
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    rho = float((rx * ry).sum() / math.sqrt((rx * rx).sum() * (ry * ry).sum()))
    return max(-1.0, min(1.0, rho))


# ---------------------------------------------------------------------------
# scoring configurations


@dataclass(frozen=True)
class ScoringConfig:
    scale: ScaleKind
    aggregation: str  # "soft_mean" | "bucket"
    scheme: CompositeScheme

    def __post_init__(self):
        if self.aggregation not in ("soft_mean", "bucket"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")

    @property
    def id(self) -> str:
        agg = "soft" if self.aggregation == "soft_mean" else "bucket"
        return f"{self.scale.short}-{agg}-{self.scheme.id}"

    @classmethod
    def parse(cls, text: str) -> "ScoringConfig":
        try:
            scale, agg, scheme = text.strip().split("-", 2)
        except ValueError:
            raise ValueError(f"config id must look like 6pt-soft-C1, got {text!r}") from None
        scales = {"6pt": ScaleKind.SIX_POINT, "3tier": ScaleKind.THREE_TIER}
        aggs = {"soft": "soft_mean", "bucket": "bucket"}
        if scale not in scales or agg not in aggs:
            raise ValueError(f"bad config id {text!r}")
        return cls(scales[scale], aggs[agg], CompositeScheme.parse(scheme))


MAIN_CONFIG = ScoringConfig(ScaleKind.SIX_POINT, "soft_mean", CompositeScheme("C", 1.0))


def default_config_grid() -> list[ScoringConfig]:
    """Fourteen configurations around the main one.

    six-point x {soft, bucket} x {C0.5, C1, C1.5, A, D}, three-tier x
    {soft, bucket} x C1, six-point soft B, and the naive baseline
    (three-tier, bucket, hard-gated B).
    """
    six, three = ScaleKind.SIX_POINT, ScaleKind.THREE_TIER
    schemes = [CompositeScheme("C", 0.5), CompositeScheme("C", 1.0), CompositeScheme("C", 1.5),
               CompositeScheme("A"), CompositeScheme("D")]
    grid = [ScoringConfig(six, agg, s) for agg in ("soft_mean", "bucket") for s in schemes]
    grid += [ScoringConfig(three, agg, CompositeScheme("C", 1.0)) for agg in ("soft_mean", "bucket")]
    grid += [ScoringConfig(six, "soft_mean", CompositeScheme("B")),
             ScoringConfig(three, "bucket", CompositeScheme("B"))]
    return grid


def parse_configs(text: str | None) -> list[ScoringConfig]:
    if not text or text == "default":
        return default_config_grid()
    if text == "main":
        return [MAIN_CONFIG]
    configs = [ScoringConfig.parse(t) for t in text.split(",") if t.strip()]
    if len({c.id for c in configs}) != len(configs):
        raise ValueError("duplicate configuration ids")
    return configs


@dataclass
class RobustnessMatrix:
    configs: list[str]
    cells: np.ndarray

    def value(self, a: str, b: str) -> float:
        return float(self.cells[self.configs.index(a), self.configs.index(b)])


def robustness_matrix(totals_by_config: Mapping[str, Mapping[str, float]]) -> RobustnessMatrix:
    """Pairwise Spearman over model totals; keys are config ids, values model -> total."""
    ids = list(totals_by_config)
    if not ids:
        raise StatsError("no configurations")
    models = sorted(totals_by_config[ids[0]])
    for cid in ids[1:]:
        if sorted(totals_by_config[cid]) != models:
            raise StatsError(f"config {cid} scores a different model set")
    cells = np.eye(len(ids))
    vectors = [[totals_by_config[c][m] for m in models] for c in ids]
    for i, j in combinations(range(len(ids)), 2):
        try:
            rho = spearman(vectors[i], vectors[j])
        except StatsError:
            # a configuration that cannot separate any models has no rank correlation
            rho = float("nan")
        cells[i, j] = cells[j, i] = rho
    return RobustnessMatrix(ids, cells)
