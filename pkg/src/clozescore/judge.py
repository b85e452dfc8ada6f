"""Constraint-satisfaction scoring by an LLM judge ensemble.

Each (model, group, constraint) triple is scored independently by every
judge. Raw scores are capped when the judge reports a knockout (mandatory
wording violated), normalized to [0, 1] and averaged across judges. Group
satisfy is the soft mean or the bucket minimum over constraint scores.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .providers import ProviderClient, ProviderConfig
from .testset import CascadeEdge, Constraint, FilledResponse, TestSet, group_filling_text

logger = logging.getLogger(__name__)


class JudgeOutputError(ValueError):
    pass


class EnsembleError(ValueError):
    pass


class ScaleKind(str, Enum):
    SIX_POINT = "six_point"
    THREE_TIER = "three_tier"

    @property
    def domain(self) -> tuple[float, ...]:
        if self is ScaleKind.SIX_POINT:
            return (0, 1, 2, 3, 4, 5)
        return (0.0, 0.5, 1.0)

    @property
    def maximum(self) -> float:
        return self.domain[-1]

    @property
    def knockout_cap(self) -> float:
        return 1 if self is ScaleKind.SIX_POINT else 0.5

    def normalize(self, value: float) -> float:
        return value / self.maximum

    @property
    def short(self) -> str:
        return "6pt" if self is ScaleKind.SIX_POINT else "3tier"


ANCHORS = {
    ScaleKind.SIX_POINT: (
        "0 = completely absent or conflicts with constraint",
        "1 = only sparse traces",
        "2 = halfway there",
        "3 = largely satisfied but with minor flaws",
        "4 = fully satisfied without flaws",
        "5 = fully satisfied and elegantly executed",
    ),
    ScaleKind.THREE_TIER: (
        "0 = not satisfied, or contradicts the constraint",
        "0.5 = partially satisfied",
        "1.0 = fully satisfied",
    ),
}

KNOCKOUT_CLAUSE = (
    "Knockout rule: this constraint contains mandatory wording. If the passage violates any "
    "mandatory part of it, answer KNOCKOUT: yes and give a score no higher than {cap}, "
    "however well the rest is written. Otherwise answer KNOCKOUT: no."
)

REPROMPT_SUFFIX = (
    "\n\nYour previous answer could not be read. End your answer with exactly two lines:\n"
    "SCORE: <value>\nKNOCKOUT: yes|no"
)


@dataclass(frozen=True)
class JudgeRecord:
    judge_id: str
    model_id: str
    group_id: int
    constraint_id: str
    raw: float
    knockout_triggered: bool
    capped: float
    scale: ScaleKind = ScaleKind.SIX_POINT

    @property
    def normalized(self) -> float:
        return self.scale.normalize(self.capped)


@dataclass(frozen=True)
class JudgeDrop:
    judge_id: str
    model_id: str
    group_id: int
    constraint_id: str
    reason: str


@dataclass(frozen=True)
class ConstraintScore:
    model_id: str
    group_id: int
    constraint_id: str
    value: float
    judges: tuple[str, ...]


@dataclass(frozen=True)
class GroupSatisfy:
    model_id: str
    group_id: int
    value: float
    aggregation: str


@dataclass(frozen=True)
class CascadeScore:
    model_id: str
    from_group: int
    to_group: int
    value: float
    judges: tuple[str, ...] = ()


def _fmt(v: float) -> str:
    return f"{v:g}"


def build_judge_prompt(passage: str, c: Constraint, scale: ScaleKind) -> str:
    if not passage.strip() or not c.text.strip():
        raise ValueError("judge prompt needs a passage and a constraint text")
    lines = [
        "You are grading a passage from a story written by a fill-in-the-blank participant.",
        "Decide how well the passage satisfies the constraint below. Judge only the constraint, "
        "not style or length.",
        "",
        "Passage:",
        passage,
        "",
        f"Constraint: {c.text}",
        "",
        "Scoring scale:",
        *ANCHORS[scale],
    ]
    if c.knockout:
        lines += ["", KNOCKOUT_CLAUSE.format(cap=_fmt(scale.knockout_cap))]
    lines += [
        "",
        "Give a short rationale, then end with exactly two lines:",
        f"SCORE: <one of {', '.join(_fmt(v) for v in scale.domain)}>",
        "KNOCKOUT: yes|no",
    ]
    return "\n".join(lines)


def build_cascade_prompt(upstream: str, downstream: str, criterion: str, scale: ScaleKind) -> str:
    if not criterion or not criterion.strip():
        raise ValueError("cascade criterion is empty")
    return "\n".join([
        "You are checking two passages of the same story for logical consistency.",
        "",
        "Earlier passage:",
        upstream,
        "",
        "Later passage:",
        downstream,
        "",
        f"Consistency criterion: {criterion}",
        "",
        "Scoring scale:",
        *ANCHORS[scale],
        "",
        "Give a short rationale, then end with exactly two lines:",
        f"SCORE: <one of {', '.join(_fmt(v) for v in scale.domain)}>",
        "KNOCKOUT: no",
    ])


_SCORE = re.compile(r"^\s*\**\s*SCORE\s*\**\s*[:：]\s*\**\s*([-+]?\d+(?:\.\d+)?)", re.IGNORECASE | re.MULTILINE)
_KNOCKOUT = re.compile(r"^\s*\**\s*KNOCKOUT\s*\**\s*[:：]\s*\**\s*(yes|no|true|false)", re.IGNORECASE | re.MULTILINE)


def parse_judge_output(text: str, scale: ScaleKind, source: str = "judge") -> tuple[float, bool]:
    """Last ``SCORE:`` and ``KNOCKOUT:`` lines; a missing knockout line reads as no."""
    scores = _SCORE.findall(text)
    if not scores:
        raise JudgeOutputError(f"{source}: no SCORE line in judge output")
    value = float(scores[-1])
    match = [d for d in scale.domain if abs(d - value) < 1e-9]
    if not match:
        raise JudgeOutputError(f"{source}: score {scores[-1]} is outside the {scale.value} domain")
    knocks = _KNOCKOUT.findall(text)
    triggered = bool(knocks) and knocks[-1].lower() in ("yes", "true")
    return match[0], triggered


def apply_knockout(raw: float, triggered: bool, scale: ScaleKind) -> float:
    if triggered:
        return min(raw, scale.knockout_cap)
    return raw


def ensemble_constraint_score(records: Sequence[JudgeRecord]) -> ConstraintScore:
    if not records:
        raise EnsembleError("no judge records to ensemble")
    first = records[0]
    triple = (first.model_id, first.group_id, first.constraint_id)
    for r in records:
        if (r.model_id, r.group_id, r.constraint_id) != triple:
            raise EnsembleError(f"records span more than one triple: {triple} vs "
                                f"{(r.model_id, r.group_id, r.constraint_id)}")
        if r.scale is not first.scale:
            raise EnsembleError("records mix scoring scales")
    # one division keeps e.g. {1, 4, 4} -> 9/15 == 0.6 exact
    value = sum(r.capped for r in records) / (len(records) * first.scale.maximum)
    return ConstraintScore(*triple, value=value, judges=tuple(r.judge_id for r in records))


def group_satisfy(scores: Sequence[ConstraintScore], aggregation: str = "soft_mean",
                  constraint_ids: Iterable[str] | None = None) -> GroupSatisfy:
    if not scores:
        raise EnsembleError("group has no constraint scores")
    if constraint_ids is not None:
        missing = set(constraint_ids) - {s.constraint_id for s in scores}
        if missing:
            raise EnsembleError(f"missing constraint score(s): {sorted(missing)}")
    values = [s.value for s in scores]
    if aggregation == "soft_mean":
        value = sum(values) / len(values)
    elif aggregation == "bucket":
        value = min(values)
    else:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    return GroupSatisfy(scores[0].model_id, scores[0].group_id, value, aggregation)


# ---------------------------------------------------------------------------
# running the ensemble


@dataclass
class JudgeOutcome:
    records: list[JudgeRecord] = field(default_factory=list)
    drops: list[JudgeDrop] = field(default_factory=list)


class JudgePanel:
    """A judge ensemble bound to a provider client."""

    def __init__(self, client: ProviderClient, judges: Sequence[ProviderConfig], parallelism: int = 4):
        if not judges:
            raise ValueError("judge panel needs at least one judge")
        self.client = client
        self.judges = list(judges)
        self.parallelism = max(1, parallelism)

    def _ask(self, judge: ProviderConfig, prompt: str, scale: ScaleKind, source: str) -> tuple[float, bool]:
        text = self.client.chat_complete(judge, prompt)
        try:
            return parse_judge_output(text, scale, source)
        except JudgeOutputError:
            logger.info("%s: unreadable judge output, reprompting once", source)
        return parse_judge_output(self.client.chat_complete(judge, prompt + REPROMPT_SUFFIX), scale, source)

    def _score_one(self, task) -> JudgeRecord | JudgeDrop:
        judge, model_id, group_id, c, passage, scale = task
        source = f"{judge.name}/{model_id}/G{group_id}/{c.constraint_id}"
        try:
            raw, triggered = self._ask(judge, build_judge_prompt(passage, c, scale), scale, source)
        except JudgeOutputError as exc:
            return JudgeDrop(judge.name, model_id, group_id, c.constraint_id, str(exc))
        # only authored knockout constraints can be capped
        triggered = triggered and c.knockout
        return JudgeRecord(judge.name, model_id, group_id, c.constraint_id, raw, triggered,
                           apply_knockout(raw, triggered, scale), scale)

    def score_responses(self, ts: TestSet, responses: Sequence[FilledResponse],
                        scale: ScaleKind) -> JudgeOutcome:
        tasks = []
        for r in responses:
            for g in ts.groups:
                passage = group_filling_text(ts, r, g.group_id)
                for c in g.constraints:
                    for judge in self.judges:
                        tasks.append((judge, r.model_id, g.group_id, c, passage, scale))
        outcome = JudgeOutcome()
        with ThreadPoolExecutor(self.parallelism) as pool:
            for item in pool.map(self._score_one, tasks):
                (outcome.drops if isinstance(item, JudgeDrop) else outcome.records).append(item)
        return outcome

    def cascade_consistency(self, ts: TestSet, r: FilledResponse, edge: CascadeEdge,
                            scale: ScaleKind = ScaleKind.SIX_POINT) -> CascadeScore | None:
        """Ensemble verdict on one cascade edge; reported only, never added to totals."""
        prompt = build_cascade_prompt(group_filling_text(ts, r, edge.from_group),
                                      group_filling_text(ts, r, edge.to_group), edge.criterion, scale)
        values, used = [], []
        for judge in self.judges:
            source = f"{judge.name}/{r.model_id}/G{edge.from_group}->G{edge.to_group}"
            try:
                raw, _ = self._ask(judge, prompt, scale, source)
            except JudgeOutputError as exc:
                logger.warning("dropping cascade verdict: %s", exc)
                continue
            values.append(scale.normalize(raw))
            used.append(judge.name)
        if not values:
            return None
        return CascadeScore(r.model_id, edge.from_group, edge.to_group, sum(values) / len(values), tuple(used))


def cascade_consistency(ts: TestSet, r: FilledResponse, edge: CascadeEdge, judges: Sequence[ProviderConfig],
                        client: ProviderClient, scale: ScaleKind = ScaleKind.SIX_POINT) -> CascadeScore:
    score = JudgePanel(client, judges).cascade_consistency(ts, r, edge, scale)
    if score is None:
        raise JudgeOutputError(f"no judge produced a readable cascade verdict for "
                               f"G{edge.from_group}->G{edge.to_group}")
    return score


def constraint_scores(records: Iterable[JudgeRecord]) -> dict[tuple[str, int, str], ConstraintScore]:
    grouped: dict[tuple[str, int, str], list[JudgeRecord]] = {}
    for r in records:
        grouped.setdefault((r.model_id, r.group_id, r.constraint_id), []).append(r)
    return {k: ensemble_constraint_score(v) for k, v in sorted(grouped.items())}

