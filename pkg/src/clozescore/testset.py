"""Cascade-constrained multi-blank cloze test sets.

A test set is a story skeleton (fixed text interleaved with numbered blank
slots), a partition of the blanks into groups that share constraint
conditions, and a DAG of cascade edges between groups.

Evaluated models are asked to tag each filling inline as ``⟦k: filling⟧``.
Untagged transcripts fall back to aligning the raw text against the fixed
skeleton segments.
"""

from __future__ import annotations

import difflib
import hashlib
import heapq
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

MARK_OPEN = "⟦"
MARK_CLOSE = "⟧"

# fraction of fixed anchors that must be located for fallback alignment
MIN_ANCHOR_FRACTION = 0.8

UNFILLED = "____"


class TestSetError(ValueError):
    """Raised when a test-set document cannot be loaded."""

    __test__ = False


class ResponseParseError(ValueError):
    """Raised when fillings cannot be extracted from a model transcript."""

    def __init__(self, message: str, missing: Iterable[int] = ()):
        super().__init__(message)
        self.missing = tuple(missing)


@dataclass(frozen=True)
class StorySegment:
    kind: str  # "text" | "blank"
    text: str = ""
    blank_id: int | None = None

    @classmethod
    def fixed(cls, text: str) -> "StorySegment":
        return cls(kind="text", text=text)

    @classmethod
    def blank(cls, blank_id: int) -> "StorySegment":
        return cls(kind="blank", blank_id=blank_id)

    @property
    def is_blank(self) -> bool:
        return self.kind == "blank"


@dataclass(frozen=True)
class Constraint:
    constraint_id: str
    text: str
    knockout: bool = False


@dataclass(frozen=True)
class BlankGroup:
    group_id: int
    blank_ids: tuple[int, ...]
    constraints: tuple[Constraint, ...]


@dataclass(frozen=True)
class CascadeEdge:
    from_group: int
    to_group: int
    criterion: str = ""


@dataclass(frozen=True)
class TestSet:
    id: str
    language: str
    segments: tuple[StorySegment, ...]
    groups: tuple[BlankGroup, ...]
    edges: tuple[CascadeEdge, ...] = ()

    __test__ = False

    @property
    def blank_ids(self) -> list[int]:
        return [s.blank_id for s in self.segments if s.is_blank]

    @property
    def n_blanks(self) -> int:
        return len(self.blank_ids)

    @property
    def group_ids(self) -> list[int]:
        return [g.group_id for g in self.groups]

    def group(self, group_id: int) -> BlankGroup:
        for g in self.groups:
            if g.group_id == group_id:
                return g
        raise KeyError(f"unknown group id {group_id}")

    def constraints(self) -> list[tuple[int, Constraint]]:
        return [(g.group_id, c) for g in self.groups for c in g.constraints]

    def marker_width(self) -> int:
        return max(2, len(str(max(self.blank_ids, default=0))))

    def digest(self) -> str:
        """sha256 over the canonical JSON form; stable across load/dump."""
        text = json.dumps(dump_testset(self), sort_keys=True, ensure_ascii=False,
                          separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class FilledResponse:
    model_id: str
    fillings: Mapping[int, str]
    missing: tuple[int, ...] = ()

    @property
    def complete(self) -> bool:
        return not self.missing


@dataclass(frozen=True)
class Finding:
    code: str
    message: str
    ids: tuple[Any, ...] = ()


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)
    topological_order: list[int] | None = None

    @property
    def ok(self) -> bool:
        return not self.findings

    def codes(self) -> set[str]:
        return {f.code for f in self.findings}


# ---------------------------------------------------------------------------
# loading


def _require(obj: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in obj:
        raise TestSetError(f"{where}: missing key {key!r}")
    return obj[key]


def parse_testset(doc: Mapping[str, Any]) -> TestSet:
    if not isinstance(doc, Mapping):
        raise TestSetError("test set document must be a JSON object")
    try:
        segments = []
        for i, seg in enumerate(_require(doc, "segments", "test set")):
            if isinstance(seg, str):
                segments.append(StorySegment.fixed(seg))
            elif "blank" in seg:
                segments.append(StorySegment.blank(int(seg["blank"])))
            else:
                segments.append(StorySegment.fixed(str(_require(seg, "text", f"segment {i}"))))
        groups = []
        for i, g in enumerate(_require(doc, "groups", "test set")):
            gid = int(_require(g, "id", f"group #{i}"))
            constraints = tuple(
                Constraint(
                    constraint_id=str(_require(c, "id", f"group {gid} constraint")),
                    text=str(c.get("text", "")),
                    knockout=bool(c.get("knockout", False)),
                )
                for c in _require(g, "constraints", f"group {gid}")
            )
            blanks = tuple(int(b) for b in _require(g, "blanks", f"group {gid}"))
            groups.append(BlankGroup(gid, blanks, constraints))
        edges = tuple(
            CascadeEdge(int(_require(e, "from", "edge")), int(_require(e, "to", "edge")),
                        str(e.get("criterion", "")))
            for e in doc.get("edges", [])
        )
        ts = TestSet(
            id=str(_require(doc, "id", "test set")),
            language=str(doc.get("language", "und")),
            segments=tuple(segments),
            groups=tuple(groups),
            edges=edges,
        )
    except (TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, TestSetError):
            raise
        raise TestSetError(f"malformed test set: {exc}") from exc

    known_blanks = set(ts.blank_ids)
    for g in ts.groups:
        for b in g.blank_ids:
            if b not in known_blanks:
                raise TestSetError(f"group {g.group_id} references unknown blank {b}")
    known_groups = set(ts.group_ids)
    for e in ts.edges:
        for end in (e.from_group, e.to_group):
            if end not in known_groups:
                raise TestSetError(f"edge {e.from_group}->{e.to_group} references unknown group {end}")
    return ts


def load_testset(document: str | Path | Mapping[str, Any]) -> TestSet:
    """Load a test set from a path, a JSON string or an already-parsed mapping."""
    if isinstance(document, Mapping):
        return parse_testset(document)
    if isinstance(document, Path) or (isinstance(document, str) and not document.lstrip().startswith("{")):
        document = Path(document).read_text(encoding="utf-8")
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise TestSetError(f"test set is not valid JSON: {exc}") from exc
    return parse_testset(doc)


def dump_testset(ts: TestSet) -> dict[str, Any]:
    return {
        "id": ts.id,
        "language": ts.language,
        "segments": [{"blank": s.blank_id} if s.is_blank else {"text": s.text} for s in ts.segments],
        "groups": [
            {
                "id": g.group_id,
                "blanks": list(g.blank_ids),
                "constraints": [
                    {"id": c.constraint_id, "text": c.text, "knockout": c.knockout}
                    for c in g.constraints
                ],
            }
            for g in ts.groups
        ],
        "edges": [{"from": e.from_group, "to": e.to_group, "criterion": e.criterion} for e in ts.edges],
    }


def bundled_path(name: str) -> Path:
    return Path(__file__).parent / "data" / name


def sample_testset() -> TestSet:
    """The bundled 7-group, 36-blank synthetic mystery story."""
    return load_testset(bundled_path("sample_testset.json"))


# ---------------------------------------------------------------------------
# validation


def topological_order(group_ids: Iterable[int], edges: Iterable[CascadeEdge]) -> tuple[list[int], list[int]]:
    """Kahn's algorithm, smallest ready id first.

    Returns ``(order, leftover)``; ``leftover`` is non-empty iff the graph
    has a cycle.
    """
    nodes = list(dict.fromkeys(group_ids))
    indeg = {n: 0 for n in nodes}
    succ: dict[int, list[int]] = {n: [] for n in nodes}
    for e in edges:
        if e.from_group in indeg and e.to_group in indeg:
            succ[e.from_group].append(e.to_group)
            indeg[e.to_group] += 1
    ready = [n for n in nodes if indeg[n] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(ready, m)
    done = set(order)
    return order, [n for n in nodes if n not in done]


def _find_cycle(leftover: list[int], edges: Iterable[CascadeEdge]) -> list[int]:
    # every leftover node keeps an in-edge from another leftover node,
    # so walking predecessors must revisit a node
    rest = set(leftover)
    pred: dict[int, int] = {}
    for e in edges:
        if e.from_group in rest and e.to_group in rest:
            pred.setdefault(e.to_group, e.from_group)
    node, seen = min(leftover), []
    while node not in seen:
        seen.append(node)
        node = pred[node]
    cycle = seen[seen.index(node):]
    return list(reversed(cycle))


def validate(ts: TestSet) -> ValidationReport:
    findings: list[Finding] = []
    add = lambda code, msg, *ids: findings.append(Finding(code, msg, ids))  # noqa: E731

    blank_ids = ts.blank_ids
    seen: set[int] = set()
    for b in blank_ids:
        if b in seen:
            add("blank-duplicate", f"blank {b} appears more than once in the skeleton", b)
        seen.add(b)
    if blank_ids != list(range(1, len(blank_ids) + 1)) and len(seen) == len(blank_ids):
        add("blank-order", "blank ids must be 1..N, contiguous and increasing in skeleton order",
            *blank_ids)
    if not blank_ids:
        add("blank-none", "skeleton has no blanks")
    for prev, cur in zip(ts.segments, ts.segments[1:]):
        if prev.is_blank and cur.is_blank:
            add("segment-adjacent-blanks", f"blanks {prev.blank_id} and {cur.blank_id} have no fixed text between them",
                prev.blank_id, cur.blank_id)
        elif not prev.is_blank and not cur.is_blank:
            add("segment-adjacent-text", "two fixed-text segments are adjacent")
    for s in ts.segments:
        if not s.is_blank and not s.text:
            add("segment-empty-text", "fixed-text segment is empty")

    group_ids = ts.group_ids
    dup_groups = sorted({g for g in group_ids if group_ids.count(g) > 1})
    for g in dup_groups:
        add("group-duplicate", f"group id {g} is used more than once", g)

    owner: dict[int, int] = {}
    constraint_ids: set[str] = set()
    for g in ts.groups:
        if not g.blank_ids:
            add("group-no-blanks", f"group {g.group_id} has no blanks", g.group_id)
        if not g.constraints:
            add("group-no-constraints", f"group {g.group_id} has no constraints", g.group_id)
        for b in g.blank_ids:
            if b not in seen:
                add("dangling-blank", f"group {g.group_id} references unknown blank {b}", g.group_id, b)
            elif b in owner:
                add("blank-multi-group", f"blank {b} belongs to groups {owner[b]} and {g.group_id}",
                    b, owner[b], g.group_id)
            else:
                owner[b] = g.group_id
        for c in g.constraints:
            if not c.text.strip():
                add("constraint-empty", f"constraint {c.constraint_id} in group {g.group_id} has empty text",
                    c.constraint_id)
            if c.constraint_id in constraint_ids:
                add("constraint-duplicate", f"constraint id {c.constraint_id} is used more than once",
                    c.constraint_id)
            constraint_ids.add(c.constraint_id)
    for b in sorted(seen - owner.keys()):
        add("blank-ungrouped", f"blank {b} is not in any group", b)

    # group order must follow blank order in the skeleton
    position = {b: i for i, b in enumerate(blank_ids)}
    firsts = [min((position[b] for b in g.blank_ids if b in position), default=None) for g in ts.groups]
    firsts = [f for f in firsts if f is not None]
    if firsts != sorted(firsts):
        add("group-order", "groups are not ordered by their first blank in the skeleton")

    known = set(group_ids)
    for e in ts.edges:
        if e.from_group == e.to_group:
            add("edge-self", f"edge {e.from_group}->{e.to_group} is a self-loop", e.from_group)
        for end in (e.from_group, e.to_group):
            if end not in known:
                add("dangling-group", f"edge {e.from_group}->{e.to_group} references unknown group {end}", end)

    order, leftover = topological_order(group_ids, [e for e in ts.edges if e.from_group != e.to_group])
    topo = None
    if leftover:
        cycle = _find_cycle(leftover, [e for e in ts.edges if e.from_group != e.to_group])
        add("cycle", "cascade edges contain a cycle: " + " -> ".join(f"G{g}" for g in cycle + cycle[:1]),
            *cycle)
    else:
        topo = order
    return ValidationReport(findings, topo)


# ---------------------------------------------------------------------------
# prompt rendering and response parsing


INSTRUCTION = (
    "Read the story below. Each blank is shown as its number inside ⟦ ⟧ brackets. "
    "Replace every blank with content of your own choosing and output the whole story "
    "as one complete, directly readable text."
)

FORMAT_INSTRUCTION = (
    "Output format: reproduce the story in full and write each filling inline, wrapped "
    "as ⟦number: your filling⟧ in place of its marker, for example ⟦01: a quiet afternoon⟧. "
    "Use every number exactly once and do not use the ⟦ ⟧ characters anywhere else."
)


def marker(k: int, width: int = 2) -> str:
    return f"{MARK_OPEN}{k:0{width}d}{MARK_CLOSE}"


def render_skeleton(ts: TestSet) -> str:
    w = ts.marker_width()
    return "".join(marker(s.blank_id, w) if s.is_blank else s.text for s in ts.segments)


def render_prompt(ts: TestSet, reveal_constraints: bool = False) -> str:
    parts = [INSTRUCTION, "", render_skeleton(ts), ""]
    if reveal_constraints:
        w = ts.marker_width()
        parts.append("The fillings must satisfy these conditions:")
        for g in ts.groups:
            span = f"{g.blank_ids[0]:0{w}d}-{g.blank_ids[-1]:0{w}d}"
            for c in g.constraints:
                parts.append(f"- blanks {span}: {c.text}")
        parts.append("")
    parts.append(FORMAT_INSTRUCTION)
    return "\n".join(parts)


def render_tagged(ts: TestSet, fillings: Mapping[int, str]) -> str:
    """Write a story in the tagged output format (what a compliant model returns)."""
    w = ts.marker_width()
    return "".join(
        f"{MARK_OPEN}{s.blank_id:0{w}d}: {fillings[s.blank_id]}{MARK_CLOSE}" if s.is_blank else s.text
        for s in ts.segments
    )


_TAG = re.compile(MARK_OPEN + r"\s*(\d+)\s*:[ ]?(.*?)" + MARK_CLOSE, re.DOTALL)


def _parse_tagged(ts: TestSet, raw: str, model_id: str) -> dict[int, str]:
    expected = set(ts.blank_ids)
    fillings: dict[int, str] = {}
    for m in _TAG.finditer(raw):
        k = int(m.group(1))
        if k not in expected:
            raise ResponseParseError(f"{model_id}: tag for unknown blank {k:02d}")
        if k in fillings:
            raise ResponseParseError(f"{model_id}: duplicate tag for blank {k:02d}")
        fillings[k] = m.group(2)
    return fillings


def _anchor_span(raw: str, anchor: str, start: int) -> tuple[int, int] | None:
    pos = raw.find(anchor, start)
    if pos >= 0:
        return pos, pos + len(anchor)
    tail = raw[start:]
    sm = difflib.SequenceMatcher(None, anchor, tail, autojunk=False)
    m = sm.find_longest_match(0, len(anchor), 0, len(tail))
    if m.size >= max(8, len(anchor) // 2):
        lo = start + m.b - m.a
        hi = start + m.b + (len(anchor) - m.a)
        return max(lo, start), min(hi, len(raw))
    return None


def _parse_aligned(ts: TestSet, raw: str, model_id: str) -> dict[int, str]:
    """Recover fillings by locating fixed skeleton text in an untagged story."""
    anchors = [i for i, s in enumerate(ts.segments) if not s.is_blank and s.text.strip()]
    spans: dict[int, tuple[int, int]] = {}
    cursor = 0
    for i in anchors:
        text = ts.segments[i].text.strip()
        span = _anchor_span(raw, text, cursor)
        if span is not None:
            spans[i] = span
            cursor = span[1]
    if anchors and len(spans) / len(anchors) < MIN_ANCHOR_FRACTION:
        raise ResponseParseError(
            f"{model_id}: alignment failed, located {len(spans)}/{len(anchors)} fixed anchors")

    fillings: dict[int, str] = {}
    for i, seg in enumerate(ts.segments):
        if not seg.is_blank:
            continue
        prev = next((j for j in range(i - 1, -1, -1) if not ts.segments[j].is_blank
                     and ts.segments[j].text.strip()), None)
        nxt = next((j for j in range(i + 1, len(ts.segments)) if not ts.segments[j].is_blank
                    and ts.segments[j].text.strip()), None)
        if (prev is not None and prev not in spans) or (nxt is not None and nxt not in spans):
            continue
        # blanks sharing one gap cannot be separated
        lo_i = prev if prev is not None else -1
        hi_i = nxt if nxt is not None else len(ts.segments)
        if sum(1 for s in ts.segments[lo_i + 1:hi_i] if s.is_blank) != 1:
            continue
        lo = spans[prev][1] if prev is not None else 0
        hi = spans[nxt][0] if nxt is not None else len(raw)
        fillings[seg.blank_id] = raw[lo:hi].strip()
    return fillings


def parse_response(ts: TestSet, raw: str, model_id: str, strict: bool = True) -> FilledResponse:
    """Extract per-blank fillings from a model transcript.

    Tagged output is used when any tag is present, otherwise the skeleton
    alignment fallback. With ``strict=False`` missing or empty blanks are
    reported on the result instead of raising.
    """
    fillings = _parse_tagged(ts, raw, model_id)
    if not fillings:
        fillings = _parse_aligned(ts, raw, model_id)
    fillings = {k: v for k, v in fillings.items() if v.strip()}
    missing = tuple(k for k in ts.blank_ids if k not in fillings)
    if missing and strict:
        w = ts.marker_width()
        raise ResponseParseError(
            f"{model_id}: missing blank(s) " + ", ".join(f"{k:0{w}d}" for k in missing), missing)
    return FilledResponse(model_id, dict(sorted(fillings.items())), missing)


def response_from_fillings(ts: TestSet, model_id: str, fillings: Mapping[Any, str],
                           strict: bool = True) -> FilledResponse:
    clean = {int(k): str(v) for k, v in fillings.items() if str(v).strip()}
    unknown = sorted(set(clean) - set(ts.blank_ids))
    if unknown:
        raise ResponseParseError(f"{model_id}: fillings for unknown blank(s) {unknown}")
    missing = tuple(k for k in ts.blank_ids if k not in clean)
    if missing and strict:
        raise ResponseParseError(f"{model_id}: missing blank(s) {list(missing)}", missing)
    return FilledResponse(model_id, dict(sorted(clean.items())), missing)


def load_response(ts: TestSet, path: str | Path, strict: bool = False) -> tuple[FilledResponse, str | None]:
    """Read a transcript file: ``{"model_id", "raw_text"}`` or ``{"model_id", "fillings"}``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    model_id = str(doc["model_id"])
    if "fillings" in doc:
        return response_from_fillings(ts, model_id, doc["fillings"], strict=strict), doc.get("raw_text")
    raw = doc["raw_text"]
    return parse_response(ts, raw, model_id, strict=strict), raw


# ---------------------------------------------------------------------------
# group passages

_SENTENCE_END = re.compile(r"[.!?。！？…]+[\"'”’」』)）]*\s*")


def _sentence_ends(text: str) -> list[int]:
    return [m.end() for m in _SENTENCE_END.finditer(text)]


def _leading_context(text: str) -> str:
    """Tail of ``text``: the partial sentence running into a blank plus one full sentence."""
    starts = sorted({0, *(e for e in _sentence_ends(text))})
    partial = max(s for s in starts if s <= len(text))
    before = [s for s in starts if s < partial]
    return text[before[-1] if before else 0:]


def _trailing_context(text: str) -> str:
    ends = _sentence_ends(text)
    return text[:ends[1]] if len(ends) > 1 else text


def group_filling_text(ts: TestSet, r: FilledResponse, g: int) -> str:
    """Story passage covering group ``g`` with fillings substituted.

    Includes the fixed text between the group's blanks and one sentence of
    fixed context on each side. Unfilled blanks render as ``____``.
    """
    try:
        group = ts.group(g)
    except KeyError:
        raise KeyError(f"unknown group id {g}") from None
    idx = [i for i, s in enumerate(ts.segments) if s.is_blank and s.blank_id in set(group.blank_ids)]
    lo, hi = idx[0], idx[-1]
    parts = []
    if lo > 0 and not ts.segments[lo - 1].is_blank:
        parts.append(_leading_context(ts.segments[lo - 1].text))
    for s in ts.segments[lo:hi + 1]:
        parts.append(r.fillings.get(s.blank_id, UNFILLED) if s.is_blank else s.text)
    if hi + 1 < len(ts.segments) and not ts.segments[hi + 1].is_blank:
        parts.append(_trailing_context(ts.segments[hi + 1].text))
    return "".join(parts).strip()


def blank_context_text(ts: TestSet, r: FilledResponse, k: int) -> str:
    """A filling with the fixed sentence fragments that surround it."""
    i = next(i for i, s in enumerate(ts.segments) if s.is_blank and s.blank_id == k)
    before = ts.segments[i - 1].text if i > 0 and not ts.segments[i - 1].is_blank else ""
    after = ts.segments[i + 1].text if i + 1 < len(ts.segments) and not ts.segments[i + 1].is_blank else ""
    starts = [0, *_sentence_ends(before)]
    head = before[max(s for s in starts if s <= len(before)):]
    ends = _sentence_ends(after)
    tail = after[:ends[0]] if ends else after
    return (head + r.fillings[k] + tail).strip()
