"""Acceptance suite: one check per criterion, one PASS/FAIL line each.

Run under pytest (``pytest tests/test_acceptance.py -v -s``) or directly
(``python -m tests.test_acceptance``) for the summary lines alone.
"""

from __future__ import annotations

import dataclasses
import math
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from clozescore import pipeline
from clozescore.judge import JudgeRecord, ScaleKind, apply_knockout, ensemble_constraint_score, group_satisfy
from clozescore.judge import ConstraintScore
from clozescore.providers import ProviderClient, load_providers
from clozescore.scoring import CompositeScheme, composite
from clozescore.stats import ReliabilityMatrix, StatsError, default_config_grid, krippendorff_alpha, spearman
from clozescore.surprise import build_surprise_table, centroid, normalize_per_blank, unitize
from clozescore.testset import CascadeEdge, Constraint, StorySegment, bundled_path, load_testset, sample_testset, validate
from clozescore.verify import verify_paper

from .oracles import alpha_by_pairs, spearman_no_ties
from .test_providers import exploding

E2E = Path(__file__).parent / "fixtures" / "e2e"
SCHEMES = [CompositeScheme("A"), CompositeScheme("B"), CompositeScheme("C", 0.5), CompositeScheme("C", 1.0),
           CompositeScheme("C", 1.5), CompositeScheme("D")]


def report(n, title, ok, detail=""):
    line = f"AC{n} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    print(line)
    return line


# 1 ---------------------------------------------------------------------------
def check_paper_tables():
    start = time.perf_counter()
    check = verify_paper(bundled_path("paper_tables.csv"))
    elapsed = time.perf_counter() - start
    by_id = {m.model_id: m for m in check.models}
    gpt35 = abs(by_id["GPT-3.5-turbo"].difference) <= 0.01
    parts = {
        "totals": check.totals_ok and len(check.models) == 12,
        "gpt35": gpt35,
        "rank_order": check.rank_order_ok,
        "runtime": elapsed < 1.0,
    }
    detail = (f"{sum(m.within(0.05) for m in check.models)}/12 within ±0.05; GPT-3.5 diff "
              f"{by_id['GPT-3.5-turbo'].difference:+.4f}; {elapsed:.3f}s; rank order "
              + ("exact" if check.rank_order_ok else
                 "differs at " + ", ".join(f"{a}/{b}" for a, b in check.discordant_pairs())))
    return all(parts.values()), detail, parts


# 2 ---------------------------------------------------------------------------
def check_composite_properties(n=10_000, seed=1234):
    rng = np.random.default_rng(seed)
    s = rng.random(n)
    u = rng.random(n)
    # exact corners go in alongside the uniform draws
    s[:4], u[:4] = [0, 0, 1, 1], [0, 1, 0, 1]
    ds, du = rng.random(n) * (1 - s), rng.random(n) * (1 - u)
    violations = []
    for scheme in SCHEMES:
        for i in range(n):
            a, b = float(s[i]), float(u[i])
            v = composite(a, b, scheme)
            if composite(0.0, b, scheme) != 0:
                violations.append((scheme.id, "zero-gate", b))
            if composite(a + ds[i], b, scheme) < v - 1e-12 or composite(a, b + du[i], scheme) < v - 1e-12:
                violations.append((scheme.id, "monotone", a, b))
            if scheme.variant == "C":
                if composite(a, 0.0, scheme) != a:
                    violations.append((scheme.id, "C(s,0)", a))
                if v > 1 + scheme.lam:
                    violations.append((scheme.id, "bound", a, b))
    return not violations, f"{n} samples x {len(SCHEMES)} schemes, {len(violations)} violation(s)", violations


# 3 ---------------------------------------------------------------------------
def check_alpha_oracle(n=1000, seed=99):
    rng = np.random.default_rng(seed)
    worst, compared, errors_agree = 0.0, 0, True
    for _ in range(n):
        rows = []
        for _ in range(int(rng.integers(1, 7))):
            row = [int(v) for v in rng.integers(0, 6, 3)]
            for j in range(3):
                if rng.random() < 0.25:
                    row[j] = None
            rows.append(row)
        m = ReliabilityMatrix.from_rows(rows)
        try:
            expected = alpha_by_pairs(rows)
        except ZeroDivisionError:
            try:
                krippendorff_alpha(m)
                errors_agree = False
            except StatsError:
                pass
            continue
        worst = max(worst, abs(krippendorff_alpha(m) - expected))
        compared += 1
    perfect = krippendorff_alpha(ReliabilityMatrix.from_rows([[v] * 3 for v in (0, 2, 3, 5, 1)])) == 1.0
    try:
        krippendorff_alpha(ReliabilityMatrix.from_rows([[4] * 3 for _ in range(80)]))
        constant = False
    except StatsError:
        constant = True
    ok = worst <= 1e-9 and errors_agree and perfect and constant and compared > 0
    return ok, f"{compared} compared, max |diff| {worst:.2e}, perfect=1.0 {perfect}, D_e=0 error {constant}", None


# 4 ---------------------------------------------------------------------------
def check_spearman(n=1000, seed=5):
    exact = spearman([1, 2, 3, 4, 5], [2, 4, 6, 8, 10]) == 1.0 and spearman([1, 2, 3, 4, 5], [5, 4, 3, 2, 1]) == -1.0
    hand = abs(spearman([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) <= 1e-12
    oracle = abs(spearman_no_ties([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) <= 1e-12
    rng = np.random.default_rng(seed)
    bad, done = 0, 0
    while done < n:
        k = int(rng.integers(3, 15))
        x = rng.normal(size=k)
        y = rng.normal(size=k)
        rho = spearman(x, y)
        # exp and a cubic-plus-linear map are strictly increasing
        if abs(spearman(np.exp(x / 4), y ** 3 + y) - rho) > 1e-12:
            bad += 1
        done += 1
    return exact and hand and oracle and bad == 0, f"±1 exact {exact}, 0.8 case {hand}, {bad}/{n} transform failures", None


# 5 ---------------------------------------------------------------------------
def check_surprise_geometry(n=500, seed=8):
    rng = np.random.default_rng(seed)
    idem = all(np.allclose(unitize(unitize(v)), unitize(v), atol=1e-15) for v in rng.normal(size=(n, 8)))
    c = centroid([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    sym = np.allclose(c, [1 / math.sqrt(2)] * 2, atol=1e-9)
    norm_ok = True
    for _ in range(n):
        d = {f"m{i}": float(v) for i, v in enumerate(rng.random(int(rng.integers(1, 9))) * 2)}
        out = normalize_per_blank(d)
        top = max(d.values())
        if top >= 1e-9:
            norm_ok &= abs(max(out.values()) - 1.0) <= 1e-12
            norm_ok &= all(abs(out[m] - d[m] / top) <= 1e-12 for m in d)
    v = np.array([0.3, -0.2, 0.9, 0.1])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with np.errstate(all="raise"):
            table = build_surprise_table({1: {"a": v, "b": 2 * v, "c": v}}, {1: [1]}, ["a", "b", "c"])
    degenerate = table.normalized[1] == {"a": 0.0, "b": 0.0, "c": 0.0}
    ok = idem and sym and norm_ok and degenerate
    return ok, f"idempotent {idem}, symmetry {sym}, normalization {norm_ok}, degenerate zero {degenerate}", None


# 6 ---------------------------------------------------------------------------
def _e2e_run(root: Path) -> tuple[dict[str, bytes], int]:
    providers = load_providers(E2E / "providers.json")
    client = ProviderClient("replay", E2E / "cache", transport=exploding())
    models = [p for n, p in providers.items() if n.startswith("model-")]
    judges = [p for n, p in providers.items() if n.startswith("judge-")]
    pipeline.collect(E2E / "testset.json", models, client, root / "run", parallelism=4)
    arts = pipeline.score(root / "run", client, judges, providers["embedder"], default_config_grid(),
                          parallelism=4, context_embedding=True)
    files = {p.relative_to(arts.root).as_posix(): p.read_bytes()
             for p in sorted(arts.root.rglob("*")) if p.is_file() and p.name != "manifest.json"}
    return files, client.network_calls + (client._http is not None)


def check_replay_determinism():
    start = time.perf_counter()
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        first, net1 = _e2e_run(Path(a))
        second, net2 = _e2e_run(Path(b))
    elapsed = time.perf_counter() - start
    golden = {p.relative_to(E2E / "golden").as_posix(): p.read_bytes()
              for p in sorted((E2E / "golden").rglob("*")) if p.is_file()}
    ts = load_testset(E2E / "testset.json")
    shape = len(ts.groups) == 3 and ts.n_blanks == 8
    same = first == second
    matches = first == golden
    ok = shape and same and matches and elapsed < 10 and net1 == net2 == 0
    return ok, (f"{len(first)} artifacts, runs identical {same}, golden match {matches}, "
                f"{elapsed:.2f}s, network {net1 + net2}"), None


# 7 ---------------------------------------------------------------------------
def check_knockout(n=2000, seed=3):
    six = ScaleKind.SIX_POINT
    capped = all(apply_knockout(v, True, six) <= 1 for v in six.domain)
    recs = [JudgeRecord("a", "m", 1, "c", 5, True, apply_knockout(5, True, six), six),
            JudgeRecord("b", "m", 1, "c", 4, False, 4, six),
            JudgeRecord("c", "m", 1, "c", 4, False, 4, six)]
    exact = ensemble_constraint_score(recs).value == 0.6
    rng = np.random.default_rng(seed)
    order_ok = True
    for _ in range(n):
        k = int(rng.integers(1, 7))
        # constraint scores on the ensemble grid of three six-point judges
        values = [float(v) / 15 for v in rng.integers(0, 16, k)]
        if rng.random() < 0.1:
            values = [values[0]] * k
        scores = [ConstraintScore("m", 1, f"c{i}", v, ("a",)) for i, v in enumerate(values)]
        soft = group_satisfy(scores, "soft_mean").value
        bucket = group_satisfy(scores, "bucket").value
        order_ok &= bucket <= soft + 1e-12
        order_ok &= (abs(soft - bucket) <= 1e-12) == (len(set(values)) == 1)
    return capped and exact and order_ok, f"cap {capped}, 0.6 exact {exact}, bucket<=soft with equality rule {order_ok}", None


# 8 ---------------------------------------------------------------------------
def _mutations(ts):
    """Every single-invariant mutation in the four families."""
    out = []
    reach = {g: set() for g in ts.group_ids}
    for _ in ts.group_ids:
        for e in ts.edges:
            reach[e.from_group] |= {e.to_group} | reach[e.to_group]
    for a in ts.group_ids:
        for b in sorted(reach[a]):
            out.append(("cycle", dataclasses.replace(ts, edges=ts.edges + (CascadeEdge(b, a, "back"),))))
    for i, g in enumerate(ts.groups):
        groups = list(ts.groups)
        groups[i] = dataclasses.replace(g, blank_ids=g.blank_ids + (999,))
        out.append(("dangling", dataclasses.replace(ts, groups=tuple(groups))))
    for i, e in enumerate(ts.edges):
        edges = list(ts.edges)
        edges[i] = dataclasses.replace(e, to_group=999)
        out.append(("dangling", dataclasses.replace(ts, edges=tuple(edges))))
    blank_pos = [i for i, s in enumerate(ts.segments) if s.is_blank]
    for i in blank_pos[1:]:
        segs = list(ts.segments)
        segs[i] = StorySegment.blank(ts.segments[blank_pos[0]].blank_id)
        out.append(("duplicate", dataclasses.replace(ts, segments=tuple(segs))))
    for gi, g in enumerate(ts.groups):
        for ci, c in enumerate(g.constraints):
            cs = list(g.constraints)
            cs[ci] = Constraint(c.constraint_id, "", c.knockout)
            groups = list(ts.groups)
            groups[gi] = dataclasses.replace(g, constraints=tuple(cs))
            out.append(("empty", dataclasses.replace(ts, groups=tuple(groups))))
    return out


def check_validation():
    fixtures = [sample_testset(), load_testset(E2E / "testset.json")]
    clean = all(not validate(ts).findings for ts in fixtures)
    counts, missed = {}, []
    for ts in fixtures:
        for family, mutated in _mutations(ts):
            counts[family] = counts.get(family, 0) + 1
            if not validate(mutated).findings:
                missed.append(family)
    detail = ", ".join(f"{k} {v}" for k, v in sorted(counts.items())) + f"; undetected {len(missed)}; clean {clean}"
    return clean and not missed and len(counts) == 4, detail, missed


CRITERIA = [
    (1, "paper-table reproduction", check_paper_tables),
    (2, "composite-scheme properties", check_composite_properties),
    (3, "Krippendorff alpha oracle equivalence", check_alpha_oracle),
    (4, "Spearman correctness", check_spearman),
    (5, "surprise geometry", check_surprise_geometry),
    (6, "end-to-end replay determinism", check_replay_determinism),
    (7, "knockout mechanics", check_knockout),
    (8, "test-set validation", check_validation),
]


@pytest.mark.parametrize("n, title, check", CRITERIA, ids=[f"AC{n}" for n, *_ in CRITERIA])
def test_criterion(n, title, check, capsys):
    ok, detail, info = check()
    with capsys.disabled():
        print()
        report(n, title, ok, detail)
    assert ok, f"{detail} {info if info else ''}"


def main() -> int:
    failed = 0
    for n, title, check in CRITERIA:
        ok, detail, _ = check()
        report(n, title, ok, detail)
        failed += not ok
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
