"""End-to-end runs: collect fillings, judge, embed, score, and write reports.

A run directory holds ``testset.json``, ``responses/<model>.json`` and the
collection manifest. Scoring writes its artifacts to an output directory
(``<run>/scores`` by default). In replay mode every artifact except
``manifest.json`` is byte-identical across runs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import re
import shutil
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .judge import (CascadeScore, ConstraintScore, JudgeDrop, JudgePanel, JudgeRecord, ScaleKind,
                    constraint_scores, group_satisfy)
from .providers import ProviderClient, ProviderConfig
from .scoring import ModelTotal, score_models
from .stats import (MAIN_CONFIG, ReliabilityMatrix, RobustnessMatrix, ScoringConfig, StatsError,
                    drift_diagnostic, krippendorff_alpha, robustness_matrix)
from .surprise import SurpriseTable, build_surprise_table
from .testset import (FilledResponse, ResponseParseError, TestSet, blank_context_text, dump_testset,
                      load_response, load_testset, parse_response, render_prompt, validate)

logger = logging.getLogger(__name__)


class ValidationFailed(ValueError):
    def __init__(self, findings):
        super().__init__("; ".join(f.message for f in findings))
        self.findings = findings


class ScoringFailure(RuntimeError):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def safe_name(model_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", model_id)


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _full(v: float) -> str:
    return repr(float(v))


def _fixed(v: float, places: int) -> str:
    return "nan" if math.isnan(v) else f"{v:.{places}f}"


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# collect


@dataclass
class CollectResult:
    responses: list[FilledResponse]
    flagged: dict[str, str] = field(default_factory=dict)
    manifest: dict[str, Any] = field(default_factory=dict)


def collect(testset_path: str | Path, models: Sequence[ProviderConfig], client: ProviderClient,
            out_dir: str | Path, parallelism: int = 4, reveal_constraints: bool = False) -> CollectResult:
    """Query each evaluated model once with the standard prompt and persist parsed fillings."""
    ts = load_testset(testset_path)
    report = validate(ts)
    if not report.ok:
        raise ValidationFailed(report.findings)
    for cfg in models:
        client.check_credentials(cfg)

    out = Path(out_dir)
    (out / "responses").mkdir(parents=True, exist_ok=True)
    _write_json(out / "testset.json", dump_testset(ts))
    prompt = render_prompt(ts, reveal_constraints=reveal_constraints)
    manifest = {
        "stage": "collect",
        "started": _now(),
        "testset": {"id": ts.id, "digest": ts.digest(), "n_blanks": ts.n_blanks},
        "models": [{"name": m.name, "model": m.model} for m in models],
        "mode": client.mode,
        "parallelism": parallelism,
        "reveal_constraints": reveal_constraints,
        "prompt_sha256": hashlib.sha256(prompt.encode("utf-8")).hexdigest(),
    }
    _write_json(out / "manifest.json", manifest)

    with ThreadPoolExecutor(max(1, parallelism)) as pool:
        raws = list(pool.map(lambda cfg: client.chat_complete(cfg, prompt), models))

    result = CollectResult([], {}, manifest)
    for cfg, raw in zip(models, raws):
        try:
            r = parse_response(ts, raw, cfg.name, strict=False)
        except ResponseParseError as exc:
            logger.warning("%s", exc)
            r = FilledResponse(cfg.name, {}, tuple(ts.blank_ids))
            result.flagged[cfg.name] = str(exc)
        if r.missing and cfg.name not in result.flagged:
            result.flagged[cfg.name] = f"missing blank(s) {list(r.missing)}"
            logger.warning("%s: missing blank(s) %s; excluded from those cohorts", cfg.name, list(r.missing))
        _write_json(out / "responses" / f"{safe_name(cfg.name)}.json", {
            "model_id": cfg.name,
            "raw_text": raw,
            "fillings": {str(k): v for k, v in r.fillings.items()},
            "missing": list(r.missing),
        })
        result.responses.append(r)
    manifest["flagged"] = result.flagged
    manifest["finished"] = _now()
    _write_json(out / "manifest.json", manifest)
    return result


def load_run(run_dir: str | Path) -> tuple[TestSet, list[FilledResponse]]:
    run = Path(run_dir)
    ts = load_testset(run / "testset.json")
    paths = sorted((run / "responses").glob("*.json"))
    if not paths:
        raise FileNotFoundError(f"no response transcripts under {run / 'responses'}")
    responses = [load_response(ts, p, strict=False)[0] for p in paths]
    return ts, sorted(responses, key=lambda r: r.model_id)


# ---------------------------------------------------------------------------
# score


@dataclass
class RunArtifacts:
    root: Path
    paths: list[Path] = field(default_factory=list)

    def add(self, path: Path) -> Path:
        self.paths.append(path)
        return path

    def digests(self, exclude: Iterable[str] = ("manifest.json",)) -> dict[str, str]:
        skip = set(exclude)
        return {p.relative_to(self.root).as_posix(): sha256_file(p)
                for p in sorted(self.paths) if p.name not in skip}


@dataclass
class ScoreInputs:
    """Everything the pure scoring stage needs; produced by judging and embedding."""

    ts: TestSet
    models: list[str]
    records: dict[ScaleKind, list[JudgeRecord]]
    surprise: SurpriseTable
    drops: list[JudgeDrop] = field(default_factory=list)
    cascade: list[CascadeScore] = field(default_factory=list)
    context_surprise: SurpriseTable | None = None
    flagged: dict[str, str] = field(default_factory=dict)


def satisfy_table(ts: TestSet, scores: Mapping[tuple[str, int, str], ConstraintScore], models: Sequence[str],
                  aggregation: str) -> dict[str, dict[int, float]]:
    table: dict[str, dict[int, float]] = {}
    for m in models:
        table[m] = {}
        for g in ts.groups:
            cs = [scores[(m, g.group_id, c.constraint_id)] for c in g.constraints
                  if (m, g.group_id, c.constraint_id) in scores]
            if len(cs) != len(g.constraints):
                missing = [c.constraint_id for c in g.constraints if (m, g.group_id, c.constraint_id) not in scores]
                raise ScoringFailure(f"{m}: every judge failed on constraint(s) {missing} of group {g.group_id}")
            table[m][g.group_id] = group_satisfy(cs, aggregation).value
    return table


def surprise_by_model(table: SurpriseTable, models: Sequence[str]) -> dict[str, dict[int, float]]:
    return {m: {g: table.groups[g][m] for g in sorted(table.groups)} for m in models}


def evaluate_configs(inputs: ScoreInputs, configs: Sequence[ScoringConfig]) -> dict[str, list[ModelTotal]]:
    scores = {scale: constraint_scores(recs) for scale, recs in inputs.records.items()}
    surprise = surprise_by_model(inputs.surprise, inputs.models)
    out = {}
    for cfg in configs:
        if cfg.scale not in scores:
            raise ScoringFailure(f"config {cfg.id} needs {cfg.scale.value} judge scores, which were not produced")
        satisfy = satisfy_table(inputs.ts, scores[cfg.scale], inputs.models, cfg.aggregation)
        out[cfg.id] = score_models(satisfy, surprise, cfg.scheme)
    return out


def reliability(records: Sequence[JudgeRecord]) -> dict[str, Any]:
    """Alpha over raw judge scores; items are (constraint, model) pairs."""
    m = ReliabilityMatrix({((r.constraint_id, r.model_id), r.judge_id): r.raw for r in records})
    pairable = m.pairable()
    doc: dict[str, Any] = {
        "metric": "interval",
        "scale": records[0].scale.value if records else None,
        "n_items": len(pairable),
        "n_raters": len(m.raters),
        "n_points": sum(len(v) for v in pairable.values()),
        "alpha": None, "within_item": None, "between_item": None, "within_between_ratio": None,
        "error": None,
    }
    try:
        doc["alpha"] = krippendorff_alpha(m)
        within, between = drift_diagnostic(m)
        doc.update(within_item=within, between_item=between,
                   within_between_ratio=within / between if between else None)
    except StatsError as exc:
        doc["error"] = str(exc)
    return doc


def gather_inputs(ts: TestSet, responses: Sequence[FilledResponse], client: ProviderClient,
                  judges: Sequence[ProviderConfig], embedder: ProviderConfig, scales: Iterable[ScaleKind],
                  parallelism: int = 4, exclude_from_centroid: Iterable[str] = (),
                  context_embedding: bool = False, cascade_scale: ScaleKind = ScaleKind.SIX_POINT) -> ScoreInputs:
    models = [r.model_id for r in responses]
    panel = JudgePanel(client, judges, parallelism)
    records, drops = {}, []
    for scale in sorted(set(scales), key=lambda s: s.value):
        outcome = panel.score_responses(ts, responses, scale)
        records[scale] = outcome.records
        drops += outcome.drops

    with ThreadPoolExecutor(max(1, parallelism)) as pool:
        cascade = list(pool.map(lambda job: panel.cascade_consistency(ts, job[0], job[1], cascade_scale),
                                [(r, e) for r in responses for e in ts.edges]))
    cascade = [c for c in cascade if c is not None]

    groups = {g.group_id: g.blank_ids for g in ts.groups}

    def embed_all(text_of) -> SurpriseTable:
        jobs = [(k, r.model_id, text_of(r, k)) for k in ts.blank_ids for r in responses if k in r.fillings]
        with ThreadPoolExecutor(max(1, parallelism)) as pool:
            vecs = list(pool.map(lambda j: client.embed(embedder, j[2]), jobs))
        cohorts: dict[int, dict[str, np.ndarray]] = {k: {} for k in ts.blank_ids}
        for (k, m, _), v in zip(jobs, vecs):
            cohorts[k][m] = v
        return build_surprise_table(cohorts, groups, models, exclude_from_centroid)

    surprise = embed_all(lambda r, k: r.fillings[k])
    context = embed_all(lambda r, k: blank_context_text(ts, r, k)) if context_embedding else None
    flagged = {r.model_id: f"missing blank(s) {list(r.missing)}" for r in responses if r.missing}
    return ScoreInputs(ts, models, records, surprise, drops, cascade, context, flagged)


def write_score_artifacts(inputs: ScoreInputs, configs: Sequence[ScoringConfig], out_dir: str | Path,
                          manifest: Mapping[str, Any] | None = None) -> RunArtifacts:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arts = RunArtifacts(out)
    ts, models = inputs.ts, inputs.models
    gids = ts.group_ids
    gcols = [f"g{g}" for g in gids]

    manifest = dict(manifest or {})
    manifest.setdefault("started", _now())
    manifest["configs"] = [c.id for c in configs]
    manifest["testset"] = {"id": ts.id, "digest": ts.digest()}
    manifest["models"] = list(models)
    _write_json(arts.add(out / "manifest.json"), manifest)

    results = evaluate_configs(inputs, configs)
    main = MAIN_CONFIG if MAIN_CONFIG in configs else configs[0]
    main_board = results[main.id]
    order = [t.model_id for t in main_board]

    # judge records
    for scale, recs in sorted(inputs.records.items(), key=lambda kv: kv[0].value):
        name = "judge_scores.csv" if scale is ScaleKind.SIX_POINT else f"judge_scores.{scale.value}.csv"
        recs = sorted(recs, key=lambda r: (r.model_id, r.group_id, r.constraint_id, r.judge_id))
        _write_csv(arts.add(out / name),
                   ["judge_id", "model_id", "group_id", "constraint_id", "raw", "knockout", "capped", "normalized"],
                   [[r.judge_id, r.model_id, r.group_id, r.constraint_id, f"{r.raw:g}",
                     "yes" if r.knockout_triggered else "no", f"{r.capped:g}", _full(r.normalized)] for r in recs])
        cs = constraint_scores(recs)
        cs_name = "constraint_scores.csv" if scale is ScaleKind.SIX_POINT else f"constraint_scores.{scale.value}.csv"
        _write_csv(arts.add(out / cs_name), ["model_id", "group_id", "constraint_id", "value", "judges"],
                   [[c.model_id, c.group_id, c.constraint_id, _full(c.value), ";".join(c.judges)]
                    for c in cs.values()])
    _write_csv(arts.add(out / "judge_drops.csv"), ["judge_id", "model_id", "group_id", "constraint_id", "reason"],
               [[d.judge_id, d.model_id, d.group_id, d.constraint_id, d.reason]
                for d in sorted(inputs.drops, key=lambda d: (d.model_id, d.group_id, d.constraint_id, d.judge_id))])

    # table 1: satisfy under the main config's scale and aggregation
    sat = satisfy_table(ts, constraint_scores(inputs.records[main.scale]), models, main.aggregation)
    sat_rows = [(m, [sat[m][g] for g in gids]) for m in order]
    _write_csv(arts.add(out / "table1_satisfy.csv"), ["rank", "model_id", *gcols, "mean"],
               [[i, m, *(_fixed(v, 2) for v in vs), _fixed(sum(vs) / len(vs), 3)]
                for i, (m, vs) in enumerate(sat_rows, 1)])
    _write_csv(arts.add(out / "table1_satisfy.full.csv"), ["model_id", *gcols, "mean"],
               [[m, *(_full(v) for v in vs), _full(sum(vs) / len(vs))] for m, vs in sat_rows])

    def surprise_files(table: SurpriseTable, suffix: str) -> None:
        sur = surprise_by_model(table, models)
        rows = sorted(((m, [sur[m][g] for g in gids]) for m in models),
                      key=lambda mv: (-sum(mv[1]), mv[0]))
        _write_csv(arts.add(out / f"table2_surprise{suffix}.csv"), ["rank", "model_id", *gcols, "mean"],
                   [[i, m, *(_fixed(v, 3) for v in vs), _fixed(sum(vs) / len(vs), 3)]
                    for i, (m, vs) in enumerate(rows, 1)])
        _write_csv(arts.add(out / f"surprise_blanks{suffix}.csv"),
                   ["blank_id", "model_id", "raw_distance", "normalized"],
                   [[k, m, _full(d), _full(n)] for k, m, d, n in table.rows()])
        group_rows = [(g, m, table.groups[g][m]) for g in gids for m in models]
        _write_csv(arts.add(out / f"surprise_groups{suffix}.csv"), ["group_id", "model_id", "group_surprise"],
                   [[g, m, _fixed(v, 3)] for g, m, v in group_rows])
        _write_csv(arts.add(out / f"surprise_groups{suffix}.full.csv"), ["group_id", "model_id", "group_surprise"],
                   [[g, m, _full(v)] for g, m, v in group_rows])

    surprise_files(inputs.surprise, "")
    if inputs.context_surprise is not None:
        surprise_files(inputs.context_surprise, ".context")

    _write_csv(arts.add(out / "cascade.csv"), ["model_id", "from_group", "to_group", "value", "judges"],
               [[c.model_id, c.from_group, c.to_group, _full(c.value), ";".join(c.judges)]
                for c in sorted(inputs.cascade, key=lambda c: (c.model_id, c.from_group, c.to_group))])

    def board_files(board: list[ModelTotal], directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        header = ["rank", "model_id", "satisfy_mean", "surprise_mean", "total", *gcols]
        _write_csv(arts.add(directory / "final_scores.csv"), header,
                   [[t.rank, t.model_id, _fixed(t.satisfy_mean, 3), _fixed(t.surprise_mean, 3), _fixed(t.total, 2),
                     *(_fixed(t.groups[g], 2) for g in gids)] for t in board])
        _write_csv(arts.add(directory / "final_scores.full.csv"), header,
                   [[t.rank, t.model_id, _full(t.satisfy_mean), _full(t.surprise_mean), _full(t.total),
                     *(_full(t.groups[g]) for g in gids)] for t in board])

    board_files(main_board, out)
    for cfg in configs:
        board_files(results[cfg.id], out / "configs" / cfg.id)

    matrix = write_spearman(results, out / "final_scores.spearman.csv", arts)

    alpha_docs = {}
    for scale, recs in sorted(inputs.records.items(), key=lambda kv: kv[0].value):
        doc = reliability(recs)
        name = "alpha.json" if scale is main.scale else f"alpha.{scale.value}.json"
        _write_json(arts.add(out / name), doc)
        alpha_docs[scale] = doc

    report = render_report(inputs, main, main_board, sat_rows, matrix, alpha_docs, configs)
    (arts.add(out / "report.md")).write_text(report, encoding="utf-8")

    index = out / "artifacts.json"
    _write_json(index, {"files": arts.digests()})
    arts.add(index)

    manifest["finished"] = _now()
    manifest["artifacts"] = sorted(p.relative_to(out).as_posix() for p in arts.paths)
    _write_json(out / "manifest.json", manifest)
    return arts


def write_spearman(results: Mapping[str, list[ModelTotal]], path: Path,
                   arts: RunArtifacts | None = None) -> RobustnessMatrix:
    totals = {cid: {t.model_id: t.total for t in board} for cid, board in results.items()}
    matrix = robustness_matrix(totals)
    _write_csv(path, ["config", *matrix.configs],
               [[cid, *(_fixed(v, 3) for v in row)] for cid, row in zip(matrix.configs, matrix.cells)])
    if arts is not None:
        arts.add(path)
    return matrix


def _md_table(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return lines


def render_report(inputs: ScoreInputs, main: ScoringConfig, board: list[ModelTotal],
                  sat_rows, matrix: RobustnessMatrix, alpha_docs, configs) -> str:
    ts = inputs.ts
    gcols = [f"G{g}" for g in ts.group_ids]
    lines = [f"# Scoring report: {ts.id}", "",
             f"{len(inputs.models)} models, {len(ts.groups)} blank groups, {ts.n_blanks} blanks, "
             f"{sum(len(g.constraints) for g in ts.groups)} constraints.", ""]
    if inputs.flagged:
        lines += ["## Flagged responses", ""]
        lines += [f"- **{m}**: {why}" for m, why in sorted(inputs.flagged.items())]
        lines.append("")
    lines += [f"## Leaderboard ({main.id})", ""]
    lines += _md_table(["Rank", "Model", "satisfy mean", "surprise mean", "Total"],
                       [[t.rank, t.model_id, f"{t.satisfy_mean:.3f}", f"{t.surprise_mean:.3f}", f"**{t.total:.2f}**"]
                        for t in board])
    lines += ["", f"Maximum possible total: {len(ts.groups) * (1 + main.scheme.lam):.1f}"
              if main.scheme.variant == "C" else "", ""]
    lines += ["## Constraint satisfaction", ""]
    lines += _md_table(["Model", *gcols, "Mean"],
                       [[m, *(f"{v:.2f}" for v in vs), f"{sum(vs) / len(vs):.3f}"] for m, vs in sat_rows])
    sur = surprise_by_model(inputs.surprise, inputs.models)
    lines += ["", "## Surprise", ""]
    lines += _md_table(["Model", *gcols, "Mean"],
                       [[m, *(f"{sur[m][g]:.3f}" for g in ts.group_ids),
                         f"{sum(sur[m].values()) / len(sur[m]):.3f}"] for m, _ in sat_rows])
    if inputs.cascade:
        by_model = defaultdict(list)
        for c in inputs.cascade:
            by_model[c.model_id].append(c.value)
        lines += ["", "## Cascade consistency (reported only, not part of totals)", ""]
        lines += _md_table(["Model", "edges", "mean"],
                           [[m, len(v), f"{sum(v) / len(v):.3f}"] for m, v in sorted(by_model.items())])
    lines += ["", "## Judge reliability", ""]
    for scale, doc in alpha_docs.items():
        if doc["error"]:
            lines.append(f"- {scale.value}: alpha undefined ({doc['error']})")
        else:
            lines.append(f"- {scale.value}: Krippendorff alpha (interval) = {doc['alpha']:.3f} over "
                         f"{doc['n_items']} items; within/between-item disagreement = "
                         f"{doc['within_item']:.3f} / {doc['between_item']:.3f}")
    if inputs.drops:
        lines.append(f"- {len(inputs.drops)} judge verdict(s) dropped as unreadable (see judge_drops.csv)")
    lines += ["", "## Robustness across scoring configurations", ""]
    if len(matrix.configs) > 1:
        off = matrix.cells[~np.eye(len(matrix.configs), dtype=bool)]
        finite = off[np.isfinite(off)]
        if finite.size:
            lines.append(f"Pairwise rank Spearman over {len(matrix.configs)} configurations: "
                         f"min {finite.min():.3f}, median {np.median(finite):.3f}.")
        lines.append("The configuration grid is a reconstruction; see final_scores.spearman.csv.")
    else:
        lines.append("Single configuration; no robustness comparison.")
    lines.append("")
    return "\n".join(lines)


def score(run_dir: str | Path, client: ProviderClient, judges: Sequence[ProviderConfig], embedder: ProviderConfig,
          configs: Sequence[ScoringConfig], out_dir: str | Path | None = None, parallelism: int = 4,
          exclude_from_centroid: Iterable[str] = (), context_embedding: bool = False) -> RunArtifacts:
    ts, responses = load_run(run_dir)
    report = validate(ts)
    if not report.ok:
        raise ValidationFailed(report.findings)
    for cfg in [*judges, embedder]:
        client.check_credentials(cfg)
    out = Path(out_dir) if out_dir else Path(run_dir) / "scores"
    if out.exists() and any(out.iterdir()):
        # only ever clear a directory an earlier score run produced
        if not (out / "artifacts.json").exists():
            raise ValueError(f"{out} is not empty and holds no earlier score artifacts; refusing to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True)
    manifest = {
        "stage": "score",
        "run_id": f"score-{datetime.now(timezone.utc).strftime('%Y%m%dT%H%M%SZ')}",
        "started": _now(),
        "mode": client.mode,
        "parallelism": parallelism,
        "judges": [{"name": j.name, "model": j.model, "params": dict(j.params)} for j in judges],
        "embedder": {"name": embedder.name, "model": embedder.model},
        "exclude_from_centroid": sorted(exclude_from_centroid),
        "context_embedding": context_embedding,
        "testset": {"id": ts.id, "digest": ts.digest()},
        "configs": [c.id for c in configs],
    }
    _write_json(out / "manifest.json", manifest)
    scales = {c.scale for c in configs}
    inputs = gather_inputs(ts, responses, client, judges, embedder, scales, parallelism,
                           exclude_from_centroid, context_embedding)
    return write_score_artifacts(inputs, configs, out, manifest)


# ---------------------------------------------------------------------------
# offline re-analysis from an existing score directory


def read_records(score_dir: str | Path) -> dict[ScaleKind, list[JudgeRecord]]:
    score_dir = Path(score_dir)
    out = {}
    for scale in ScaleKind:
        name = "judge_scores.csv" if scale is ScaleKind.SIX_POINT else f"judge_scores.{scale.value}.csv"
        path = score_dir / name
        if not path.exists():
            continue
        with open(path, newline="", encoding="utf-8") as fh:
            out[scale] = [JudgeRecord(r["judge_id"], r["model_id"], int(r["group_id"]), r["constraint_id"],
                                      float(r["raw"]), r["knockout"] == "yes", float(r["capped"]), scale)
                          for r in csv.DictReader(fh)]
    if not out:
        raise FileNotFoundError(f"no judge_scores csv under {score_dir}")
    return out


def read_surprise(score_dir: str | Path) -> SurpriseTable:
    table = SurpriseTable()
    with open(Path(score_dir) / "surprise_blanks.csv", newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            k = int(r["blank_id"])
            table.raw.setdefault(k, {})[r["model_id"]] = float(r["raw_distance"])
            table.normalized.setdefault(k, {})[r["model_id"]] = float(r["normalized"])
    with open(Path(score_dir) / "surprise_groups.full.csv", newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            table.groups.setdefault(int(r["group_id"]), {})[r["model_id"]] = float(r["group_surprise"])
    return table


def sensitivity(run_dir: str | Path, configs: Sequence[ScoringConfig], score_dir: str | Path | None = None,
                out_dir: str | Path | None = None) -> RobustnessMatrix:
    """Re-score recorded judge and surprise tables under a configuration grid; no providers involved."""
    ts = load_testset(Path(run_dir) / "testset.json")
    score_dir = Path(score_dir) if score_dir else Path(run_dir) / "scores"
    records = read_records(score_dir)
    surprise = read_surprise(score_dir)
    models = sorted(next(iter(surprise.groups.values())))
    inputs = ScoreInputs(ts, models, records, surprise)
    results = evaluate_configs(inputs, configs)
    out = Path(out_dir) if out_dir else score_dir / "sensitivity"
    out.mkdir(parents=True, exist_ok=True)
    for cid, board in results.items():
        d = out / "configs" / cid
        d.mkdir(parents=True, exist_ok=True)
        gids = ts.group_ids
        _write_csv(d / "final_scores.csv",
                   ["rank", "model_id", "satisfy_mean", "surprise_mean", "total", *(f"g{g}" for g in gids)],
                   [[t.rank, t.model_id, _fixed(t.satisfy_mean, 3), _fixed(t.surprise_mean, 3),
                     _fixed(t.total, 2), *(_fixed(t.groups[g], 2) for g in gids)] for t in board])
    return write_spearman(results, out / "final_scores.spearman.csv")


def recompute_stats(score_dir: str | Path, out_dir: str | Path | None = None) -> dict[str, dict[str, Any]]:
    """Recompute alpha and drift diagnostics from recorded judge scores."""
    out = Path(out_dir) if out_dir else Path(score_dir)
    out.mkdir(parents=True, exist_ok=True)
    docs = {}
    records = read_records(score_dir)
    primary = ScaleKind.SIX_POINT if ScaleKind.SIX_POINT in records else next(iter(records))
    for scale, recs in records.items():
        doc = reliability(recs)
        name = "alpha.json" if scale is primary else f"alpha.{scale.value}.json"
        _write_json(out / name, doc)
        docs[scale.value] = doc
    return docs
