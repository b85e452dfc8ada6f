"""Command line entry point.

Verbs: collect, score, stats, sensitivity, verify-paper. Exit codes are
0 success, 1 usage, 2 validation findings, 3 provider failure, 4 scoring
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import pipeline
from .judge import EnsembleError, JudgeOutputError
from .providers import ProviderClient, ProviderError, load_providers
from .stats import StatsError, parse_configs
from .testset import TestSetError, load_testset, validate
from .verify import DEFAULT_TOLERANCE, TableFormatError, verify_paper

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_PROVIDER, EXIT_SCORING = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _names(text: str | None) -> list[str]:
    return [t.strip() for t in (text or "").split(",") if t.strip()]


def _pick(providers, names, kind):
    if names:
        missing = [n for n in names if n not in providers]
        if missing:
            raise UsageError(f"unknown provider(s): {', '.join(missing)}")
        chosen = [providers[n] for n in names]
    else:
        chosen = [p for p in providers.values() if p.kind == kind]
    bad = [p.name for p in chosen if p.kind != kind]
    if bad:
        raise UsageError(f"provider(s) {', '.join(bad)} are not {kind} providers")
    return chosen


def _client(args) -> ProviderClient:
    cache = Path(args.cache_dir) if args.cache_dir else None
    if args.mode in ("replay", "record") and cache is None:
        raise UsageError(f"--mode {args.mode} needs --cache-dir")
    return ProviderClient(args.mode, cache)


def cmd_collect(args) -> int:
    providers = load_providers(args.providers)
    models = _pick(providers, _names(args.models), "chat")
    if not models:
        raise UsageError("no evaluated models configured")
    result = pipeline.collect(args.testset, models, _client(args), args.out, args.parallelism,
                              args.reveal_constraints)
    print(f"collected {len(result.responses)} response(s) into {args.out}")
    for m, why in sorted(result.flagged.items()):
        print(f"  flagged {m}: {why}")
    return EXIT_OK


def cmd_score(args) -> int:
    providers = load_providers(args.providers)
    judges = _pick(providers, _names(args.judges), "chat")
    embedders = _pick(providers, _names(args.embedder), "embedding")
    if len(embedders) != 1:
        raise UsageError("exactly one embedding provider is required (use --embedder)")
    configs = parse_configs(args.configs)
    arts = pipeline.score(args.run, _client(args), judges, embedders[0], configs, args.out,
                          args.parallelism, _names(args.exclude_from_centroid), args.context_embedding)
    print(f"wrote {len(arts.paths)} artifact(s) to {arts.root}")
    return EXIT_OK


def cmd_stats(args) -> int:
    score_dir = Path(args.out or Path(args.run) / "scores")
    docs = pipeline.recompute_stats(score_dir)
    for scale, doc in docs.items():
        if doc["error"]:
            print(f"{scale}: alpha undefined ({doc['error']})")
        else:
            print(f"{scale}: alpha={doc['alpha']:.3f} items={doc['n_items']} raters={doc['n_raters']} "
                  f"within={doc['within_item']:.3f} between={doc['between_item']:.3f}")
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    configs = parse_configs(args.configs)
    matrix = pipeline.sensitivity(args.run, configs, args.score_dir, args.out)
    width = max(len(c) for c in matrix.configs)
    for cid, row in zip(matrix.configs, matrix.cells):
        print(f"{cid:<{width}}  " + " ".join(f"{v:6.3f}" for v in row))
    return EXIT_OK


def cmd_verify_paper(args) -> int:
    start = time.perf_counter()
    check = verify_paper(args.tables, tolerance=args.tolerance)
    for line in check.lines():
        print(line)
    print(f"elapsed {time.perf_counter() - start:.3f}s")
    return EXIT_OK if check.passed else EXIT_SCORING


def cmd_validate(args) -> int:
    report = validate(load_testset(args.testset))
    for f in report.findings:
        print(f"{f.code}: {f.message}")
    if report.ok:
        print("ok; topological order: " + " -> ".join(f"G{g}" for g in report.topological_order))
        return EXIT_OK
    return EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clozescore", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def provider_flags(sp):
        sp.add_argument("--providers", default="providers.json", help="provider config file")
        sp.add_argument("--mode", choices=("live", "replay", "record"), default="replay")
        sp.add_argument("--cache-dir", help="record/replay cache directory")
        sp.add_argument("--parallelism", type=int, default=4)

    sp = sub.add_parser("collect", help="query evaluated models and parse their fillings")
    sp.add_argument("--testset", required=True)
    sp.add_argument("--models", help="comma-separated provider names (default: all chat providers)")
    sp.add_argument("--out", required=True, help="run directory")
    sp.add_argument("--reveal-constraints", action="store_true",
                    help="show group constraints to evaluated models")
    provider_flags(sp)
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("score", help="judge, embed and score a collected run")
    sp.add_argument("--run", required=True)
    sp.add_argument("--judges", required=True, help="comma-separated chat provider names")
    sp.add_argument("--embedder", help="embedding provider name (default: the only one configured)")
    sp.add_argument("--configs", default="default", help="'default', 'main' or comma-separated config ids")
    sp.add_argument("--out", help="artifact directory (default: <run>/scores)")
    sp.add_argument("--exclude-from-centroid", help="models scored but left out of surprise centroids")
    sp.add_argument("--context-embedding", action="store_true",
                    help="also report surprise for fillings embedded with their local sentence")
    provider_flags(sp)
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("stats", help="recompute alpha and drift diagnostics from judge scores")
    sp.add_argument("--run", required=True)
    sp.add_argument("--out", help="score directory (default: <run>/scores)")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("sensitivity", help="re-score under a configuration grid and emit the Spearman matrix")
    sp.add_argument("--run", required=True)
    sp.add_argument("--score-dir", help="default: <run>/scores")
    sp.add_argument("--configs", default="default")
    sp.add_argument("--out", help="default: <score-dir>/sensitivity")
    sp.set_defaults(func=cmd_sensitivity)

    sp = sub.add_parser("verify-paper", help="recompute composite totals from published group tables")
    sp.add_argument("--tables", default=str(Path(__file__).parent / "data" / "paper_tables.csv"))
    sp.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    sp.set_defaults(func=cmd_verify_paper)

    sp = sub.add_parser("validate", help="check a test set file")
    sp.add_argument("--testset", required=True)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (pipeline.ValidationFailed, TestSetError) as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ProviderError as exc:
        print(f"provider failure: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (pipeline.ScoringFailure, EnsembleError, JudgeOutputError, StatsError, TableFormatError) as exc:
        print(f"scoring failure: {exc}", file=sys.stderr)
        return EXIT_SCORING
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
