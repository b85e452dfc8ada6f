#!/usr/bin/env python3
"""Score the bundled replay fixture end to end and print the leaderboard.

Uses only the recorded cache under tests/fixtures/e2e, so no credentials or
network are needed.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from clozescore.cli import main as cli

FIXTURE = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "e2e"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("replay-demo"), help="run directory to create")
    args = ap.parse_args()
    common = ["--providers", str(FIXTURE / "providers.json"), "--cache-dir", str(FIXTURE / "cache")]
    steps = [
        ["collect", "--testset", str(FIXTURE / "testset.json"), "--models", "model-a,model-b,model-c",
         "--out", str(args.out), *common],
        ["score", "--run", str(args.out), "--judges", "judge-x,judge-y,judge-z", "--embedder", "embedder", *common],
        ["stats", "--run", str(args.out)],
    ]
    for argv in steps:
        code = cli(argv)
        if code:
            return code
    print((args.out / "scores" / "report.md").read_text(encoding="utf-8"))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
