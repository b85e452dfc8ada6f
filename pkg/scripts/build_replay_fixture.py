#!/usr/bin/env python3
"""Record the end-to-end replay fixture against the offline stub backends.

Runs collect and score in record mode through :func:`clozescore.stubs.stub_transport`,
then freezes the score artifacts (minus the timestamped manifest) as goldens.
Re-running overwrites the cache and goldens under tests/fixtures/e2e.
"""

from __future__ import annotations

import argparse
import shutil
import tempfile
from pathlib import Path

from clozescore import pipeline
from clozescore.providers import ProviderClient, load_providers
from clozescore.stats import default_config_grid
from clozescore.stubs import stub_transport
from clozescore.testset import load_testset

ROOT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "e2e"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fixture", type=Path, default=ROOT)
    args = ap.parse_args()

    fx = args.fixture
    ts = load_testset(fx / "testset.json")
    providers = load_providers(fx / "providers.json")
    models = [p for n, p in providers.items() if n.startswith("model-")]
    judges = [p for n, p in providers.items() if n.startswith("judge-")]

    for d in ("cache", "golden", "golden_responses"):
        shutil.rmtree(fx / d, ignore_errors=True)
    client = ProviderClient("record", fx / "cache", transport=stub_transport(ts), env={"STUB_KEY": "stub"})
    with tempfile.TemporaryDirectory() as tmp:
        run = Path(tmp) / "run"
        pipeline.collect(fx / "testset.json", models, client, run, parallelism=1)
        arts = pipeline.score(run, client, judges, providers["embedder"], default_config_grid(),
                              parallelism=1, context_embedding=True)
        shutil.copytree(arts.root, fx / "golden", ignore=shutil.ignore_patterns("manifest.json"))
        shutil.copytree(run / "responses", fx / "golden_responses")
    print(f"recorded {client.network_calls} call(s); cache at {fx / 'cache'}")


if __name__ == "__main__":
    main()
