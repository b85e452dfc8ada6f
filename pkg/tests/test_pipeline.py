import json
import shutil
from pathlib import Path

import pytest

from clozescore import pipeline
from clozescore.cli import main
from clozescore.providers import CredentialError, ProviderClient, load_providers
from clozescore.stats import MAIN_CONFIG, default_config_grid
from clozescore.stubs import stub_transport
from clozescore.testset import bundled_path
from clozescore.verify import verify_paper

from .conftest import E2E
from .test_providers import exploding

GOLDEN = E2E / "golden"


def providers():
    return load_providers(E2E / "providers.json")


def replay_client():
    return ProviderClient("replay", E2E / "cache", transport=exploding())


def collect(out, client=None):
    ps = providers()
    models = [p for n, p in ps.items() if n.startswith("model-")]
    return pipeline.collect(E2E / "testset.json", models, client or replay_client(), out, parallelism=2)


def score(run, out=None, configs=None, client=None):
    ps = providers()
    judges = [p for n, p in ps.items() if n.startswith("judge-")]
    return pipeline.score(run, client or replay_client(), judges, ps["embedder"],
                          configs or default_config_grid(), out, parallelism=4, context_embedding=True)


def tree(root: Path, skip=("manifest.json",)):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name not in skip}


@pytest.fixture(scope="module")
def scored(tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    collect(run)
    arts = score(run)
    return run, arts


class TestCollect:
    def test_three_response_files(self, scored):
        run, _ = scored
        files = sorted(p.name for p in (run / "responses").glob("*.json"))
        assert files == ["model-a.json", "model-b.json", "model-c.json"]
        assert tree(run / "responses") == tree(E2E / "golden_responses")

    def test_incomplete_model_is_flagged(self, tmp_path, mini):
        client = ProviderClient("record", tmp_path / "cache", env={"STUB_KEY": "k"},
                                transport=stub_transport(mini, incomplete={"stub-model-b": frozenset({6})}))
        result = collect(tmp_path / "run", client)
        assert set(result.flagged) == {"model-b"}
        doc = json.loads((tmp_path / "run" / "responses" / "model-b.json").read_text())
        assert doc["missing"] == [6]
        arts = score(tmp_path / "run", configs=[MAIN_CONFIG], client=client)
        blanks = (arts.root / "surprise_blanks.csv").read_text().splitlines()
        assert not any(line.startswith("6,model-b,") for line in blanks)

    def test_credentials_checked_first(self, tmp_path):
        client = ProviderClient("record", tmp_path / "cache", transport=exploding(), env={})
        with pytest.raises(CredentialError):
            collect(tmp_path / "run", client)
        assert client.network_calls == 0
        assert not (tmp_path / "run" / "responses").exists() or not any((tmp_path / "run" / "responses").iterdir())


class TestScore:
    def test_matches_golden(self, scored):
        _, arts = scored
        got = tree(arts.root)
        want = tree(GOLDEN)
        assert sorted(got) == sorted(want)
        for name in want:
            assert got[name] == want[name], name

    def test_two_runs_identical(self, scored, tmp_path):
        run, arts = scored
        again = score(run, out=tmp_path / "again")
        assert again.digests() == arts.digests()

    def test_single_config_spearman(self, scored, tmp_path):
        run, _ = scored
        arts = score(run, out=tmp_path / "one", configs=[MAIN_CONFIG])
        lines = (arts.root / "final_scores.spearman.csv").read_text().splitlines()
        assert lines == ["config,6pt-soft-C1", "6pt-soft-C1,1.000"]

    def test_manifest_records_setup(self, scored):
        _, arts = scored
        manifest = json.loads((arts.root / "manifest.json").read_text())
        assert manifest["mode"] == "replay"
        assert [j["name"] for j in manifest["judges"]] == ["judge-x", "judge-y", "judge-z"]
        assert len(manifest["configs"]) == 14

    def test_no_network_in_replay(self, scored):
        # replay_client uses a transport that fails on contact; reaching here means none happened
        _, arts = scored
        assert (arts.root / "report.md").exists()


class TestOffline:
    def test_recompute_stats(self, scored, tmp_path):
        _, arts = scored
        copy = tmp_path / "scores"
        shutil.copytree(arts.root, copy)
        docs = pipeline.recompute_stats(copy)
        stored = json.loads((GOLDEN / "alpha.json").read_text())
        assert docs["six_point"]["alpha"] == pytest.approx(stored["alpha"], abs=1e-12)

    def test_sensitivity_rebuilds_matrix(self, scored, tmp_path):
        run, arts = scored
        matrix = pipeline.sensitivity(run, default_config_grid(), arts.root, tmp_path / "sens")
        assert len(matrix.configs) == 14
        assert (tmp_path / "sens" / "final_scores.spearman.csv").read_bytes() == \
            (GOLDEN / "final_scores.spearman.csv").read_bytes()


class TestCli:
    def common(self):
        return ["--providers", str(E2E / "providers.json"), "--cache-dir", str(E2E / "cache")]

    def test_collect_and_score(self, tmp_path, capsys):
        run = tmp_path / "run"
        assert main(["collect", "--testset", str(E2E / "testset.json"), "--models", "model-a,model-b,model-c",
                     "--out", str(run), *self.common()]) == 0
        assert main(["score", "--run", str(run), "--judges", "judge-x,judge-y,judge-z", "--embedder", "embedder",
                     "--context-embedding", *self.common()]) == 0
        assert tree(run / "scores") == tree(GOLDEN)
        assert main(["stats", "--run", str(run)]) == 0
        assert "six_point: alpha=" in capsys.readouterr().out
        assert main(["sensitivity", "--run", str(run), "--configs", "main"]) == 0

    def test_validate(self, tmp_path):
        assert main(["validate", "--testset", str(E2E / "testset.json")]) == 0
        bad = json.loads((E2E / "testset.json").read_text())
        bad["edges"].append({"from": 3, "to": 1, "criterion": "loop"})
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(bad))
        assert main(["validate", "--testset", str(path)]) == 2

    def test_cache_miss_is_provider_failure(self, tmp_path):
        code = main(["collect", "--testset", str(E2E / "testset.json"), "--out", str(tmp_path / "r"),
                     "--providers", str(E2E / "providers.json"), "--cache-dir", str(tmp_path / "empty"),
                     "--models", "model-a"])
        assert code == 3

    def test_unknown_provider(self, tmp_path):
        code = main(["collect", "--testset", str(E2E / "testset.json"), "--out", str(tmp_path / "r"),
                     *self.common(), "--models", "nobody"])
        assert code == 1

    def test_wrong_kind(self, tmp_path):
        code = main(["score", "--run", str(tmp_path), "--judges", "embedder", *self.common()])
        assert code == 1

    def test_bad_flag(self):
        assert main(["score", "--bogus"]) == 1

    def test_verify_paper_prints_table(self, capsys):
        code = main(["verify-paper"])
        out = capsys.readouterr().out
        assert "totals within ±0.05: 12/12" in out
        assert code == (0 if verify_paper(bundled_path("paper_tables.csv")).passed else 4)


def test_score_refuses_foreign_directory(scored, tmp_path):
    run, _ = scored
    (tmp_path / "keep.txt").write_text("mine")
    with pytest.raises(ValueError, match="refusing"):
        score(run, out=tmp_path, configs=[MAIN_CONFIG])
    assert (tmp_path / "keep.txt").exists()
