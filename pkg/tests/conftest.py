from pathlib import Path

import pytest

from clozescore.testset import load_testset, sample_testset

FIXTURES = Path(__file__).parent / "fixtures"
E2E = FIXTURES / "e2e"


@pytest.fixture
def sample():
    return sample_testset()


@pytest.fixture
def mini():
    return load_testset(E2E / "testset.json")


@pytest.fixture
def tiny():
    return load_testset({
        "id": "tiny",
        "segments": [{"text": "The cat sat on "}, {"blank": 1}, {"text": "."}],
        "groups": [{"id": 1, "blanks": [1], "constraints": [{"id": "c1", "text": "Name a surface."}]}],
    })
