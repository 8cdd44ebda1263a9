import os
import sys
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = FIXTURES / "corpus"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def corpus_paths() -> list[Path]:
    return sorted(CORPUS.glob("*.data"))


@pytest.fixture(scope="session")
def corpus_deck():
    def lookup(stem: str) -> Path:
        return CORPUS / f"{stem}.data"

    return lookup


@pytest.fixture(scope="session")
def spe1_deck_text() -> str:
    return (CORPUS / "spe1_style.data").read_text()


def pytest_configure(config):
    # keep worker subprocesses on the same interpreter
    os.environ.setdefault("PETROMATCH_PYTHON", sys.executable)
