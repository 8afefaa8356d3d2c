import sys
from pathlib import Path

import pytest

from rlmolgan.chem import read_corpus

DATA = Path(__file__).resolve().parents[1] / "src" / "rlmolgan" / "data"
CORPUS_PATH = DATA / "desk_corpus.smi"


@pytest.fixture(scope="session")
def corpus() -> list[str]:
    return read_corpus(CORPUS_PATH)


@pytest.fixture(scope="session")
def toy_corpus_path(tmp_path_factory, corpus) -> Path:
    """The first 200 molecules of the desk corpus."""
    path = tmp_path_factory.mktemp("data") / "toy200.smi"
    path.write_text("\n".join(corpus[:200]) + "\n", encoding="utf-8")
    return path


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.RESULTS:
        terminalreporter.write_line(line)
