import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from degreegan.qm9 import VocabSpec  # noqa: E402

FIXTURE = Path(__file__).resolve().parents[1] / "src" / "degreegan" / "data" / "fixture.sdf"


@pytest.fixture
def fixture_sdf() -> Path:
    return FIXTURE


@pytest.fixture
def tiny_vocab() -> VocabSpec:
    return VocabSpec(("C", "N", "empty"), ("no-edge", "single", "double"), max_nodes=3)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
