import pytest

from helpers import INPUT_PAIRS, make_problem
from stackgrpo.config import RunConfig
from stackgrpo.corpus import CorpusConfig, generate_corpus


@pytest.fixture(scope="session")
def toy_problems():
    """Five hand-written problems with known reference programs."""
    specs = [
        ("IN IN ADD OUT EOS", "medium"),
        ("IN OUT EOS", "easy"),
        ("IN IN SUB OUT EOS", "medium"),
        ("IN DUP MUL IN ADD OUT EOS", "hard"),
        ("IN NEG OUT EOS", "easy"),
    ]
    return [make_problem(src, INPUT_PAIRS, pid=f"t{i:03d}", difficulty=d) for i, (src, d) in enumerate(specs)]


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(CorpusConfig(easy=3, medium=3, hard=2), seed=7)


@pytest.fixture(scope="session")
def desk_corpus():
    """The default 60-problem corpus (20 per difficulty), generated once per session."""
    cfg = RunConfig()
    return generate_corpus(cfg.corpus, cfg.seed)


_CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
