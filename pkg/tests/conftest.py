import pytest

from recall_forge.engine import EngineConfig
from recall_forge.synth import SynthSpec, generate_synthetic


@pytest.fixture
def engine(tmp_path):
    return EngineConfig(workers=2, scratch_dir=str(tmp_path))


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    generate_synthetic(out, SynthSpec())
    return out


_CRITERIA: list[str] = []


@pytest.fixture
def criterion(request):
    """Call ``criterion(ok, detail)`` once per acceptance criterion; prints a PASS/FAIL line."""
    def record(ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} {request.node.name}: {detail}"
        _CRITERIA.append(line)
        print(line)
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
