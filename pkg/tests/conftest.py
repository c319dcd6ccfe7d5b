import numpy as np
import pytest

from parkocc.synthgen import builtin_parking_lot, generate_sequence
from parkocc.semantics import default_remap_table


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def seed0_sequence(tmp_path_factory):
    """Builtin garage, seed 0, region 0, first 20 frames."""
    scene, trajectories = builtin_parking_lot(0)
    out = tmp_path_factory.mktemp("seq") / "seed0"
    generate_sequence(scene, trajectories[0][:20], out=out, remap_table=default_remap_table())
    return out


_VERDICTS = []


@pytest.fixture
def criterion():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
