import numpy as np
import pytest

from invkern.group_algebra import cyclic_rotation, permutations, reflection, signed_permutations

# exact groups exercised by the identity and invariance suites
BATTERY = {
    "reflection": lambda: reflection(2),
    "cyclic2": lambda: cyclic_rotation(2),
    "cyclic4": lambda: cyclic_rotation(4),
    "cyclic8": lambda: cyclic_rotation(8),
    "perm3": lambda: permutations(3),
    "signed3": lambda: signed_permutations(3),
}

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(params=sorted(BATTERY))
def exact_group(request):
    return BATTERY[request.param]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per criterion; printed in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

