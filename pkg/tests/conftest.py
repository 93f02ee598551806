import functools

import pytest

from mmwave_meta import metadist
from mmwave_meta.model import table_one

# acceptance verdicts, printed once at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"criterion {c}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def ref_model():
    return table_one()


@functools.lru_cache(maxsize=None)
def fixed_point(model):
    return metadist.solve_fixed_point(model, strict=True)


@pytest.fixture(scope="session")
def ref_fixed_point(ref_model):
    return fixed_point(ref_model)
