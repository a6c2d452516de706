import contextlib
import time

import pytest

# criterion number -> (passed, description, detail); filled in by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, desc, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {desc}  [{detail}]")


@pytest.fixture
def criterion():
    """``with criterion(n, desc) as notes:`` records PASS unless the block raises.

    Append strings to ``notes`` to have them shown next to the verdict.
    """
    @contextlib.contextmanager
    def run(num, desc):
        notes: list[str] = []
        start = time.perf_counter()
        try:
            yield notes
        except BaseException as exc:
            notes.append(f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
            ACCEPTANCE[num] = (False, desc, _detail(notes, start))
            raise
        # a parametrized criterion stays failed once any case fails
        if num not in ACCEPTANCE or ACCEPTANCE[num][0]:
            ACCEPTANCE[num] = (True, desc, _detail(notes, start))
    return run


def _detail(notes, start):
    return "; ".join(notes + [f"{time.perf_counter() - start:.1f}s"])
