"""Shared test setup.

Thread pinning must happen before numpy is first imported anywhere in the
process, so this module sets the BLAS environment variables at import time;
every numeric result in the suite is then single-threaded and bit-stable.
"""

import contextlib
import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import pytest  # noqa: E402

_CRITERION_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion():
    """Context manager recording one PASS/FAIL line per acceptance criterion."""

    @contextlib.contextmanager
    def run(num: int, title: str):
        try:
            yield
        except BaseException as exc:
            line = f"criterion {num:>2} FAIL  {title}: {exc}"
            _CRITERION_LINES.append(line)
            print(line)
            raise
        line = f"criterion {num:>2} PASS  {title}"
        _CRITERION_LINES.append(line)
        print(line)

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERION_LINES):
            terminalreporter.write_line(line)
