import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# criterion number -> (status, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def verdict():
    """Record one acceptance line, print it, then assert it. ``ok=None`` skips."""

    def _record(n: int, ok: bool | None, detail: str) -> None:
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        ACCEPTANCE[n] = (status, detail)
        print(f"ACCEPTANCE {n:>2}: {status}  {detail}")
        if ok is None:
            pytest.skip(detail)
        assert ok, f"criterion {n}: {detail}"

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"ACCEPTANCE {n:>2}: {status}  {detail}")
