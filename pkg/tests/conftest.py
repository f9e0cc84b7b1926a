import random
from pathlib import Path

import pytest

from cfgtune.params import Boolean, FloatRange, IntRange, ParameterSpace, ParameterSpec

FIXTURES = Path(__file__).parent / "fixtures"


def separable_space(rng: random.Random) -> ParameterSpace:
    """Five parameters: three influential ranges (two int, one float), an int and a flag.

    Every grid stride is at most the range minimum, so the finer window around
    the nearest grid point always covers the true optimum.
    """
    ps = []
    for i in range(2):
        lo = rng.randint(50, 400)
        step = rng.randint(10, lo)
        hi = lo + step * rng.randint(4, 10) + rng.randint(0, step - 1)
        finer = rng.choice([None, max(1, step // 8)])
        ps.append(ParameterSpec(f"int{i}", IntRange(lo, hi, step), lo, influential=True, finer_step=finer))
    lo = round(rng.uniform(0.2, 0.5), 3)
    step = round(rng.uniform(0.05, lo), 3)
    ps.append(ParameterSpec("frac", FloatRange(lo, round(lo + step * rng.randint(3, 8), 3), step), lo,
                            influential=True, finer_step=rng.choice([None, round(step / 5, 4)])))
    ps.append(ParameterSpec("count", IntRange(1, 16, 3), 1))
    ps.append(ParameterSpec("flag", Boolean(), False))
    return ParameterSpace(tuple(ps))


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def toy_space():
    return ParameterSpace((
        ParameterSpec("a", IntRange(0, 10, 5), 0, influential=True, finer_step=1),
        ParameterSpec("b", FloatRange(0.0, 1.0, 0.5), 0.5),
        ParameterSpec("c", Boolean(), False),
    ))


_ACCEPTANCE: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): a numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or report.when != "call" and report.passed:
        return
    number, title = mark.args
    verdict = "PASS" if report.passed else "FAIL"
    if report.when == "call" or verdict == "FAIL":
        _ACCEPTANCE[number] = (title, verdict, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, verdict, secs = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2} {verdict}  {title} ({secs:.2f} s)")
