import numpy as np
import pytest
from scipy import stats

ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def chi2_ok(counts, probs, alpha=0.01) -> bool:
    """Pearson goodness of fit at level ``alpha``; zero-probability cells must be empty."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if np.any(counts[probs == 0] > 0):
        return False
    keep = probs > 0
    exp = probs[keep] * counts.sum()
    if keep.sum() < 2:
        return True
    return stats.chisquare(counts[keep], exp).pvalue > alpha


def tv(samples, target) -> float:
    target = np.asarray(target, dtype=float)
    emp = np.bincount(np.asarray(samples), minlength=target.size) / len(samples)
    return 0.5 * float(np.abs(emp - target).sum())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def monitor_line() -> str:
    from dynsketch.leverage import ACCEPTANCE_MONITOR as mon

    return f"suite-wide ratio checks={mon.checks} violations={mon.violations} max ratio={mon.max_ratio:.3g}"


def pytest_sessionfinish(session):
    from dynsketch.leverage import ACCEPTANCE_MONITOR as mon

    # a violation anywhere in the run fails the session even if the raising test caught it
    if mon.violations:
        session.exitstatus = 1
        if 9 in ACCEPTANCE_RESULTS:
            ACCEPTANCE_RESULTS[9] = ("FAIL", ACCEPTANCE_RESULTS[9][1])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    terminalreporter.write_line(monitor_line())
    for n in sorted(ACCEPTANCE_RESULTS):
        status, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
