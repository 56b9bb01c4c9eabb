import math

import numpy as np
import pytest


def dense_blur(m, sigma, radius):
    """Brute-force 2-D Gaussian convolution.

    Builds the full (h*w) x (h*w) matrix of square-window Gaussian taps and
    balances it directly in 2-D so that every output's weights and every
    source's spread sum to 1, then applies it to the flattened map.
    """
    h, w = m.shape
    n = h * w
    k = np.zeros((n, n))
    for y in range(h):
        for x in range(w):
            for u in range(max(0, y - radius), min(h, y + radius + 1)):
                for v in range(max(0, x - radius), min(w, x + radius + 1)):
                    k[y * w + x, u * w + v] = math.exp(-((y - u) ** 2 + (x - v) ** 2) / (2 * sigma ** 2))
    s = np.ones(n)
    for _ in range(100_000):
        r = s * (k @ s)
        if np.abs(r - 1).max() < 1e-15:
            break
        s /= np.sqrt(r)
    return ((s[:, None] * k * s[None, :]) @ m.reshape(-1)).reshape(h, w)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = (mark.args[0], mark.args[1])
    failed = rep.failed or (rep.when == "call" and rep.skipped)
    if rep.when == "call" or failed:
        prev = _CRITERIA.get(key, "PASS")
        _CRITERIA[key] = "FAIL" if failed or prev == "FAIL" else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), status in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"criterion {num}: {status}  {title}")
