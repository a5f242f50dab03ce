import itertools

import numpy as np
import pytest

from contagion_im.influence import InfluenceInstance
from contagion_im.network import EconomicNetwork, market_values

# C = [[0, .5], [.5, 0]], Dp = (1, .5), theta = (.9, .9), beta = (.3, .3)
TWO_FIRM = dict(C=[[0.0, 0.5], [0.5, 0.0]], D=np.eye(2), p=[1.0, 0.5],
                theta=[0.9, 0.9], beta=[0.3, 0.3])


@pytest.fixture
def two_firm():
    return EconomicNetwork(**TWO_FIRM)


def random_network(rng, n, m=None, density=0.7, theta_range=(0.6, 1.2)):
    """Valid random network; thresholds scatter around unshocked market values."""
    C = rng.random((n, n)) * (rng.random((n, n)) < density)
    np.fill_diagonal(C, 0.0)
    s = C.sum(axis=0)
    C = C / np.maximum(s, 1e-9) * rng.uniform(0.2, 0.9, n)
    if m is None:
        D = np.eye(n)
        m = n
    else:
        D = rng.random((n, m))
        D = D / D.sum(axis=0)
    p = rng.uniform(0.5, 1.5, m)
    beta = rng.uniform(0.1, 1.0, n)
    net0 = EconomicNetwork(C, D, p, np.zeros(n), beta)
    theta = market_values(net0, []) * rng.uniform(*theta_range, n)
    return net0.replace(theta=theta)


def random_instance(rng, k, density=0.6, scale=1.0):
    A = rng.random((k, k)) * (rng.random((k, k)) < density) * scale
    np.fill_diagonal(A, 0.0)
    theta = rng.uniform(0.2, 1.0, k)
    theta[rng.random(k) < 0.1] = 0.0
    return InfluenceInstance(A, theta, np.ones(k), np.arange(k))


def closure_oracle(A, theta, x, seeds=()):
    """Repeat-until-stable activation, written independently of infmax."""
    k = len(theta)
    active = set(seeds)
    while True:
        new = set(active)
        for v in range(k):
            if v in new:
                continue
            total = x[v] + sum(A[v, u] for u in active)
            if total >= theta[v] - 1e-12:
                new.add(v)
        if new == active:
            return active
        active = new


def self_consistent_sets(net):
    """Every failed set F with F = {i : v_i(F) < theta_i}, by enumeration."""
    out = []
    for r in range(net.n + 1):
        for F in itertools.combinations(range(net.n), r):
            v = market_values(net, F)
            if frozenset(np.flatnonzero(v < net.theta - 1e-12).tolist()) == frozenset(F):
                out.append(frozenset(F))
    return out


# -- acceptance summary: one PASS/FAIL line per criterion ------------------------

_CRITERIA: dict[int, tuple[str, str, list[str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    notes = [str(v) for k, v in item.user_properties if k == "detail"]
    _CRITERIA[marker.args[0]] = (marker.args[1], "PASS" if rep.passed else "FAIL", notes)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, status, notes = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num} {status}: {title}")
        for note in notes:
            terminalreporter.write_line(f"    {note}")
