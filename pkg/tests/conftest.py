import numpy as np
import pytest

from misc_rl.ndmath import Mlp, make_rng


def central_diff(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` w.r.t. a flat array ``x`` (mutated and restored)."""
    g = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor=1e-7):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@pytest.fixture
def rng():
    return make_rng(0)


@pytest.fixture
def small_net(rng):
    return Mlp([3, 5, 4, 2], ["tanh", "relu", "identity"], rng)


def plugin_mi(joint_table):
    """Brute-force plug-in MI (nats): sum p log(p / (p_x p_y)) over the table."""
    p = np.asarray(joint_table, dtype=np.float64)
    p = p / p.sum()
    total = 0.0
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            if p[i, j] > 0:
                total += p[i, j] * np.log(p[i, j] / (p[i, :].sum() * p[:, j].sum()))
    return total


def gaussian_mi(rho):
    """Analytic MI of a standard bivariate Gaussian with correlation rho."""
    return -0.5 * np.log(1 - rho**2)


def sample_discrete(table, n, rng):
    """Draw n (x, y) symbol pairs from a joint table."""
    p = np.asarray(table, dtype=np.float64).ravel()
    flat = rng.choice(p.size, size=n, p=p / p.sum())
    k = np.asarray(table).shape[1]
    return flat // k, flat % k


# one line per acceptance criterion, echoed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
