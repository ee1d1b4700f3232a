import warnings

import numpy as np
import pytest

from jointred.models import make_model, synthetic_data


@pytest.fixture(autouse=True)
def _quiet_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture(scope="session")
def linear_small():
    model = make_model("random-linear", dict(n=50, d=10, seed=3))
    model, truth, _ = synthetic_data(model, seed=1, noise_std=1.0)
    return model


@pytest.fixture(scope="session")
def linear_soft():
    """Weakly informative linear problem (cap never active)."""
    model = make_model("random-linear", dict(n=30, d=8, rho0=0.1, kappa0=1.0, seed=4))
    model, _, _ = synthetic_data(model, seed=2, noise_std=0.5)
    return model


@pytest.fixture(scope="session")
def elliptic_small():
    model = make_model("elliptic", dict(nx=12, ny=6, marginal_std=0.3, length_scale=3000.0))
    model, _, _ = synthetic_data(model, seed=1, snr=100)
    return model


@pytest.fixture(scope="session")
def gomos_small():
    model = make_model("gomos", dict(n_alts=8, n_gas=2, n_nu=30, noise_std=0.1))
    model, _, _ = synthetic_data(model, seed=1)
    return model


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


_ACCEPTANCE = []


@pytest.fixture
def acceptance_report():
    """Record and print one pass/fail line per acceptance criterion."""

    def report(number, title, ok, detail, seconds):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'} ({seconds:.1f} s): {title} | {detail}"
        _ACCEPTANCE.append((number, line))
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
