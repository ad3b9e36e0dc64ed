import numpy as np
import pytest

from capslstm import numcore as nc
from capslstm.numcore import GradTape, ParameterSet, Tensor, finite_difference_gradient, relative_error

GRAD_TOL = 1e-4
FD_STEP = 1e-5
SEEDS = [0, 1, 2, 3, 4]


def grad_check(fn, inputs, seed=0, step=FD_STEP):
    """Relative error between tape and central-difference gradients.

    ``fn`` maps a ParameterSet to a Tensor; it is reduced to a scalar by a
    fixed random projection so every output element contributes.
    """
    params = ParameterSet({k: v if isinstance(v, Tensor) else np.asarray(v, dtype=float)
                          for k, v in inputs.items()})
    proj = np.random.default_rng(seed + 1000).normal(size=fn(params).shape)
    with GradTape() as tape:
        tape.watch(params)
        loss = nc.sum(nc.mul(fn(params), Tensor(proj)))
    analytic = tape.gradient(loss, params)
    numeric = finite_difference_gradient(lambda p: float(np.sum(fn(p).data * proj)), params, step)
    return relative_error(analytic, numeric)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_acceptance = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
