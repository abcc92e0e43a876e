import functools

import numpy as np
import pytest

from gelfand_lab.green import DomainSpec
from gelfand_lab.hamiltonian import Configuration, find_critical_point
from gelfand_lab.pde import Discretization, bubble_ansatz, comoving_solve, continue_branch, regrade
from gelfand_lab.spectral import predict_all

DISK = DomainSpec.disk()
ANN = DomainSpec.annulus(0.5)
SWEEP = (1e-2, 3e-3, 1e-3, 1e-4, 1e-5)


@functools.lru_cache(maxsize=1)
def disk_branch():
    """Upper branch on a moderately graded grid, with states stored at every sweep value."""
    coarse = Discretization.radial(DISK, 4096, core=0.05)
    return continue_branch(coarse, (0.0, np.zeros(coarse.size)), lambda_min=min(SWEEP) * (1 - 1e-6),
                           record_lambdas=SWEEP, ds=0.05)


@functools.lru_cache(maxsize=None)
def disk_state(lam):
    """(disc, u) at ``lam`` regraded onto a grid whose core matches the bubble width."""
    br = disk_branch()
    st = br.recorded[f"lambda={lam:.12g}"]
    delta = 1.0 / np.sqrt(lam * np.exp(st.u_max))
    fine = Discretization.radial(DISK, 4096, core=delta)
    u, _ = regrade(st.u, lam, br.disc, fine, keep="lambda")
    return fine, u


@functools.lru_cache(maxsize=None)
def annulus_state(m=3, lam=1e-2, n=192):
    """Co-moving m-peak solve on a centred sector grid; returns (critical config, prediction, result)."""
    crit = find_critical_point(ANN, Configuration.polygonal(m, 0.75), ansatz="polygonal").config
    pred = predict_all(ANN, crit)
    delta = float(pred.d[0] * np.sqrt(lam))

    def make(c):
        return Discretization.sector(ANN, m, c, n_r=n, n_theta=n, core=delta, centered=True)

    res = comoving_solve(make, lam, lambda pts: bubble_ansatz(ANN, crit.points, lam, pred.d, at=pts),
                         crit.r0, 0.05 * delta)
    return crit, pred, res


@pytest.fixture(scope="session")
def branch():
    return disk_branch()


_RESULTS = []


@pytest.fixture
def criterion(request):
    """Record a one-line acceptance result; printed in the terminal summary."""
    def record(number, ok, detail):
        _RESULTS.append((number, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_RESULTS):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
