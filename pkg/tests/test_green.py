import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gelfand_lab.errors import CoincidentPoints, PointOutsideDomain
from gelfand_lab.green import (DomainSpec, annulus_tail_bound, green, green_field, regular_part,
                               robin)

import oracles

DISK = DomainSpec.disk()
ANN = DomainSpec.annulus(0.5)


def polar(r, t):
    return np.array([r * np.cos(t), r * np.sin(t)])


def disk_point():
    return st.tuples(st.floats(0.0, 0.95), st.floats(0, 2 * np.pi)).map(lambda p: polar(*p))


def annulus_point():
    return st.tuples(st.floats(0.52, 0.98), st.floats(0, 2 * np.pi)).map(lambda p: polar(*p))


def test_disk_green_example():
    g = green(DISK, [0.5, 0.0], [-0.5, 0.0]).value
    assert g == pytest.approx(np.log(1.25) / (2 * np.pi), abs=1e-14)
    assert g == pytest.approx(0.035514, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(disk_point(), disk_point())
def test_disk_green_matches_moebius_form(x, y):
    if np.linalg.norm(x - y) < 1e-3:
        return
    assert green(DISK, x, y).value == pytest.approx(oracles.disk_green(x, y), rel=1e-11, abs=1e-13)


@settings(max_examples=60, deadline=None)
@given(annulus_point(), annulus_point())
def test_green_symmetry(x, y):
    if np.linalg.norm(x - y) < 1e-3:
        return
    for dom in (DISK, ANN):
        a, b = green(dom, x, y).value, green(dom, y, x).value
        assert abs(a - b) <= 1e-12 * max(1.0, abs(a))
        ka, kb = regular_part(dom, x, y).value, regular_part(dom, y, x).value
        assert abs(ka - kb) <= 1e-12 * max(1.0, abs(ka))


def test_annulus_green_fd_oracle():
    x = np.array([0.75, 0.0])
    y = 0.75 * np.array([np.cos(2 * np.pi / 3), np.sin(2 * np.pi / 3)])
    k_fd = oracles.annulus_regular_fd(0.5, y, x, nr=40, nth=128)
    g_fd = np.log(1.0 / np.linalg.norm(x - y)) / (2 * np.pi) + k_fd
    assert green(ANN, x, y).value == pytest.approx(g_fd, abs=1e-4)


def test_annulus_robin_fd_oracle():
    x = np.array([0.7, 0.0])
    k_fd = oracles.annulus_regular_fd(0.5, x, x, nr=40, nth=128)
    assert regular_part(ANN, x, x).value == pytest.approx(k_fd, abs=1e-4)
    assert robin(ANN, x).value == pytest.approx(k_fd, abs=1e-4)


def test_disk_robin_examples():
    r0 = robin(DISK, [0.0, 0.0])
    assert r0.value == 0.0 and np.allclose(r0.grad, 0.0)
    assert robin(DISK, [0.6, 0.0]).value == pytest.approx(np.log(0.64) / (2 * np.pi), abs=1e-14)
    assert regular_part(DISK, [0.0, 0.0], [0.0, 0.0]).value == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.52, 0.98), st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi))
def test_annulus_robin_radial(r, t1, t2):
    assert abs(robin(ANN, polar(r, t1)).value - robin(ANN, polar(r, t2)).value) <= 1e-12


@pytest.mark.parametrize("dom", [DISK, ANN], ids=["disk", "annulus"])
def test_boundary_decay_is_linear(dom):
    # G vanishes on the boundary like dist * (normal derivative); halving dist halves G
    y = polar(0.75, 0.3)
    lo, hi = dom.radial_bounds()
    edges = [(hi, -1.0)] + ([(lo, 1.0)] if dom.kind == "annulus" else [])
    for t in np.linspace(0, 2 * np.pi, 13):
        for edge, sgn in edges:
            d1 = 1e-3 * dom.diameter
            g1 = green(dom, polar(edge + sgn * d1, t), y)
            g2 = green(dom, polar(edge + sgn * d1 / 2, t), y).value
            assert 0 < g2 < g1.value
            assert g1.value / g2 == pytest.approx(2.0, rel=2e-2)
            assert g1.value <= 1.01 * d1 * np.linalg.norm(g1.grad_x)


def test_boundary_bound_for_central_source():
    y = np.zeros(2)
    eps = 1e-3 * DISK.diameter
    for t in np.linspace(0, 2 * np.pi, 13):
        assert abs(green(DISK, polar(1 - eps, t), y).value) <= 1e-3


@pytest.mark.parametrize("dom", [DISK, ANN], ids=["disk", "annulus"])
def test_regular_part_harmonic(dom):
    y = polar(0.72, 0.4)
    x0 = polar(0.8, 2.0)
    errs = []
    for h in (4e-2, 2e-2, 1e-2):
        k = lambda dx, dy: regular_part(dom, x0 + [dx, dy], y).value
        lap = (k(h, 0) + k(-h, 0) + k(0, h) + k(0, -h) - 4 * k(0, 0)) / h**2
        errs.append(abs(lap))
    assert errs[2] < errs[1] < errs[0]
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.15)


def test_series_truncation_within_bound():
    x, y = polar(0.9, 0.0), polar(0.88, 0.01)
    coarse = DomainSpec.annulus(0.5, 40)
    fine = DomainSpec.annulus(0.5, 80)
    g1 = green(coarse, x, y)
    g2 = green(fine, x, y)
    assert abs(g1.value - g2.value) <= g1.tail_bound + 1e-15
    assert annulus_tail_bound(0.5, 40, 0.99) > annulus_tail_bound(0.5, 80, 0.99)


@pytest.mark.parametrize("dom", [DISK, ANN], ids=["disk", "annulus"])
def test_derivatives_match_finite_differences(dom):
    x, y = polar(0.66, 0.3), polar(0.81, 2.2)
    h = 1e-5
    ev = green(dom, x, y, hessian=True)
    e = np.eye(2)
    fd = np.array([(green(dom, x + h * e[i], y).value - green(dom, x - h * e[i], y).value) / (2 * h)
                   for i in range(2)])
    assert np.allclose(ev.grad_x, fd, rtol=1e-6, atol=1e-9)
    fdh = np.array([(green(dom, x + h * e[i], y).grad_x - green(dom, x - h * e[i], y).grad_x) / (2 * h)
                    for i in range(2)])
    assert np.allclose(ev.hess_x, fdh, rtol=1e-6, atol=1e-8)
    rv = robin(dom, x)
    fdr = np.array([(robin(dom, x + h * e[i]).value - robin(dom, x - h * e[i]).value) / (2 * h) for i in range(2)])
    assert np.allclose(rv.grad, fdr, rtol=1e-6, atol=1e-9)
    fdrh = np.array([(robin(dom, x + h * e[i]).grad - robin(dom, x - h * e[i]).grad) / (2 * h) for i in range(2)])
    assert np.allclose(rv.hess, fdrh, rtol=1e-6, atol=1e-8)
    assert np.allclose(rv.hess, rv.hess.T, atol=1e-12)


def test_errors():
    with pytest.raises(PointOutsideDomain):
        green(DISK, [1.2, 0.0], [0.0, 0.0])
    with pytest.raises(PointOutsideDomain):
        robin(ANN, [0.1, 0.0])
    with pytest.raises(CoincidentPoints):
        green(ANN, [0.7, 0.0], [0.7, 0.0])
    with pytest.raises(ValueError):
        DomainSpec.annulus(1.5)
    with pytest.raises(ValueError):
        DomainSpec.annulus(0.5, 4)
    with pytest.raises(ValueError):
        DomainSpec.disk(-1.0)


def test_green_field_matches_pointwise():
    y = polar(0.7, 0.0)
    xs = np.array([polar(0.6, t) for t in (1.0, 2.0, 3.0)])
    vals = green_field(ANN, xs, y)
    assert np.allclose(vals, [green(ANN, x, y).value for x in xs], rtol=1e-12)
