import functools
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gelfand_lab.errors import IndexOutOfBand, LambdaOutOfRange, NotCirculant
from gelfand_lab.green import DomainSpec, green, robin
from gelfand_lab.hamiltonian import Configuration, find_critical_point, hamiltonian_hess
from gelfand_lab.spectral import (HMatrix, assemble_h, circulant_report, circulant_symbol, concentration_set,
                                  eigen_h, is_circulant, predict_all, predict_d, predict_delta, predict_mu,
                                  predict_mu_second_band, predict_peak_height, prediction_record,
                                  vector_support)

DISK = DomainSpec.disk()
ANN = DomainSpec.annulus(0.5)
LOG2 = np.log(2.0)


@pytest.fixture(scope="module")
def disk_pred():
    return predict_all(DISK, Configuration(np.zeros((1, 2))))


@functools.lru_cache(maxsize=None)
def polygon(m):
    return find_critical_point(ANN, Configuration.polygonal(m, 0.75), ansatz="polygonal").config


def quiet():
    logging.getLogger("gelfand_lab.spectral").setLevel(logging.ERROR)


def test_disk_h_is_zero(disk_pred):
    h = assemble_h(DISK, Configuration(np.zeros((1, 2))))
    assert h.entries.shape == (1, 1) and h.entries[0, 0] == 0.0
    assert disk_pred.Lambda[0] == 0.0
    assert predict_d(disk_pred)[0] == pytest.approx(0.125, abs=1e-15)


def test_two_point_definition_and_hand_eigenpairs():
    quiet()
    pts = np.array([[0.4, 0.1], [-0.4, -0.1]])
    h = assemble_h(DISK, Configuration(pts))
    rb = robin(DISK, pts[0]).value
    g = green(DISK, pts[0], pts[1]).value
    assert np.allclose(h.entries, [[rb + 2 * g, -g], [-g, rb + 2 * g]], rtol=1e-13)
    pred = eigen_h(h)
    assert pred.Lambda == pytest.approx([rb + g, rb + 3 * g], rel=1e-12)
    assert np.allclose(np.abs(pred.C[:, 0]), 1 / np.sqrt(2))
    assert pred.C[0, 1] * pred.C[1, 1] < 0


def test_diagonal_matrix_gives_axes():
    ent = np.diag([3.0, 1.0, 2.0])
    pred = eigen_h(HMatrix(ent, Configuration(np.zeros((3, 2)) + [[0.1, 0], [0.2, 0], [0.3, 0]]),
                           np.diag(ent), np.zeros((3, 3))))
    assert np.allclose(pred.Lambda, [1, 2, 3])
    assert np.allclose(np.abs(pred.C), np.eye(3)[:, [1, 2, 0]])


def test_predict_mu_example(disk_pred):
    L = np.log(1e-4)
    assert L == pytest.approx(-9.21034, abs=1e-5)
    exact = 0.5 / 9.210340371976184 - 0.5 * (3 * LOG2 - 1) / 9.210340371976184**2
    assert predict_mu(disk_pred, 1, 1e-4) == pytest.approx(exact, rel=1e-14)
    # the quoted worked example rounds its first term (0.0542868 -> 0.0542880)
    assert predict_mu(disk_pred, 1, 1e-4) == pytest.approx(0.0479255, abs=1.5e-6)
    gaps = [abs(predict_mu(disk_pred, 1, lam) * (-2 * np.log(lam)) - 1.0) for lam in (1e-10, 1e-20, 1e-40, 1e-80)]
    assert all(b < a for a, b in zip(gaps, gaps[1:])) and gaps[-1] < 6e-3


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-12, 0.9))
def test_predict_mu_second_order_identity(lam):
    pred = predict_all(ANN, polygon(3))
    L = np.log(lam)
    for k in (1, 2, 3):
        val = (predict_mu(pred, k, lam) + 0.5 / L) * L * L
        assert val == pytest.approx(2 * np.pi * pred.Lambda[k - 1] - (3 * LOG2 - 1) / 2, rel=1e-9, abs=1e-12)


def test_predict_mu_monotone_in_lambda_k():
    pred = predict_all(ANN, polygon(4))
    lam = 1e-6
    vals = [predict_mu(pred, k, lam) for k in range(1, 5)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_guards(disk_pred):
    for lam in (1.0, 1.5, 0.0, -1e-3):
        with pytest.raises(LambdaOutOfRange):
            predict_mu(disk_pred, 1, lam)
    with pytest.raises(IndexOutOfBand):
        predict_mu(disk_pred, 2, 1e-3)
    hess = hamiltonian_hess(DISK, disk_pred.config)
    with pytest.raises(IndexOutOfBand):
        predict_mu_second_band(disk_pred, hess, 1, 1e-3)
    with pytest.raises(IndexOutOfBand):
        predict_mu_second_band(disk_pred, hess, 4, 1e-3)


def test_peak_height_and_delta(disk_pred):
    assert predict_peak_height(disk_pred, 1, 1e-4) == pytest.approx(-2 * np.log(1e-4) + 6 * LOG2, abs=1e-12)
    assert predict_peak_height(disk_pred, 1, 1e-4) == pytest.approx(22.5796, abs=1e-4)
    for lam in (1e-2, 1e-5):
        dl = predict_delta(disk_pred, 1, lam)
        assert lam * np.exp(predict_peak_height(disk_pred, 1, lam)) * dl**2 == pytest.approx(1.0, rel=1e-12)


def test_second_band_disk(disk_pred):
    hess = hamiltonian_hess(DISK, disk_pred.config)
    assert np.allclose(disk_pred.eta, -1 / (128 * np.pi), rtol=1e-12)
    assert len(disk_pred.eta) == 2
    for k in (2, 3):
        assert (predict_mu_second_band(disk_pred, hess, k, 1e-3) - 1) / 1e-3 == pytest.approx(3 / 8, rel=1e-10)
        assert predict_mu_second_band(disk_pred, hess, k, 0.0) == 1.0


def test_annulus_structure_m3():
    cfg = polygon(3)
    h = assemble_h(ANN, cfg)
    assert is_circulant(h.entries)
    assert np.all(h.entries[~np.eye(3, dtype=bool)] < 0)
    pred = predict_all(ANN, cfg)
    assert np.allclose(pred.d, pred.d[0], rtol=1e-12)
    assert len(pred.eta) == 6
    rep = circulant_report(h, 3)
    assert rep.multiplicities == [1, 2]
    assert abs(rep.eigenvalues[1] - rep.eigenvalues[2]) <= 1e-9
    assert np.allclose(pred.C[:, 0], np.ones(3) / np.sqrt(3), atol=1e-12)
    # closed form for the symmetric vector: R + 2 G_2 on the m = 3 polygon
    g2 = green(ANN, cfg.points[0], cfg.points[1]).value
    assert pred.Lambda[0] == pytest.approx(robin(ANN, cfg.points[0]).value + 2 * g2, rel=1e-12)


def test_annulus_structure_m4():
    rep = circulant_report(assemble_h(ANN, polygon(4)), 4)
    assert rep.multiplicities == [1, 2, 1]
    assert rep.simple_indices_k_ge_2 == [4]
    assert rep.alternating_index == 4
    assert rep.max_dft_mismatch <= 1e-10


@pytest.mark.parametrize("m", [2, 3, 4, 5, 6, 7, 8])
def test_dft_symbol_matches_dense(m):
    h = assemble_h(ANN, polygon(m))
    assert np.allclose(np.sort(circulant_symbol(h.entries[0])), np.linalg.eigvalsh(h.entries), atol=1e-10)


def test_m1_report_and_not_circulant():
    quiet()
    rep = circulant_report(assemble_h(ANN, Configuration(np.array([[0.7, 0.0]]))), 1)
    assert rep.multiplicities == [1]
    pts = np.array([[0.7, 0.0], [-0.55, 0.1], [0.0, -0.8]])
    with pytest.raises(NotCirculant):
        circulant_report(assemble_h(ANN, Configuration(pts)))


def random_disk_points(seed, m):
    rng = np.random.default_rng(seed)
    while True:
        r = 0.9 * np.sqrt(rng.uniform(0, 1, m))
        t = rng.uniform(0, 2 * np.pi, m)
        pts = np.column_stack([r * np.cos(t), r * np.sin(t)])
        d = np.hypot(*(pts[:, None] - pts[None]).transpose(2, 0, 1))[np.triu_indices(m, 1)]
        if d.min() > 0.05:
            return pts


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_perron_and_two_support(seed, m):
    quiet()
    pred = eigen_h(assemble_h(DISK, Configuration(random_disk_points(seed, m))))
    h = assemble_h(DISK, Configuration(random_disk_points(seed, m))).entries
    assert np.abs(h - h.T).max() <= 1e-12
    assert np.all(h[~np.eye(m, dtype=bool)] < 0)
    c1 = pred.C[:, 0]
    assert np.all(c1 > 1e-6)
    assert concentration_set(pred, 1) == set(range(1, m + 1))
    deg = {i for g in pred.degenerate for i in g}
    for k in range(m):
        assert np.allclose(h @ pred.C[:, k], pred.Lambda[k] * pred.C[:, k], atol=1e-10)
        if k not in deg:
            assert np.sum(np.abs(pred.C[:, k]) > 1e-9) >= 2
            assert len(concentration_set(pred, k + 1)) >= 2
    assert np.allclose(pred.C.T @ pred.C, np.eye(m), atol=1e-10)


def test_concentration_helpers():
    assert vector_support(np.array([-1, 1]) / np.sqrt(2), 1e-6) == {1, 2}
    pred = predict_all(ANN, polygon(3))
    assert concentration_set(pred, 2) is None


def test_prediction_record_fields(disk_pred):
    rec = prediction_record(disk_pred, 1e-3, 1)
    assert set(rec) == {"m", "lambda", "k", "Lambda_k", "mu_pred", "c_k", "d", "multiplicities"}
    assert rec["mu_pred"] == predict_mu(disk_pred, 1, 1e-3)
