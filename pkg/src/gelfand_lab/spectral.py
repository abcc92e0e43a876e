"""Asymptotic spectral predictions built from the h-matrix.

For a configuration ``kappa_1..kappa_m`` the symmetric matrix

    h_ii = R(kappa_i) + 2 sum_{l != i} G(kappa_l, kappa_i)
    h_ij = -G(kappa_i, kappa_j)            (i != j)

has eigenvalues ``Lambda^1 <= ... <= Lambda^m`` and eigenvectors ``c^k``.
They enter the first-band eigenvalue expansion

    mu^k(lambda) = -1/(2 log lambda)
                   + (2 pi Lambda^k - (3 log 2 - 1)/2) / (log lambda)^2,

the bubble scales ``d_j = exp(4 pi (R(kappa_j) + sum_{i != j} G)) / 8``, the
peak heights ``-2 log lambda - 2 log d_j`` and, through the eigenvalues
``eta`` of ``D Hess(H) D`` with ``D = diag(d_1, d_1, ..., d_m, d_m)``, the
second-band expansion ``mu^k = 1 - 48 pi eta^(3m - k + 1) lambda``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import IndexOutOfBand, LambdaOutOfRange, NotCirculant
from .green import DomainSpec, green, robin
from .hamiltonian import Configuration, hamiltonian_grad, hamiltonian_hess

log = logging.getLogger(__name__)

LOG2 = np.log(2.0)
#: constant (3 log 2 - 1) / 2 of the second-order term
SECOND_ORDER_SHIFT = 0.5 * (3.0 * LOG2 - 1.0)


@dataclass(frozen=True)
class HMatrix:
    entries: np.ndarray
    source_config: Configuration
    robin_values: np.ndarray
    green_matrix: np.ndarray

    @property
    def m(self) -> int:
        return self.entries.shape[0]


@dataclass
class SpectralPrediction:
    Lambda: np.ndarray
    C: np.ndarray
    d: np.ndarray
    config: Configuration
    eta: Optional[np.ndarray] = None
    degenerate: list = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.Lambda)


def assemble_h(domain: DomainSpec, config: Configuration, grad_tol: float = 1e-8) -> HMatrix:
    """Build the h-matrix.  Warns (does not fail) away from a critical point."""
    pts = config.points
    m = len(pts)
    gnorm = float(np.linalg.norm(hamiltonian_grad(domain, config)))
    if gnorm > grad_tol:
        log.warning("assemble_h: configuration is not critical (|grad H| = %.3e)", gnorm)
    rv = np.array([robin(domain, p).value for p in pts])
    gm = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            gm[i, j] = gm[j, i] = green(domain, pts[i], pts[j]).value
    h = -gm.copy()
    h[np.diag_indices(m)] = rv + 2.0 * gm.sum(axis=1)
    return HMatrix(h, config, rv, gm)


def _fix_sign(vec: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(vec)))
    return vec if vec[k] > 0 else -vec


def group_equal(values, tol: float = 1e-9) -> list[list[int]]:
    """Group sorted values whose neighbours differ by at most ``tol`` (relative to max(1, |v|))."""
    groups: list[list[int]] = []
    for i, v in enumerate(values):
        if groups and abs(v - values[groups[-1][-1]]) <= tol * max(1.0, abs(v)):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def eigen_h(h: HMatrix, degeneracy_tol: float = 1e-9) -> SpectralPrediction:
    """Ascending eigen-decomposition of ``h``.

    Eigenvectors have unit length and a positive largest-magnitude entry.
    Within a degenerate cluster they form an orthonormal basis of the
    eigenspace (their individual directions carry no meaning).
    """
    ent = 0.5 * (h.entries + h.entries.T)
    lam, vecs = np.linalg.eigh(ent)
    C = np.column_stack([_fix_sign(vecs[:, k]) for k in range(len(lam))])
    groups = [g for g in group_equal(lam, degeneracy_tol) if len(g) > 1]
    rv = h.robin_values
    gm = h.green_matrix
    d = np.exp(4.0 * np.pi * (rv + gm.sum(axis=1))) / 8.0
    return SpectralPrediction(lam, C, d, h.source_config, degenerate=groups)


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not 0.0 < lam < 1.0:
        raise LambdaOutOfRange(f"lambda must lie in (0, 1), got {lam}")
    return lam


def predict_mu(pred: SpectralPrediction, k: int, lam: float) -> float:
    """Two-term expansion of the k-th eigenvalue (k is 1-based, k <= m)."""
    lam = _check_lambda(lam)
    if not 1 <= k <= pred.m:
        raise IndexOutOfBand(f"first band index must be in 1..{pred.m}, got {k}")
    L = np.log(lam)
    return float(-0.5 / L + (2.0 * np.pi * pred.Lambda[k - 1] - SECOND_ORDER_SHIFT) / L**2)


def predict_d(pred: SpectralPrediction) -> np.ndarray:
    return pred.d.copy()


def predict_peak_height(pred: SpectralPrediction, j: int, lam: float) -> float:
    """Leading-order peak height ``-2 log lambda - 2 log d_j`` (j is 1-based)."""
    lam = _check_lambda(lam)
    return float(-2.0 * np.log(lam) - 2.0 * np.log(pred.d[j - 1]))


def predict_delta(pred: SpectralPrediction, j: int, lam: float) -> float:
    """Predicted bubble width ``d_j lambda^(1/2)``."""
    return float(pred.d[j - 1] * np.sqrt(lam))


def second_band_eta(pred: SpectralPrediction, hess: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of ``D hess D``; also stored on ``pred``."""
    Dd = np.repeat(pred.d, 2)
    mat = Dd[:, None] * np.asarray(hess) * Dd[None, :]
    eta = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    pred.eta = eta
    return eta


def predict_mu_second_band(pred: SpectralPrediction, hess: np.ndarray, k: int, lam: float) -> float:
    """Linear-in-lambda expansion for ``m + 1 <= k <= 3m``.

    ``lam = 0`` is accepted and returns exactly 1.
    """
    m = pred.m
    if not m + 1 <= k <= 3 * m:
        raise IndexOutOfBand(f"second band index must be in {m + 1}..{3 * m}, got {k}")
    lam = float(lam)
    if lam < 0.0 or lam >= 1.0:
        raise LambdaOutOfRange(f"lambda must lie in [0, 1), got {lam}")
    eta = second_band_eta(pred, hess)
    return float(1.0 - 48.0 * np.pi * eta[3 * m - k] * lam)


def predict_all(domain: DomainSpec, config: Configuration) -> SpectralPrediction:
    """Convenience: h-matrix, its eigen-decomposition and the eta spectrum."""
    pred = eigen_h(assemble_h(domain, config))
    second_band_eta(pred, hamiltonian_hess(domain, config))
    return pred


def concentration_set(pred: SpectralPrediction, k: int, tol: float = 1e-3) -> Optional[set[int]]:
    """1-based indices ``j`` with ``|c_j^k| > tol * max_i |c_i^k|``.

    Returns ``None`` when ``Lambda^k`` is degenerate: the eigenvector is then
    an arbitrary member of the eigenspace.
    """
    if any(k - 1 in g for g in pred.degenerate):
        return None
    return vector_support(pred.C[:, k - 1], tol)


def vector_support(c, tol: float = 1e-3) -> set[int]:
    c = np.abs(np.asarray(c, dtype=float))
    return {j + 1 for j in range(len(c)) if c[j] > tol * c.max()}


def concentration_margin(c, tol: float = 1e-3) -> float:
    """Distance (relative to max |c|) of the closest component to the threshold."""
    c = np.abs(np.asarray(c, dtype=float)) / np.abs(c).max()
    return float(np.min(np.abs(c - tol)))


def circulant_symbol(first_row) -> np.ndarray:
    """Eigenvalues of the circulant matrix with the given first row, by DFT."""
    return np.fft.fft(np.asarray(first_row, dtype=float)).real


def is_circulant(mat: np.ndarray, tol: float = 1e-10) -> bool:
    m = mat.shape[0]
    row = mat[0]
    scale = max(1.0, np.abs(mat).max())
    return all(np.abs(np.roll(row, i) - mat[i]).max() <= tol * scale for i in range(m))


@dataclass
class CirculantReport:
    m: int
    eigenvalues: list
    dft_eigenvalues: list
    multiplicities: list
    groups: list
    simple_indices_k_ge_2: list
    alternating_index: Optional[int]
    max_dft_mismatch: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def circulant_report(h: HMatrix, m: Optional[int] = None, tol: float = 1e-9) -> CirculantReport:
    """Multiplicity table of a circulant h-matrix.

    Eigenvalues equal within ``tol`` are grouped.  For even ``m`` the
    eigenvector closest to the alternating pattern (-1, 1, -1, ...) is
    flagged (1-based index, ``None`` when absent).
    """
    ent = h.entries
    m = ent.shape[0] if m is None else m
    if ent.shape != (m, m):
        raise ValueError("matrix size does not match m")
    if not is_circulant(ent):
        raise NotCirculant("h-matrix is not circulant to 1e-10")
    pred = eigen_h(h, tol)
    lam = pred.Lambda
    dft = np.sort(circulant_symbol(ent[0]))
    groups = group_equal(lam, tol)
    mult = [len(g) for g in groups]
    simple = [g[0] + 1 for g in groups if len(g) == 1 and g[0] >= 1]
    alt_idx = None
    if m % 2 == 0:
        alt = np.array([(-1.0) ** (j + 1) for j in range(m)]) / np.sqrt(m)
        for g in groups:
            if len(g) == 1 and abs(abs(pred.C[:, g[0]] @ alt) - 1.0) <= 1e-8:
                alt_idx = g[0] + 1
    return CirculantReport(
        m=m,
        eigenvalues=lam.tolist(),
        dft_eigenvalues=dft.tolist(),
        multiplicities=mult,
        groups=[[i + 1 for i in g] for g in groups],
        simple_indices_k_ge_2=simple,
        alternating_index=alt_idx,
        max_dft_mismatch=float(np.abs(dft - lam).max()),
    )


def prediction_record(pred: SpectralPrediction, lam: float, k: int,
                      multiplicities: Optional[list] = None) -> dict:
    """JSON record ``{m, lambda, k, Lambda_k, mu_pred, c_k, d, multiplicities}``."""
    if multiplicities is None:
        multiplicities = [len(g) for g in group_equal(pred.Lambda)]
    return {
        "m": pred.m,
        "lambda": float(lam),
        "k": int(k),
        "Lambda_k": float(pred.Lambda[k - 1]),
        "mu_pred": predict_mu(pred, k, lam),
        "c_k": pred.C[:, k - 1].tolist(),
        "d": pred.d.tolist(),
        "multiplicities": list(multiplicities),
    }
