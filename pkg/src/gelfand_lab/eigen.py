"""Weighted eigenproblem ``-Delta v = mu * lambda * e^u * v`` on a converged state.

The discrete pencil is ``A v = mu M v`` with ``A`` the symmetric stiffness
and ``M = lambda W e^u`` diagonal and positive.

Disk states are radial, so each angular wave number ``n`` decouples into a
tridiagonal problem (``n >= 1`` modes come in cos/sin pairs).  Sector
states use a Bloch decomposition: the mode with phase ``2 pi p / m`` across
one sector is solved for ``p = 0..floor(m/2)``.  Modes with ``0 < 2p < m``
are complex and contribute a degenerate pair of real eigenfunctions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .errors import ConvergenceFailure, WeightNotPositive
from .grids import sector_operators
from .pde import Discretization

log = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-8
DENSE_LIMIT = 5000


@dataclass
class EigenPair:
    """One eigenpair of the full-domain problem.

    ``v`` holds grid values on the discretization's unknowns: the radial
    profile for disk modes, the sector values for annulus modes.  Evaluate
    the full-domain eigenfunction with :meth:`evaluate`.
    """

    mu: float
    v: np.ndarray
    k: int
    wave_number: int
    component: str
    disc: Discretization
    degenerate: bool = False
    rayleigh_residual: float = 0.0
    _bloch: Optional[np.ndarray] = None
    _scale: complex = 1.0

    def full_values(self) -> np.ndarray:
        """Values at every node of the full domain (sector copies stacked for the annulus)."""
        if self.disc.kind == "radial":
            return self.v
        return _sector_copies(self.disc, self._bloch, self.wave_number, self.component) * self._scale

    def evaluate(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        disc = self.disc
        if disc.kind == "radial":
            r = np.hypot(pts[:, 0], pts[:, 1])
            th = np.arctan2(pts[:, 1], pts[:, 0])
            prof = disc.interpolator(self.v).radial(r)
            n = self.wave_number
            if n == 0:
                return prof
            return prof * (np.cos(n * th) if self.component == "cos" else np.sin(n * th))
        m = disc.m
        per = 2.0 * np.pi / m
        th = np.arctan2(pts[:, 1], pts[:, 0])
        j = np.floor((th + 0.5 * per) / per).astype(int)
        local = th - j * per
        rr = np.hypot(pts[:, 0], pts[:, 1])
        lp = np.column_stack([rr * np.cos(local), rr * np.sin(local)])
        re = disc.interpolator(self._bloch.real, full=True)(lp)
        im = disc.interpolator(self._bloch.imag, full=True)(lp)
        phase = np.exp(2j * np.pi * self.wave_number * (j % m) / m)
        val = (re + 1j * im) * phase
        out = val.real if self.component != "sin" else val.imag
        return out * float(np.real(self._scale))

    def summary(self) -> dict:
        return {"k": self.k, "mu": self.mu, "wave_number": self.wave_number, "component": self.component,
                "degenerate": self.degenerate, "rayleigh_residual": self.rayleigh_residual}


def _sector_copies(disc, bloch, p, component):
    m = disc.m
    copies = [bloch * np.exp(2j * np.pi * p * j / m) for j in range(m)]
    full = np.concatenate(copies)
    return full.real if component != "sin" else full.imag


def _smallest_tridiagonal(A: sp.spmatrix, Mdiag: np.ndarray, count: int):
    s = 1.0 / np.sqrt(Mdiag)
    d = A.diagonal() * s * s
    e = A.diagonal(1) * s[:-1] * s[1:]
    count = min(count, len(d))
    w, y = sla.eigh_tridiagonal(d, e, select="i", select_range=(0, count - 1))
    return w, y * s[:, None]


def _smallest_general(A: sp.spmatrix, Mdiag: np.ndarray, count: int, shift: float, tol: float):
    n = A.shape[0]
    count = min(count, n - 1)
    if n <= DENSE_LIMIT:
        w, V = sla.eigh(A.toarray(), np.diag(Mdiag).astype(A.dtype), subset_by_index=(0, count - 1))
        return w, V
    M = sp.diags(Mdiag).astype(A.dtype)
    try:
        w, V = spl.eigsh(A.tocsc(), k=count, M=M.tocsc(), sigma=shift, which="LM", tol=tol)
    except spl.ArpackNoConvergence as exc:
        raise ConvergenceFailure(f"shift-invert eigensolve did not reach tol={tol}") from exc
    order = np.argsort(w)
    return w[order], V[:, order]


def _residual(A, Mdiag, mu, v) -> float:
    r = A @ v - mu * Mdiag * v
    scale = abs(A) @ np.abs(v) + abs(mu) * Mdiag * np.abs(v)
    return float(np.abs(r).max() / scale.max())


def weighted_spectrum(disc: Discretization, u: np.ndarray, lam: float, count: int,
                      shift: float = 0.0, tol: float = 1e-12) -> list:
    """The ``count`` smallest eigenpairs, ascending, each sup-normalised.

    Ties are ordered by wave number, then component.  Eigenvalues that
    agree within ``1e-8 max(1, mu)`` are flagged ``degenerate``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    Mdiag = lam * disc.full_weights * np.exp(disc.expand(u))
    if not np.all(Mdiag > 0) or not np.all(np.isfinite(Mdiag)):
        raise WeightNotPositive("lambda e^u must be positive at every node")
    found = []
    if disc.kind == "radial":
        rg = disc.radial_grid
        A0 = disc.stiffness
        Dr = rg.inverse_r_weights()
        for n in range(0, count + 1):
            if n == 0:
                A, Md, sl = A0, Mdiag, slice(0, None)
            else:
                A = (A0 + sp.diags(n * n * Dr)).tocsr()[1:, 1:]
                Md, sl = Mdiag[1:], slice(1, None)
            w, V = _smallest_tridiagonal(A, Md, count)
            for i in range(len(w)):
                full = np.zeros(disc.size)
                full[sl] = V[:, i]
                res = _residual(A, Md, w[i], V[:, i])
                comps = ("",) if n == 0 else ("cos", "sin")
                for c in comps:
                    found.append((float(w[i]), n, c, full, None, res))
    else:
        rg, ag = disc.radial_grid, disc.angular_grid
        m = disc.m
        for p in range(0, m // 2 + 1):
            phase = 2.0 * np.pi * p / m
            A = sector_operators(rg, ag, phase).stiffness
            w, V = _smallest_general(A, Mdiag, count, shift, tol)
            for i in range(len(w)):
                vec = V[:, i]
                res = _residual(A, Mdiag, w[i], vec)
                pair = 0 < 2 * p < m
                comps = ("cos", "sin") if pair else ("",)
                vec = vec * np.exp(-1j * np.angle(vec[np.argmax(np.abs(vec))]))
                for c in comps:
                    found.append((float(w[i]), p, c, None, vec, res))
    found.sort(key=lambda t: (t[0], t[1], t[2]))
    found = found[:count]
    pairs = []
    for k, (mu, n, comp, vr, vb, res) in enumerate(found, start=1):
        if vb is None:
            peak = vr[np.argmax(np.abs(vr))]
            ep = EigenPair(mu, vr / peak, k, n, comp, disc, rayleigh_residual=res)
        else:
            ep = EigenPair(mu, np.zeros(0), k, n, comp, disc, rayleigh_residual=res, _bloch=vb)
            full = _sector_copies(disc, vb, n, comp)
            peak = full[np.argmax(np.abs(full))]
            ep._scale = 1.0 / peak
            ep.v = (_sector_copies(disc, vb, n, comp)[:disc.size]) / peak
        pairs.append(ep)
    for a, b in zip(pairs, pairs[1:]):
        if abs(a.mu - b.mu) <= DEGENERACY_TOL * max(1.0, abs(a.mu)):
            a.degenerate = b.degenerate = True
    return pairs


def check_band_gap(pairs: list, m: int) -> dict:
    """Report on the two-band structure of the lowest ``3m + 1`` eigenvalues."""
    mus = [p.mu for p in pairs]
    report = {"m": m, "count": len(mus), "complete": len(mus) >= 3 * m + 1}
    first = mus[:m]
    report["first_band"] = first
    report["first_band_in_open_half"] = bool(first) and all(0.0 < x < 0.5 for x in first)
    second = mus[m:3 * m]
    report["second_band_deviation"] = [x - 1.0 for x in second]
    if report["complete"]:
        report["above_one"] = mus[3 * m]
        report["gap_ok"] = mus[3 * m] > 1.0
    else:
        report["above_one"] = None
        report["gap_ok"] = None
    return report
