"""Graded polar grids and the conservative finite-difference operators on them.

Each coordinate is the image of a uniform computational variable under a
smooth ``sinh`` stretching, so a three-point difference in the computational
variable stays second-order accurate while nodes crowd around the expected
bubble.  With the weak form written in computational variables the
discrete Laplacian is ``-M^{-1} A`` with ``A`` symmetric and ``M`` diagonal,
which is what makes the weighted eigenproblem a symmetric-definite pencil.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class SinhMap:
    """``x(s) = center + width * sinh(beta * (s - s0))`` for ``s`` in [0, 1].

    ``beta`` and ``s0`` are fixed by the endpoint conditions
    ``x(0) = lo`` and ``x(1) = hi``; ``width`` is the core resolution scale.
    """

    lo: float
    hi: float
    center: float
    width: float

    @property
    def _params(self):
        b_lo = np.arcsinh((self.center - self.lo) / self.width)
        b_hi = np.arcsinh((self.hi - self.center) / self.width)
        beta = b_lo + b_hi
        return beta, b_lo / beta

    def x(self, s):
        beta, s0 = self._params
        out = self.center + self.width * np.sinh(beta * (np.asarray(s) - s0))
        return out

    def dx(self, s):
        beta, s0 = self._params
        return self.width * beta * np.cosh(beta * (np.asarray(s) - s0))

    def inverse(self, x):
        beta, s0 = self._params
        return s0 + np.arcsinh((np.asarray(x) - self.center) / self.width) / beta


@dataclass(frozen=True)
class CenteredSinhMap:
    """Odd stretching ``x = center + width * sinh(beta t) + kappa t^3``, ``t = s - k/n``.

    The centre is exactly node ``k`` and the node set is mirror-symmetric
    about it.  ``beta`` and the small cubic correction ``kappa`` are fixed by
    the endpoint conditions, so asymmetric intervals are allowed.
    """

    lo: float
    hi: float
    center: float
    width: float
    n: int

    @cached_property
    def _params(self):
        from scipy.optimize import brentq

        base = SinhMap(self.lo, self.hi, self.center, self.width)
        beta0, s_nat = base._params
        a, b = self.center - self.lo, self.hi - self.center
        w = self.width
        k_nat = int(round(s_nat * self.n))
        for k in sorted(range(1, self.n), key=lambda q: abs(q - k_nat))[:8]:
            s0 = k / self.n

            def kappa(beta):
                return (b - w * np.sinh(beta * (1 - s0))) / (1 - s0) ** 3

            def f(beta):
                return w * np.sinh(beta * s0) + s0**3 * kappa(beta) - a

            betas = beta0 * np.linspace(0.5, 1.5, 201)
            vals = np.array([f(x) for x in betas])
            roots = [i for i in range(200) if vals[i] * vals[i + 1] <= 0]
            for i in sorted(roots, key=lambda i: abs(betas[i] - beta0)):
                beta = brentq(f, betas[i], betas[i + 1], xtol=1e-15)
                t = np.linspace(-s0, 1 - s0, 2001)
                if np.all(w * beta * np.cosh(beta * t) + 3 * kappa(beta) * t * t > 0):
                    return beta, s0, kappa(beta), k
        raise ValueError("no monotone centred stretching for these parameters")

    @property
    def center_index(self) -> int:
        return self._params[3]

    def x(self, s):
        beta, s0, kap, _ = self._params
        t = np.asarray(s) - s0
        return self.center + self.width * np.sinh(beta * t) + kap * t**3

    def dx(self, s):
        beta, s0, kap, _ = self._params
        t = np.asarray(s) - s0
        return self.width * beta * np.cosh(beta * t) + 3.0 * kap * t * t

    def inverse(self, x):
        beta, s0, kap, _ = self._params
        x = np.asarray(x, dtype=float)
        s = SinhMap(self.lo, self.hi, self.center, self.width).inverse(x)
        for _ in range(60):
            ds = (self.x(s) - x) / self.dx(s)
            s = s - ds
            if np.all(np.abs(ds) < 1e-15):
                break
        return s


@dataclass(frozen=True)
class RadialGrid:
    """Nodes ``r_0 < ... < r_N`` on ``[lo, hi]`` with the 1D conservative operator.

    ``origin`` is True for the disk (``r_0 = 0`` is an unknown with a
    symmetry condition); otherwise both endpoints carry Dirichlet data.
    """

    mapping: SinhMap
    n: int
    origin: bool

    @property
    def s(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)

    @property
    def r(self) -> np.ndarray:
        r = self.mapping.x(self.s)
        r[0], r[-1] = self.mapping.lo, self.mapping.hi
        return r

    @property
    def unknown_slice(self) -> slice:
        return slice(0, self.n) if self.origin else slice(1, self.n)

    @property
    def r_unknown(self) -> np.ndarray:
        return self.r[self.unknown_slice]

    def _half(self):
        ds = 1.0 / self.n
        sh = (np.arange(self.n) + 0.5) * ds
        return sh, self.mapping.x(sh), self.mapping.dx(sh), ds

    def flux_coefficients(self) -> np.ndarray:
        """``r / r_s / ds`` at the ``n`` half nodes."""
        _, rh, drh, ds = self._half()
        return rh / drh / ds

    def weights(self) -> np.ndarray:
        """Cell measure (per unit angle) at the unknown nodes."""
        ds = 1.0 / self.n
        w = self.r * self.mapping.dx(self.s) * ds
        if self.origin:
            rh = self._half()[1][0]
            w[0] = 0.5 * rh * rh
        return w[self.unknown_slice]

    def inverse_r_weights(self) -> np.ndarray:
        """``r_s ds / r`` at the unknown nodes (angular-term weight); 0 at the origin."""
        ds = 1.0 / self.n
        r = self.r
        out = np.zeros_like(r)
        nz = r > 0
        out[nz] = self.mapping.dx(self.s[nz]) * ds / r[nz]
        return out[self.unknown_slice]

    def stiffness(self) -> sp.csr_matrix:
        """Symmetric tridiagonal stiffness for ``-(1/r)(r u')'`` times the cell measure."""
        a = self.flux_coefficients()
        n = self.n
        diag = np.zeros(n + 1)
        diag[:-1] += a
        diag[1:] += a
        full = sp.diags([-a, diag, -a], [-1, 0, 1], shape=(n + 1, n + 1), format="csr")
        sl = self.unknown_slice
        return full[sl, sl].tocsr()

    def spacing_at(self, r: float) -> float:
        rr = self.r
        i = int(np.clip(np.searchsorted(rr, r), 1, len(rr) - 1))
        return float(rr[i] - rr[i - 1])


@dataclass(frozen=True)
class AngularGrid:
    """Periodic angular nodes on ``[-pi/m, pi/m)`` clustered at ``theta = 0``."""

    mapping: SinhMap
    n: int

    @property
    def s(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    @property
    def theta(self) -> np.ndarray:
        return self.mapping.x(self.s)

    @property
    def period(self) -> float:
        return self.mapping.hi - self.mapping.lo

    def weights(self) -> np.ndarray:
        return self.mapping.dx(self.s) / self.n

    def flux_coefficients(self) -> np.ndarray:
        sh = (np.arange(self.n) + 0.5) / self.n
        return self.n / self.mapping.dx(sh)

    def stiffness(self, phase: float = 0.0) -> sp.csr_matrix:
        """Periodic stiffness; ``phase`` is the Bloch angle (Hermitian when nonzero)."""
        b = self.flux_coefficients()
        n = self.n
        dtype = complex if phase else float
        mat = sp.lil_matrix((n, n), dtype=dtype)
        for j in range(n):
            jp = (j + 1) % n
            mat[j, j] += b[j]
            mat[jp, jp] += b[j]
            if jp == 0:
                f = np.exp(1j * phase) if phase else 1.0
                mat[j, jp] += -b[j] * f
                mat[jp, j] += -b[j] * np.conj(f)
            else:
                mat[j, jp] += -b[j]
                mat[jp, j] += -b[j]
        return mat.tocsr()


def radial_disk_grid(radius: float, n: int, core: float) -> RadialGrid:
    return RadialGrid(SinhMap(0.0, radius, 0.0, core), n, origin=True)


def radial_annulus_grid(inner: float, outer: float, n: int, center: float, core: float,
                        centered: bool = False) -> RadialGrid:
    """Annulus grid; ``centered=True`` places a node exactly at ``center``."""
    mapping = CenteredSinhMap(inner, outer, center, core, n) if centered else SinhMap(inner, outer, center, core)
    return RadialGrid(mapping, n, origin=False)


def angular_sector_grid(m: int, n: int, core: float) -> AngularGrid:
    half = np.pi / m
    return AngularGrid(SinhMap(-half, half, 0.0, core), n)


@dataclass(frozen=True)
class SectorOperators:
    """Assembled 2D operators on a sector, unknowns ordered radial-fastest."""

    stiffness: sp.csr_matrix
    weights: np.ndarray


def sector_operators(rg: RadialGrid, ag: AngularGrid, phase: float = 0.0,
                     rg_weights: Optional[np.ndarray] = None) -> SectorOperators:
    Ar = rg.stiffness()
    Wr = rg.weights() if rg_weights is None else rg_weights
    Dr = sp.diags(rg.inverse_r_weights())
    At = ag.stiffness(phase)
    Wt = ag.weights()
    A = sp.kron(sp.diags(Wt), Ar) + sp.kron(At, Dr)
    W = np.kron(Wt, Wr)
    return SectorOperators(A.tocsr(), W)
