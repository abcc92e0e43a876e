"""Dirichlet Green function, regular part and Robin function.

Two domains are supported:

* the disk of radius ``rho`` centred at the origin, where the regular part
  has the closed form ``K(x, y) = log(Q / rho**4) / (4 pi)`` with
  ``Q = |x|^2 |y|^2 - 2 rho^2 x.y + rho^4``;
* the annulus ``a < |x| < 1``, where ``K`` is obtained by separation of
  variables.  Written in complex notation (``z = x``, ``w = y``)::

      K = log|z| log|w| / (2 pi log a)
          + Re sum_n c_n / (2 pi n) [A^n + B^n - C^n - D^n]

  with ``A = a^2 z / w``, ``B = a^2 w / z``, ``C = z conj(w)``,
  ``D = a^2 / (z conj(w))`` and ``c_n = 1 / (1 - a^(2n))``.  Every ratio has
  modulus below one inside the annulus, so the series converges
  geometrically and its truncation error is bounded by
  :func:`annulus_tail_bound`.  Derivatives are taken term by term.

The singular part ``-(1/2pi) log|x - y|`` is handled analytically, so the
diagonal ``K(x, x)`` never comes from a difference of two large logs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CoincidentPoints, PointOutsideDomain

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class DomainSpec:
    """Disk of radius ``disk_radius`` or annulus ``inner_radius < |x| < 1``.

    ``series_truncation`` is the number of Fourier modes kept in the annulus
    kernel; it is ignored for the disk.
    """

    kind: str
    disk_radius: float = 1.0
    inner_radius: float = 0.5
    series_truncation: int = 400

    def __post_init__(self):
        if self.kind not in ("disk", "annulus"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "disk" and not self.disk_radius > 0:
            raise ValueError("disk_radius must be positive")
        if self.kind == "annulus":
            if not 0.0 < self.inner_radius < 1.0:
                raise ValueError("annulus inner radius must lie in (0, 1)")
            if int(self.series_truncation) < 8:
                raise ValueError("series_truncation must be at least 8")

    @classmethod
    def disk(cls, radius: float = 1.0) -> "DomainSpec":
        return cls("disk", disk_radius=float(radius))

    @classmethod
    def annulus(cls, inner_radius: float, series_truncation: int = 400) -> "DomainSpec":
        return cls("annulus", inner_radius=float(inner_radius),
                   series_truncation=int(series_truncation))

    @property
    def outer_radius(self) -> float:
        return self.disk_radius if self.kind == "disk" else 1.0

    @property
    def diameter(self) -> float:
        return 2.0 * self.outer_radius

    def radial_bounds(self) -> tuple[float, float]:
        if self.kind == "disk":
            return 0.0, self.disk_radius
        return self.inner_radius, 1.0

    def contains(self, x) -> bool:
        r = float(np.hypot(x[0], x[1]))
        lo, hi = self.radial_bounds()
        if self.kind == "disk":
            return r < hi
        return lo < r < hi

    def distance_to_boundary(self, x) -> float:
        r = float(np.hypot(x[0], x[1]))
        lo, hi = self.radial_bounds()
        if self.kind == "disk":
            return hi - r
        return min(r - lo, hi - r)

    def to_dict(self) -> dict:
        if self.kind == "disk":
            return {"kind": "disk", "disk_radius": self.disk_radius}
        return {"kind": "annulus", "inner_radius": self.inner_radius,
                "series_truncation": self.series_truncation}


@dataclass(frozen=True)
class GreenEval:
    """Value and x-derivatives of a kernel ``k(x, y)``.

    ``hess_xy[i, j]`` is the mixed derivative d^2 k / dx_i dy_j.
    ``tail_bound`` bounds the series truncation error of ``value``
    (zero for closed-form kernels).
    """

    value: float
    grad_x: np.ndarray
    hess_x: Optional[np.ndarray] = None
    hess_xy: Optional[np.ndarray] = None
    tail_bound: float = 0.0


@dataclass(frozen=True)
class RobinEval:
    value: float
    grad: np.ndarray
    hess: np.ndarray
    tail_bound: float = 0.0


def _point(x) -> np.ndarray:
    p = np.asarray(x, dtype=float).reshape(2)
    return p


def _check_inside(domain: DomainSpec, *points) -> None:
    for p in points:
        if not domain.contains(p):
            raise PointOutsideDomain(f"point {tuple(p)} is not inside the {domain.kind}")


# ----------------------------------------------------------------------------
# singular part  S(x, y) = -(1/2pi) log|x - y|

def _singular(x: np.ndarray, y: np.ndarray):
    d = x - y
    d2 = d @ d
    value = -np.log(d2) / (2.0 * TWO_PI)
    grad = -d / (TWO_PI * d2)
    hess = -(np.eye(2) / d2 - 2.0 * np.outer(d, d) / d2**2) / TWO_PI
    return value, grad, hess, -hess


# ----------------------------------------------------------------------------
# disk

def _disk_regular(rho: float, x: np.ndarray, y: np.ndarray):
    x2 = x @ x
    y2 = y @ y
    rho2 = rho * rho
    q = x2 * y2 - 2.0 * rho2 * (x @ y) + rho2 * rho2
    gq_x = 2.0 * y2 * x - 2.0 * rho2 * y
    gq_y = 2.0 * x2 * y - 2.0 * rho2 * x
    value = np.log(q / rho2**2) / (2.0 * TWO_PI)
    grad = gq_x / (2.0 * TWO_PI * q)
    hess = (2.0 * y2 * np.eye(2) / q - np.outer(gq_x, gq_x) / q**2) / (2.0 * TWO_PI)
    mixed = ((4.0 * np.outer(x, y) - 2.0 * rho2 * np.eye(2)) / q
             - np.outer(gq_x, gq_y) / q**2) / (2.0 * TWO_PI)
    return value, grad, hess, mixed, 0.0


def _disk_robin(rho: float, x: np.ndarray) -> RobinEval:
    gap = rho * rho - x @ x
    value = np.log(gap / (rho * rho)) / TWO_PI
    grad = -x / (np.pi * gap)
    hess = -(np.eye(2) / gap + 2.0 * np.outer(x, x) / gap**2) / np.pi
    return RobinEval(float(value), grad, hess)


# ----------------------------------------------------------------------------
# annulus

def _annulus_coeffs(a: float, nmax: int):
    n = np.arange(1, nmax + 1, dtype=float)
    c = -1.0 / np.expm1(2.0 * n * np.log(a))
    return n, c


def annulus_tail_bound(a: float, nmax: int, ratio: float) -> float:
    """Bound on sum_{n > nmax} 4 c_n ratio^n / (2 pi n)."""
    if ratio >= 1.0:
        return np.inf
    n1 = nmax + 1
    c1 = -1.0 / np.expm1(2.0 * n1 * np.log(a))
    return float(4.0 * c1 * ratio**n1 / (TWO_PI * n1 * (1.0 - ratio)))


def _annulus_regular(a: float, nmax: int, x: np.ndarray, y: np.ndarray):
    z = complex(x[0], x[1])
    w = complex(y[0], y[1])
    n, c = _annulus_coeffs(a, nmax)
    a2 = a * a
    A = a2 * z / w
    B = a2 * w / z
    C = z * w.conjugate()
    D = a2 / (z * w.conjugate())
    An, Bn, Cn, Dn = (np.power(t, n) for t in (A, B, C, D))
    log_a = np.log(a)
    lr, ls = np.log(abs(z)), np.log(abs(w))

    value = lr * ls / (TWO_PI * log_a) + np.sum(c / n * (An + Bn - Cn - Dn)).real / TWO_PI

    fp = np.sum(c * (An - Bn - Cn + Dn)) / (TWO_PI * z)
    x2 = x @ x
    y2 = y @ y
    grad = np.array([fp.real, -fp.imag]) + ls / (TWO_PI * log_a) * x / x2

    fpp = np.sum(c * ((n - 1) * An + (n + 1) * Bn - (n - 1) * Cn - (n + 1) * Dn)) / (TWO_PI * z * z)
    hess = np.array([[fpp.real, -fpp.imag], [-fpp.imag, -fpp.real]])
    hess += ls / (TWO_PI * log_a) * (np.eye(2) / x2 - 2.0 * np.outer(x, x) / x2**2)

    t1 = -np.sum(c * n * (An + Bn)) / w
    t2 = -np.sum(c * n * (Cn + Dn)) / w.conjugate()
    du = (t1 + t2) / (TWO_PI * z)
    dv = 1j * (t1 - t2) / (TWO_PI * z)
    mixed = np.array([[du.real, dv.real], [-du.imag, -dv.imag]])
    mixed += np.outer(x / x2, y / y2) / (TWO_PI * log_a)

    ratio = max(abs(A), abs(B), abs(C), abs(D))
    return float(value), grad, hess, mixed, annulus_tail_bound(a, nmax, ratio)


def _annulus_robin_radial(a: float, nmax: int, r: float):
    """R(r), R'(r), R''(r) and the tail bound on the annulus."""
    n, c = _annulus_coeffs(a, nmax)
    log_a = np.log(a)
    lr = np.log(r)
    r2n = np.power(r * r, n)
    q2n = np.power(a * a / (r * r), n)
    a2n = np.power(a * a, n)
    value = lr * lr / (TWO_PI * log_a) + np.sum(c / n * (2.0 * a2n - r2n - q2n)) / TWO_PI
    d1 = lr / (np.pi * r * log_a) + np.sum(c * (q2n - r2n)) / (np.pi * r)
    d2 = ((1.0 - lr) / (np.pi * r * r * log_a)
          - np.sum(c * ((2 * n + 1) * q2n + (2 * n - 1) * r2n)) / (np.pi * r * r))
    ratio = max(r * r, a * a / (r * r), a * a)
    return float(value), float(d1), float(d2), annulus_tail_bound(a, nmax, ratio)


def _annulus_robin(a: float, nmax: int, x: np.ndarray) -> RobinEval:
    r = float(np.hypot(*x))
    value, d1, d2, tail = _annulus_robin_radial(a, nmax, r)
    e = x / r
    proj = np.outer(e, e)
    hess = d2 * proj + (d1 / r) * (np.eye(2) - proj)
    return RobinEval(value, d1 * e, hess, tail)


def _regular(domain: DomainSpec, x: np.ndarray, y: np.ndarray):
    if domain.kind == "disk":
        return _disk_regular(domain.disk_radius, x, y)
    return _annulus_regular(domain.inner_radius, domain.series_truncation, x, y)


# ----------------------------------------------------------------------------
# public API

def green(domain: DomainSpec, x, y, hessian: bool = False) -> GreenEval:
    """Dirichlet Green function ``G(x, y)`` with its gradient in ``x``.

    With ``hessian=True`` the x-Hessian and the mixed x/y Hessian are
    attached as well.

    Raises
    ------
    PointOutsideDomain
        If ``x`` or ``y`` is not an interior point.
    CoincidentPoints
        If ``|x - y|`` is below ``1e-14`` times the diameter.
    """
    x, y = _point(x), _point(y)
    _check_inside(domain, x, y)
    if np.hypot(*(x - y)) <= 1e-14 * domain.diameter:
        raise CoincidentPoints("green() is singular at x == y; use regular_part()")
    sv, sg, sh, sm = _singular(x, y)
    kv, kg, kh, km, tail = _regular(domain, x, y)
    if hessian:
        return GreenEval(float(sv + kv), sg + kg, sh + kh, sm + km, tail)
    return GreenEval(float(sv + kv), sg + kg, tail_bound=tail)


def regular_part(domain: DomainSpec, x, y, hessian: bool = False) -> GreenEval:
    """Regular part ``K(x, y) = G(x, y) + log|x - y| / (2 pi)``, smooth on the diagonal."""
    x, y = _point(x), _point(y)
    _check_inside(domain, x, y)
    kv, kg, kh, km, tail = _regular(domain, x, y)
    if hessian:
        return GreenEval(kv, kg, kh, km, tail)
    return GreenEval(kv, kg, tail_bound=tail)


def robin(domain: DomainSpec, x) -> RobinEval:
    """Robin function ``R(x) = K(x, x)`` with gradient and Hessian."""
    x = _point(x)
    _check_inside(domain, x)
    if domain.kind == "disk":
        return _disk_robin(domain.disk_radius, x)
    return _annulus_robin(domain.inner_radius, domain.series_truncation, x)


def green_field(domain: DomainSpec, xs: np.ndarray, y) -> np.ndarray:
    """Vectorised ``G(x, y)`` for an array of field points ``xs`` of shape (..., 2).

    Field points on the boundary give (numerically) zero; the caller must
    keep them away from ``y``.
    """
    xs = np.asarray(xs, dtype=float)
    y = _point(y)
    d = xs - y
    singular = -np.log(np.einsum("...i,...i->...", d, d)) / (2.0 * TWO_PI)
    return singular + regular_field(domain, xs, y)


def regular_field(domain: DomainSpec, xs: np.ndarray, y) -> np.ndarray:
    """Vectorised regular part ``K(x, y)`` over field points ``xs``."""
    xs = np.asarray(xs, dtype=float)
    y = _point(y)
    if domain.kind == "disk":
        rho2 = domain.disk_radius**2
        x2 = np.einsum("...i,...i->...", xs, xs)
        q = x2 * (y @ y) - 2.0 * rho2 * (xs @ y) + rho2 * rho2
        return np.log(q / rho2**2) / (2.0 * TWO_PI)
    a = domain.inner_radius
    n, c = _annulus_coeffs(a, domain.series_truncation)
    z = (xs[..., 0] + 1j * xs[..., 1]).ravel()
    w = complex(y[0], y[1])
    a2 = a * a
    out = np.log(np.abs(z)) * np.log(abs(w)) / (TWO_PI * np.log(a))
    # chunk over field points to keep the (points x modes) block small
    series = np.empty(z.shape, dtype=float)
    step = 2048
    for start in range(0, z.size, step):
        zz = z[start:start + step, None]
        terms = (np.power(a2 * zz / w, n) + np.power(a2 * w / zz, n)
                 - np.power(zz * w.conjugate(), n) - np.power(a2 / (zz * w.conjugate()), n))
        series[start:start + step] = (terms * (c / n)).sum(axis=1).real / TWO_PI
    return (out + series).reshape(xs.shape[:-1])
