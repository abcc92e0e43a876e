"""The m-vortex Hamiltonian and its critical points.

    H(x_1, ..., x_m) = 1/2 sum_j R(x_j) + 1/2 sum_{j != h} G(x_j, x_h)

Critical points of ``H`` are the admissible blow-up configurations.  They
are only *candidates*: nothing here claims a blow-up family exists for
every critical point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateConfiguration, EscapedDomain, NewtonDiverged
from .green import DomainSpec, green, robin


@dataclass(frozen=True)
class Configuration:
    """Ordered list of ``m`` distinct interior points.

    ``symmetry`` is ``"none"`` or ``"polygonal"``; polygonal configurations
    carry the ring radius ``r0`` and place point ``j`` at angle 2 pi j / m.
    """

    points: np.ndarray
    symmetry: str = "none"
    r0: Optional[float] = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[1] != 2:
            raise ValueError("points must have shape (m, 2)")
        object.__setattr__(self, "points", pts)
        if self.symmetry not in ("none", "polygonal"):
            raise ValueError(f"unknown symmetry tag {self.symmetry!r}")

    @classmethod
    def polygonal(cls, m: int, r0: float) -> "Configuration":
        ang = 2.0 * np.pi * np.arange(m) / m
        pts = r0 * np.column_stack([np.cos(ang), np.sin(ang)])
        return cls(pts, "polygonal", float(r0))

    @property
    def m(self) -> int:
        return self.points.shape[0]

    def flat(self) -> np.ndarray:
        return self.points.ravel().copy()

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "symmetry": self.symmetry, "r0": self.r0}


@dataclass
class CriticalPointReport:
    config: Configuration
    grad_norm: float
    hess_eigenvalues: np.ndarray
    converged: bool
    iterations: int
    seed: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "grad_norm": self.grad_norm,
            "hess_eigenvalues": np.asarray(self.hess_eigenvalues).tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
            "seed": self.seed,
        }


def _validate(domain: DomainSpec, config: Configuration) -> np.ndarray:
    pts = config.points
    m = pts.shape[0]
    for i in range(m):
        for j in range(i + 1, m):
            if np.hypot(*(pts[i] - pts[j])) <= 1e-12 * domain.diameter:
                raise DegenerateConfiguration(f"points {i} and {j} coincide")
    return pts


def hamiltonian_value(domain: DomainSpec, config: Configuration) -> float:
    pts = _validate(domain, config)
    m = len(pts)
    total = 0.5 * sum(robin(domain, p).value for p in pts)
    for i in range(m):
        for j in range(i + 1, m):
            total += green(domain, pts[i], pts[j]).value
    return float(total)


def hamiltonian_grad(domain: DomainSpec, config: Configuration) -> np.ndarray:
    """Gradient as a flat 2m-vector ordered (x_1, y_1, x_2, y_2, ...)."""
    pts = _validate(domain, config)
    m = len(pts)
    grad = np.zeros((m, 2))
    for i in range(m):
        grad[i] += 0.5 * robin(domain, pts[i]).grad
        for j in range(m):
            if j != i:
                grad[i] += green(domain, pts[i], pts[j]).grad_x
    return grad.ravel()


def hamiltonian_hess(domain: DomainSpec, config: Configuration) -> np.ndarray:
    """Symmetrised 2m x 2m Hessian, same ordering as :func:`hamiltonian_grad`."""
    pts = _validate(domain, config)
    m = len(pts)
    hess = np.zeros((2 * m, 2 * m))
    for i in range(m):
        hess[2 * i:2 * i + 2, 2 * i:2 * i + 2] += 0.5 * robin(domain, pts[i]).hess
        for j in range(m):
            if j == i:
                continue
            g = green(domain, pts[i], pts[j], hessian=True)
            hess[2 * i:2 * i + 2, 2 * i:2 * i + 2] += g.hess_x
            hess[2 * i:2 * i + 2, 2 * j:2 * j + 2] += g.hess_xy
    return 0.5 * (hess + hess.T)


def _inside(domain: DomainSpec, flat: np.ndarray) -> bool:
    pts = flat.reshape(-1, 2)
    if not all(domain.contains(p) for p in pts):
        return False
    m = len(pts)
    return all(np.hypot(*(pts[i] - pts[j])) > 1e-12 * domain.diameter
               for i in range(m) for j in range(i + 1, m))


def polygon_radial_derivatives(domain: DomainSpec, m: int, r0: float) -> tuple[float, float]:
    """First and second derivative of ``r0 -> H(polygon(m, r0))``."""
    cfg = Configuration.polygonal(m, r0)
    e = (cfg.points / r0).ravel()
    g = hamiltonian_grad(domain, cfg)
    h = hamiltonian_hess(domain, cfg)
    return float(g @ e), float(e @ h @ e)


def _polygon_search(domain: DomainSpec, m: int, r_init: Optional[float],
                    tol: float, maxiter: int) -> tuple[float, int]:
    """Safeguarded Newton on dH/dr0 = 0 with bisection fallback."""
    lo, hi = domain.radial_bounds()
    grid = np.linspace(max(lo + 0.05, 1e-3), min(hi - 0.05, 0.95), 46)
    vals = [polygon_radial_derivatives(domain, m, r)[0] for r in grid]
    bracket = None
    for k in range(len(grid) - 1):
        if vals[k] == 0.0:
            return float(grid[k]), 0
        if np.sign(vals[k]) != np.sign(vals[k + 1]):
            cand = (grid[k], grid[k + 1], vals[k], vals[k + 1])
            if r_init is None or grid[k] <= r_init <= grid[k + 1] or bracket is None:
                bracket = cand
    if bracket is None:
        raise NewtonDiverged(f"no sign change of dH/dr0 for m={m} on the scan interval")
    a_, b_, fa, fb = bracket
    r = 0.5 * (a_ + b_) if r_init is None or not a_ <= r_init <= b_ else float(r_init)
    for it in range(1, maxiter + 1):
        f, df = polygon_radial_derivatives(domain, m, r)
        if abs(f) <= tol:
            return r, it
        if np.sign(f) == np.sign(fa):
            a_, fa = r, f
        else:
            b_, fb = r, f
        step = -f / df if df != 0.0 else np.inf
        r_new = r + step
        if not a_ < r_new < b_:
            r_new = 0.5 * (a_ + b_)
        if abs(r_new - r) <= 1e-16 * max(1.0, abs(r)):
            return r_new, it
        r = r_new
    raise NewtonDiverged(f"polygonal search did not converge in {maxiter} iterations")


def find_critical_point(domain: DomainSpec, initial: Configuration, ansatz: str = "none",
                        tol: float = 1e-12, maxiter: int = 100) -> CriticalPointReport:
    """Locate a critical point of ``H`` starting from ``initial``.

    With ``ansatz="polygonal"`` the problem reduces to the scalar equation
    ``dH/dr0 = 0`` (``initial.r0`` or the mean radius seeds it).  Otherwise
    a damped Newton iteration runs on the full gradient: the step is halved
    while the iterate leaves the domain or the gradient norm grows, down
    to a floor of 2**-20.
    """
    seed = initial.points.tolist()
    if ansatz == "polygonal":
        m = initial.m
        r_init = initial.r0 if initial.r0 is not None else float(np.mean(np.hypot(*initial.points.T)))
        r0, it = _polygon_search(domain, m, r_init, tol, maxiter)
        cfg = Configuration.polygonal(m, r0)
        grad = hamiltonian_grad(domain, cfg)
        eig = np.linalg.eigvalsh(hamiltonian_hess(domain, cfg))
        dr = abs(polygon_radial_derivatives(domain, m, r0)[0])
        return CriticalPointReport(cfg, float(np.linalg.norm(grad)), eig, dr <= tol, it, seed)
    if ansatz != "none":
        raise ValueError(f"unknown ansatz {ansatz!r}")

    x = initial.flat()
    if not _inside(domain, x):
        raise EscapedDomain("initial configuration is not admissible")
    cfg = Configuration(x.reshape(-1, 2))
    g = hamiltonian_grad(domain, cfg)
    gnorm = float(np.linalg.norm(g))
    it = 0
    while gnorm > tol:
        if it == maxiter:
            raise NewtonDiverged(f"no convergence in {maxiter} iterations (|grad|={gnorm:.3e})")
        it += 1
        hess = hamiltonian_hess(domain, cfg)
        step = -np.linalg.solve(hess, g)
        t = 1.0
        while True:
            trial = x + t * step
            if _inside(domain, trial):
                tcfg = Configuration(trial.reshape(-1, 2))
                tg = hamiltonian_grad(domain, tcfg)
                tn = float(np.linalg.norm(tg))
                if tn < gnorm or tn <= tol:
                    break
            t *= 0.5
            if t < 2.0**-20:
                raise EscapedDomain("Newton damping floor reached")
        x, cfg, g, gnorm = trial, tcfg, tg, tn
    eig = np.linalg.eigvalsh(hamiltonian_hess(domain, cfg))
    return CriticalPointReport(cfg, gnorm, eig, gnorm <= tol, it, seed)
