"""Finite-difference Gel'fand solver with pseudo-arclength continuation.

The discrete problem is ``A u = lambda * W * exp(u)`` where ``A`` is the
symmetric stiffness of a graded polar grid and ``W`` the diagonal cell
measure (see :mod:`gelfand_lab.grids`).  Two discretizations exist:

* ``radial``: the disk, 1D in ``r`` with a symmetry condition at the origin;
* ``sector``: the annulus restricted to one period ``[-pi/m, pi/m)`` of an
  m-fold rotationally invariant solution, with periodic angular coupling.

Every linear solve is a sparse direct factorization followed by one step of
iterative refinement.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.optimize import minimize_scalar

from .errors import (JacobianSingular, MeshUnderResolved, NewtonDiverged,
                     StepFloorReached)
from .green import DomainSpec, regular_field
from .grids import (AngularGrid, RadialGrid, angular_sector_grid,
                    radial_annulus_grid, radial_disk_grid, sector_operators)

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class Discretization:
    """Grid description for one of the two supported problems.

    ``core`` is the radial grading width (nodes crowd within ``core`` of
    ``center``); ``core_theta`` is the angular one for sectors.

    Sector solves are restricted to states even under ``theta -> -theta``
    (``reflect=True``).  This removes the rotational null direction of the
    Jacobian.  The unknowns are then the nodes with ``theta <= 0``.
    :meth:`expand` maps a solver vector to the whole sector and
    :attr:`full_stiffness` / :attr:`full_weights` act on that.
    """

    kind: str
    domain: DomainSpec
    n_r: int
    core: float
    center: float = 0.0
    m: int = 1
    n_theta: int = 0
    core_theta: float = 0.0
    reflect: bool = True
    centered: bool = False

    def __post_init__(self):
        if self.kind not in ("radial", "sector"):
            raise ValueError(f"unknown discretization kind {self.kind!r}")
        if self.n_r < 64:
            raise ValueError("n_r must be at least 64")
        if self.kind == "radial" and self.domain.kind != "disk":
            raise ValueError("radial discretization needs a disk")
        if self.kind == "sector":
            if self.domain.kind != "annulus":
                raise ValueError("sector discretization needs an annulus")
            if self.n_theta < 8 or self.n_theta % 2:
                raise ValueError("n_theta must be an even integer >= 8")

    @classmethod
    def radial(cls, domain: DomainSpec, n_r: int = 4096, core: Optional[float] = None) -> "Discretization":
        core = 0.25 * domain.disk_radius if core is None else core
        return cls("radial", domain, int(n_r), float(core))

    @classmethod
    def sector(cls, domain: DomainSpec, m: int, center: float, n_r: int = 256, n_theta: int = 256,
               core: float = 0.01, core_theta: Optional[float] = None, centered: bool = False) -> "Discretization":
        if core_theta is None:
            core_theta = core / center
        return cls("sector", domain, int(n_r), float(core), float(center), int(m), int(n_theta),
                   float(core_theta), True, bool(centered))

    @property
    def pin_index(self) -> int:
        """Solver index of the node at radius ``center`` on the ray ``theta = 0`` (centred sectors)."""
        if self.kind != "sector" or not self.centered:
            raise ValueError("pin_index needs a centred sector discretization")
        k = self.radial_grid.mapping.center_index
        nr = self.shape[-1]
        full = (self.n_theta // 2) * nr + (k - 1)
        return int(np.nonzero(self._reduction[1] == full)[0][0])

    # -- grids -----------------------------------------------------------

    @cached_property
    def radial_grid(self) -> RadialGrid:
        if self.kind == "radial":
            return radial_disk_grid(self.domain.disk_radius, self.n_r, self.core)
        return radial_annulus_grid(self.domain.inner_radius, 1.0, self.n_r, self.center, self.core,
                                   centered=self.centered)

    @cached_property
    def angular_grid(self) -> Optional[AngularGrid]:
        if self.kind == "radial":
            return None
        return angular_sector_grid(self.m, self.n_theta, self.core_theta)

    @cached_property
    def _full_ops(self):
        rg = self.radial_grid
        if self.kind == "radial":
            return rg.stiffness(), rg.weights()
        ops = sector_operators(rg, self.angular_grid)
        return ops.stiffness, ops.weights

    @cached_property
    def _reduction(self):
        """(P, representatives): ``u_full = P @ u`` and the full index of each unknown."""
        nfull = len(self._full_ops[1])
        if self.kind == "radial" or not self.reflect:
            return None, np.arange(nfull)
        nt, nr = self.shape
        half = nt // 2
        jfull = np.repeat(np.arange(nt), nr)
        ifull = np.tile(np.arange(nr), nt)
        jred = np.where(jfull <= half, jfull, nt - jfull)
        cols = jred * nr + ifull
        P = sp.csr_matrix((np.ones(nfull), (np.arange(nfull), cols)), shape=(nfull, (half + 1) * nr))
        reps = np.arange((half + 1) * nr)
        return P, reps

    @cached_property
    def _ops(self):
        A, w = self._full_ops
        P = self._reduction[0]
        if P is None:
            return A, w
        return (P.T @ A @ P).tocsr(), P.T @ w

    @property
    def stiffness(self) -> sp.csr_matrix:
        return self._ops[0]

    @property
    def weights(self) -> np.ndarray:
        return self._ops[1]

    @property
    def full_stiffness(self) -> sp.csr_matrix:
        return self._full_ops[0]

    @property
    def full_weights(self) -> np.ndarray:
        return self._full_ops[1]

    def expand(self, u: np.ndarray) -> np.ndarray:
        P = self._reduction[0]
        return np.asarray(u) if P is None else P @ np.asarray(u)

    def restrict(self, u_full: np.ndarray) -> np.ndarray:
        return np.asarray(u_full)[self._reduction[1]]

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def shape(self) -> tuple:
        """Shape of a full sector array (n_theta, radial unknowns) or (radial unknowns,)."""
        nr = len(self.radial_grid.r_unknown)
        return (nr,) if self.kind == "radial" else (self.n_theta, nr)

    @property
    def measure_factor(self) -> float:
        """Multiplier turning ``sum(W * f)`` into the integral over the whole domain."""
        return 2.0 * np.pi if self.kind == "radial" else float(self.m)

    def node_coordinates(self) -> np.ndarray:
        """Cartesian coordinates of the unknown nodes, shape (size, 2)."""
        r = self.radial_grid.r_unknown
        if self.kind == "radial":
            return np.column_stack([r, np.zeros_like(r)])
        th = self.angular_grid.theta
        R, T = np.meshgrid(r, th)
        xy = np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])
        return xy[self._reduction[1]]

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        return -(self.stiffness @ u) / self.weights

    def peak_index(self, u: np.ndarray) -> int:
        return int(np.argmax(u))

    def local_spacing(self, index: int) -> float:
        """Largest grid spacing around solver unknown ``index``."""
        index = int(self._reduction[1][index])
        rg = self.radial_grid
        nr = self.shape[-1]
        i = index % nr
        r_all = rg.r
        off = 0 if rg.origin else 1
        ir = i + off
        hr = max(r_all[min(ir + 1, len(r_all) - 1)] - r_all[ir], r_all[ir] - r_all[max(ir - 1, 0)])
        if self.kind == "radial":
            return float(hr)
        j = index // nr
        th = self.angular_grid.theta
        per = self.angular_grid.period
        n = len(th)
        ht = max((th[(j + 1) % n] - th[j]) % per, (th[j] - th[(j - 1) % n]) % per)
        return float(max(hr, r_all[ir] * ht))

    def full_field(self, u: np.ndarray, full: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Radial node values including the Dirichlet boundary nodes.

        Returns ``(r, U)`` with ``U`` of shape (n_r + 1,) or (n_theta, n_r + 1).
        ``full=True`` means ``u`` already covers the whole sector.
        """
        rg = self.radial_grid
        r = rg.r
        if self.kind == "radial":
            out = np.zeros(len(r))
            out[rg.unknown_slice] = u
            return r, out
        vals = np.asarray(u) if full else self.expand(u)
        out = np.zeros((self.n_theta, len(r)), dtype=vals.dtype)
        out[:, rg.unknown_slice] = vals.reshape(self.shape)
        return r, out
        return r, full

    def interpolator(self, u: np.ndarray, full: bool = False):
        """Callable ``f(points) -> values`` evaluating a grid function anywhere in the domain.

        Interpolation is cubic in the computational coordinates.  Sector
        data is extended periodically and by the m-fold rotation.
        """
        rg = self.radial_grid
        r, full = self.full_field(u, full)
        if self.kind == "radial":
            sr = rg.s
            spline = CubicSpline(sr, full)
            rmap = rg.mapping

            def f(points):
                pts = np.atleast_2d(points)
                rr = np.hypot(pts[:, 0], pts[:, 1])
                return spline(np.clip(rmap.inverse(rr), 0.0, 1.0))
            f.radial = lambda rr: spline(np.clip(rmap.inverse(np.asarray(rr)), 0.0, 1.0))
            return f

        ag = self.angular_grid
        per = ag.period
        s_t = ag.s
        ext = 3
        s_ext = np.concatenate([s_t[-ext:] - 1.0, s_t, s_t[:ext] + 1.0])
        vals = np.concatenate([full[-ext:], full, full[:ext]], axis=0)
        spline = RectBivariateSpline(s_ext, rg.s, vals, kx=3, ky=3)
        tmap = ag.mapping
        rmap = rg.mapping

        def f(points):
            pts = np.atleast_2d(points)
            rr = np.hypot(pts[:, 0], pts[:, 1])
            th = np.arctan2(pts[:, 1], pts[:, 0])
            th = (th + 0.5 * per) % per - 0.5 * per
            st = tmap.inverse(th)
            sr = np.clip(rmap.inverse(rr), 0.0, 1.0)
            return spline.ev(st, sr)
        return f

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "domain": self.domain.to_dict(), "n_r": self.n_r, "core": self.core,
            "center": self.center, "m": self.m, "n_theta": self.n_theta, "core_theta": self.core_theta,
            "reflect": self.reflect, "centered": self.centered,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Discretization":
        dom = dict(d["domain"])
        domain = DomainSpec(**dom)
        return cls(d["kind"], domain, int(d["n_r"]), float(d["core"]), float(d["center"]), int(d["m"]),
                   int(d["n_theta"]), float(d["core_theta"]), bool(d.get("reflect", True)),
                   bool(d.get("centered", False)))


# ---------------------------------------------------------------------------
# residuals and linear algebra

def residual_norm(disc: Discretization, u: np.ndarray, lam: float) -> float:
    """Scaled sup norm ``|Delta_h u + lambda e^u|_inf / max(1, lambda |e^u|_inf)``."""
    eu = np.exp(u)
    res = disc.laplacian(u) + lam * eu
    return float(np.abs(res).max() / max(1.0, lam * eu.max()))


def rounding_floor(disc: Discretization, u: np.ndarray, lam: float) -> float:
    """Size of :func:`residual_norm` attributable to round-off in ``u`` alone.

    On strongly graded grids the pointwise Laplacian amplifies the last bit
    of ``u`` by ``1/h^2``; Newton cannot go below this level.
    """
    A = disc.stiffness
    absA = abs(A)
    floor = 4.0 * EPS * (absA @ np.abs(u)) / disc.weights
    return float(floor.max() / max(1.0, lam * np.exp(u).max()))


def _factor(mat: sp.spmatrix):
    try:
        return spl.splu(mat.tocsc())
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise JacobianSingular(str(exc)) from exc


def _solve_refined(mat: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    lu = _factor(mat)
    x = lu.solve(rhs)
    x = x + lu.solve(rhs - mat @ x)
    if not np.all(np.isfinite(x)):
        raise JacobianSingular("linear solve produced non-finite values")
    return x


def jacobian(disc: Discretization, u: np.ndarray, lam: float) -> sp.csr_matrix:
    return (disc.stiffness - sp.diags(lam * disc.weights * np.exp(u))).tocsr()


@dataclass
class NewtonInfo:
    iterations: int
    residuals: list
    converged: bool


def _converged(disc, u, lam, tol, step=None, prev_res=None) -> tuple[bool, float]:
    # ``step`` is the last Newton update relative to max(1, |u|).  The
    # round-off floor only counts once Newton has stalled: a tiny update or
    # a residual that no longer halves.
    res = residual_norm(disc, u, lam)
    if res <= tol:
        return True, res
    if step is None:
        return False, res
    stalled = step <= 1e-10 or (prev_res is not None and res >= 0.5 * prev_res)
    return stalled and res <= 10.0 * rounding_floor(disc, u, lam), res


def _rel_step(du, u) -> float:
    return float(np.abs(du).max() / max(1.0, np.abs(u).max()))


def newton_solve(disc: Discretization, lam: float, initial_guess: Optional[np.ndarray] = None,
                 tol: float = 1e-10, maxiter: int = 40, info: Optional[list] = None) -> np.ndarray:
    """Solve ``-Delta_h u = lambda e^u`` at fixed ``lambda`` by Newton's method.

    The stopping test is ``residual_norm <= tol``, relaxed to ten times the
    round-off floor when the grid is so fine that ``tol`` is unreachable.
    ``lambda == 0`` returns the zero solution; negative values are rejected.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if lam == 0.0:
        return np.zeros(disc.size)
    u = np.zeros(disc.size) if initial_guess is None else np.array(initial_guess, dtype=float)
    history = []
    step = None
    for it in range(maxiter + 1):
        ok, res = _converged(disc, u, lam, tol, step, history[-1] if history else None)
        history.append(res)
        if ok:
            log.debug("newton converged in %d iterations: %s", it, history)
            if info is not None:
                info.append(NewtonInfo(it, history, True))
            return u
        if not np.isfinite(res) or it == maxiter:
            break
        F = disc.stiffness @ u - lam * disc.weights * np.exp(u)
        du = _solve_refined(jacobian(disc, u, lam), -F)
        u = u + du
        step = _rel_step(du, u)
    if info is not None:
        info.append(NewtonInfo(len(history) - 1, history, False))
    raise NewtonDiverged(f"Newton failed at lambda={lam:.6g}; residual history {history[-4:]}")


def _bordered_newton(disc: Discretization, u: np.ndarray, lam: float, border_u, border_lam: float,
                     constraint, tol: float, maxiter: int):
    """Newton on ``F(u, lam) = 0`` plus one scalar constraint with constant gradient.

    ``constraint(u, lam)`` returns the constraint value; ``(border_u,
    border_lam)`` is its gradient (a dense vector or a single index for a
    point constraint).
    """
    n = disc.size
    if isinstance(border_u, (int, np.integer)):
        row = sp.csr_matrix(([1.0], ([0], [int(border_u)])), shape=(1, n))
    else:
        row = sp.csr_matrix(np.asarray(border_u).reshape(1, n))
    history = []
    step = None
    for it in range(maxiter + 1):
        ok, res = _converged(disc, u, lam, tol, step, history[-1] if history else None)
        c = constraint(u, lam)
        history.append(res)
        if ok and abs(c) <= 1e-12 * max(1.0, np.abs(u).max()):
            return u, lam, it
        if not np.isfinite(res) or it == maxiter:
            break
        eu = disc.weights * np.exp(u)
        F = disc.stiffness @ u - lam * eu
        J = sp.bmat([[jacobian(disc, u, lam), sp.csr_matrix(-eu.reshape(n, 1))],
                     [row, sp.csr_matrix([[border_lam]])]], format="csc")
        d = _solve_refined(J, -np.concatenate([F, [c]]))
        u = u + d[:n]
        lam = lam + d[n]
        step = max(_rel_step(d[:n], u), abs(d[n]) / max(1.0, abs(lam)))
        if not np.isfinite(lam) or lam <= 0:
            break
    raise NewtonDiverged(f"bordered Newton failed (residual history {history[-4:]})")


def solve_at_peak_value(disc: Discretization, value: float, u_guess: np.ndarray, lam_guess: float,
                        index: Optional[int] = None, tol: float = 1e-10, maxiter: int = 40):
    """Solve for ``(u, lambda)`` with ``u[index] = value`` (the peak node by default)."""
    p = disc.peak_index(u_guess) if index is None else int(index)
    u, lam, _ = _bordered_newton(disc, np.array(u_guess, dtype=float), float(lam_guess), p, 0.0,
                                 lambda uu, ll: uu[p] - value, tol, maxiter)
    return u, lam


# ---------------------------------------------------------------------------
# branches

@dataclass
class BranchState:
    lam: float
    u: Optional[np.ndarray]
    u_max: float
    s: float
    mass: float
    tag: str = ""

    def summary(self) -> dict:
        return {"lambda": self.lam, "u_max": self.u_max, "s": self.s, "mass": self.mass, "tag": self.tag}


@dataclass
class SolutionBranch:
    disc: Discretization
    states: list = field(default_factory=list)
    fold: Optional[tuple] = None
    recorded: dict = field(default_factory=dict)
    ds: float = 0.0
    upper: bool = False
    finished: bool = False

    def lambdas(self) -> np.ndarray:
        return np.array([s.lam for s in self.states])

    def u_max(self) -> np.ndarray:
        return np.array([s.u_max for s in self.states])

    # -- persistence -------------------------------------------------------

    def to_json(self) -> dict:
        tail = [s for s in self.states[-2:]]
        return {
            "discretization": self.disc.to_dict(),
            "summary": [s.summary() for s in self.states],
            "fold": None if self.fold is None else {"lambda": self.fold[0], "index": self.fold[1]},
            "recorded": {k: {**v.summary(), "u": v.u.tolist()} for k, v in self.recorded.items()},
            "tail": [{**s.summary(), "u": s.u.tolist()} for s in tail if s.u is not None],
            "ds": self.ds,
            "upper": self.upper,
            "finished": self.finished,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def from_json(cls, data: dict) -> "SolutionBranch":
        disc = Discretization.from_dict(data["discretization"])
        states = [BranchState(d["lambda"], None, d["u_max"], d["s"], d["mass"], d.get("tag", ""))
                  for d in data["summary"]]
        for t, st in zip(data["tail"], states[len(states) - len(data["tail"]):]):
            st.u = np.array(t["u"])
        recorded = {k: BranchState(v["lambda"], np.array(v["u"]), v["u_max"], v["s"], v["mass"], v["tag"])
                    for k, v in data["recorded"].items()}
        fold = None if data["fold"] is None else (data["fold"]["lambda"], data["fold"]["index"])
        return cls(disc, states, fold, recorded, data["ds"], data["upper"], data["finished"])

    @classmethod
    def load(cls, path) -> "SolutionBranch":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def csv_rows(self) -> list:
        return [(s.lam, s.u_max, s.mass) for s in self.states]


def total_mass(disc: Discretization, u: np.ndarray, lam: float) -> float:
    """``lambda * integral of e^u`` over the whole domain."""
    return float(disc.measure_factor * lam * np.sum(disc.weights * np.exp(u)))


def _make_state(disc, u, lam, s, tag="") -> BranchState:
    return BranchState(float(lam), u, float(u.max()), float(s), total_mass(disc, u, lam), tag)


def check_resolution(disc: Discretization, u: np.ndarray, lam: float, nodes: float = 4.0) -> float:
    """Raise :class:`MeshUnderResolved` when the bubble is narrower than ``nodes`` local spacings."""
    p = disc.peak_index(u)
    delta = 1.0 / np.sqrt(lam * np.exp(u[p]))
    h = disc.local_spacing(p)
    if delta < nodes * h:
        raise MeshUnderResolved(
            f"peak width {delta:.3e} spans fewer than {nodes:g} grid spacings ({h:.3e}); "
            f"regrade with core <= {delta:.3e}")
    return delta / h


class _Metric:
    """Inner product on (u, lambda) used for arclength: mean over u plus lambda."""

    def __init__(self, n: int):
        self.n = n

    def dot(self, a, b) -> float:
        return float(a[:-1] @ b[:-1]) / self.n + float(a[-1] * b[-1])

    def norm(self, a) -> float:
        return np.sqrt(self.dot(a, a))


def _tangent(disc, u, lam, prev_dir: Optional[np.ndarray], sign: float, metric: _Metric) -> np.ndarray:
    n = disc.size
    eu = disc.weights * np.exp(u)
    if prev_dir is None:
        # solve J du = W e^u (derivative of u with respect to lambda)
        du = _solve_refined(jacobian(disc, u, lam), eu)
        t = np.concatenate([du, [1.0]])
        t *= sign / metric.norm(t)
        return t
    border = np.concatenate([prev_dir[:-1] / metric.n, [prev_dir[-1]]])
    J = sp.bmat([[jacobian(disc, u, lam), sp.csr_matrix(-eu.reshape(n, 1))],
                 [sp.csr_matrix(border.reshape(1, n + 1)[:, :n]), sp.csr_matrix([[border[-1]]])]],
                format="csc")
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    t = _solve_refined(J, rhs)
    return t / metric.norm(t)


def continue_branch(disc: Discretization, start: tuple, lambda_min: Optional[float] = None,
                    u_max_target: Optional[float] = None, record_lambdas: Sequence[float] = (),
                    record_u_max: Sequence[float] = (), ds: float = 0.05, ds_max: float = 2.0,
                    direction: float = 1.0, start_upper: bool = False, max_steps: int = 5000,
                    tol: float = 1e-10, check_mesh: bool = True,
                    branch: Optional[SolutionBranch] = None, checkpoint=None,
                    checkpoint_every: int = 25) -> SolutionBranch:
    """Pseudo-arclength continuation from a converged state ``(lambda0, u0)``.

    The first step follows the tangent (``direction`` sets the sign of
    ``d lambda / ds``); later steps use a secant predictor and a bordered
    Newton corrector.  The step adapts to keep the corrector at 3-5
    iterations.  The fold is flagged when ``d lambda / ds`` changes sign
    and refined by maximising ``lambda`` over the peak value.  Continuation
    stops once ``lambda <= lambda_min`` on the upper branch or
    ``u_max >= u_max_target``.

    States at exactly the requested ``record_lambdas`` (upper branch) and
    ``record_u_max`` values are stored in ``branch.recorded`` under keys
    ``"lambda=<value>"`` and ``"umax=<value>"``.

    Passing an existing ``branch`` (e.g. loaded from a checkpoint) resumes it.
    """
    if lambda_min is None and u_max_target is None:
        raise ValueError("need lambda_min or u_max_target")
    metric = _Metric(disc.size)
    if branch is None:
        lam0, u0 = start
        branch = SolutionBranch(disc, [_make_state(disc, np.asarray(u0, float), lam0, 0.0, "start")],
                                ds=ds, upper=start_upper)
    if branch.finished:
        return branch
    ds = branch.ds or ds

    def done(st: BranchState) -> bool:
        if u_max_target is not None and st.u_max >= u_max_target:
            return True
        return lambda_min is not None and branch.upper and st.lam <= lambda_min

    pending_lam = sorted((float(x) for x in record_lambdas
                          if f"lambda={float(x):.12g}" not in branch.recorded), reverse=True)
    pending_um = sorted(float(x) for x in record_u_max if f"umax={float(x):.12g}" not in branch.recorded)

    cur = branch.states[-1]
    prev = branch.states[-2] if len(branch.states) >= 2 and branch.states[-2].u is not None else None
    steps = 0
    while not done(cur):
        if steps >= max_steps:
            raise StepFloorReached(f"max_steps={max_steps} reached at lambda={cur.lam:.6g}")
        X = np.concatenate([cur.u, [cur.lam]])
        if prev is None:
            tau = _tangent(disc, cur.u, cur.lam, None, direction, metric)
        else:
            sec = X - np.concatenate([prev.u, [prev.lam]])
            tau = sec / metric.norm(sec)
        while True:
            Xp = X + ds * tau
            border = np.concatenate([tau[:-1] / metric.n, [tau[-1]]])

            def constraint(uu, ll, Xp=Xp, tau=tau):
                return metric.dot(tau, np.concatenate([uu, [ll]]) - Xp)
            try:
                if Xp[-1] <= 0:
                    raise NewtonDiverged("predictor left lambda > 0")
                u_new, lam_new, its = _bordered_newton(disc, Xp[:-1].copy(), float(Xp[-1]),
                                                       border[:-1], float(border[-1]), constraint, tol, 8)
                break
            except (NewtonDiverged, JacobianSingular):
                ds *= 0.5
                if ds < 1e-12:
                    branch.ds = ds
                    raise StepFloorReached(f"step size below 1e-12 at lambda={cur.lam:.6g}")
        new = _make_state(disc, u_new, lam_new, cur.s + ds)
        if check_mesh:
            try:
                check_resolution(disc, u_new, lam_new)
            except MeshUnderResolved as exc:
                exc.branch = branch
                raise
        # fold: d lambda / ds changes from + to -
        if prev is not None and branch.fold is None:
            if (cur.lam - prev.lam) > 0 and (new.lam - cur.lam) < 0:
                branch.fold = (_refine_fold(disc, prev, cur, new, tol), len(branch.states) - 1)
                branch.upper = True
        elif prev is None and branch.fold is None and new.lam < cur.lam and not branch.upper:
            branch.upper = True
        _record_crossings(disc, branch, cur, new, pending_lam, pending_um, tol)
        branch.states.append(new)
        prev, cur = cur, new
        steps += 1
        ds = ds * 1.6 if its <= 3 else (ds * 0.5 if its > 5 else ds)
        ds = min(ds, ds_max)
        branch.ds = ds
        if checkpoint is not None and steps % checkpoint_every == 0:
            checkpoint(branch)
    branch.finished = True
    if checkpoint is not None:
        checkpoint(branch)
    return branch


def _record_crossings(disc, branch, cur, new, pending_lam, pending_um, tol):
    while pending_um and cur.u_max < pending_um[0] <= new.u_max:
        t = pending_um.pop(0)
        w = (t - cur.u_max) / (new.u_max - cur.u_max)
        guess = (1 - w) * cur.u + w * new.u
        u, lam = solve_at_peak_value(disc, t, guess, (1 - w) * cur.lam + w * new.lam, tol=tol)
        branch.recorded[f"umax={t:.12g}"] = _make_state(disc, u, lam, cur.s + w * (new.s - cur.s), f"umax={t:.12g}")
    if not branch.upper:
        return
    while pending_lam and new.lam <= pending_lam[0] < cur.lam:
        t = pending_lam.pop(0)
        w = (cur.lam - t) / (cur.lam - new.lam)
        guess = (1 - w) * cur.u + w * new.u
        u = newton_solve(disc, t, guess, tol=tol)
        branch.recorded[f"lambda={t:.12g}"] = _make_state(disc, u, t, cur.s + w * (new.s - cur.s), f"lambda={t:.12g}")


def _refine_fold(disc, a: BranchState, b: BranchState, c: BranchState, tol) -> float:
    """Maximise lambda over the peak value between states ``a`` and ``c``."""
    p = disc.peak_index(b.u)
    lo, hi = a.u[p], c.u[p]
    cache = {}

    def neg_lam(t):
        ref = min((a, b, c), key=lambda s: abs(s.u[p] - t))
        u, lam = solve_at_peak_value(disc, t, ref.u, ref.lam, index=p, tol=tol)
        cache[t] = lam
        return -lam
    res = minimize_scalar(neg_lam, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-9 * max(1.0, abs(hi))})
    return float(-res.fun)


def regrade(state_u: np.ndarray, state_lam: float, old: Discretization, new: Discretization,
            keep: str = "u_max", tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Transfer a converged state to a new grid and re-converge it.

    ``keep="u_max"`` holds the peak value fixed (lambda free);
    ``keep="lambda"`` holds lambda fixed.
    """
    f = old.interpolator(state_u)
    guess = f(new.node_coordinates())
    if keep == "lambda":
        return newton_solve(new, state_lam, guess, tol=tol), float(state_lam)
    value = float(np.max(state_u))
    p = new.peak_index(guess)
    return solve_at_peak_value(new, value, guess, state_lam, index=p, tol=tol)


def bubble_ansatz(disc_or_domain, points: np.ndarray, lam: float, d: np.ndarray,
                  at: Optional[np.ndarray] = None) -> np.ndarray:
    """Singular-limit guess ``sum_j 8 pi K(x, k_j) - 2 log(8 delta_j^2 + |x - k_j|^2)``.

    ``points`` are the blow-up points ``k_j`` and ``delta_j = d_j lambda^(1/2)``.
    Away from the points this is ``sum_j 8 pi G(x, k_j)``; near each point it
    is the rescaled bubble.  Evaluated at the discretization nodes, or at
    ``at`` when given (then the first argument may be a bare domain).
    """
    if isinstance(disc_or_domain, Discretization):
        domain = disc_or_domain.domain
        xs = disc_or_domain.node_coordinates() if at is None else np.atleast_2d(at)
    else:
        domain = disc_or_domain
        xs = np.atleast_2d(at)
    u = np.zeros(len(xs))
    for pj, dj in zip(np.atleast_2d(points), np.atleast_1d(d)):
        delta2 = dj * dj * lam
        dist2 = np.sum((xs - pj) ** 2, axis=1)
        u += 8.0 * np.pi * regular_field(domain, xs, pj) - 2.0 * np.log(8.0 * delta2 + dist2)
    return u


# ---------------------------------------------------------------------------
# co-moving solves for multi-peak annulus states

def solve_pinned(disc: Discretization, lam: float, guess: np.ndarray, tol: float = 1e-10,
                 maxiter: int = 30) -> tuple[np.ndarray, float]:
    """Solve ``A u - lambda W e^u + alpha g = 0`` with the peak held at the grid centre.

    The constraint is a zero symmetric radial difference at the centre node;
    ``g`` is a frozen radially odd forcing concentrated on the bubble.
    Removing the radial translation direction keeps the Jacobian well
    conditioned.  ``alpha = 0`` means ``u`` solves the unmodified problem.
    """
    q = disc.pin_index
    n = disc.size
    xy = disc.node_coordinates()
    r = np.hypot(xy[:, 0], xy[:, 1])
    u = np.array(guess, dtype=float)
    delta = 1.0 / np.sqrt(lam * np.exp(u[q]))
    g = disc.weights * lam * np.exp(u) * (r - disc.center) / delta
    g = g / np.abs(g).max()
    row = sp.csr_matrix(([1.0, -1.0], ([0, 0], [q + 1, q - 1])), shape=(1, n))
    alpha = 0.0
    history = []
    step = None
    for it in range(maxiter + 1):
        F = disc.stiffness @ u - lam * disc.weights * np.exp(u) + alpha * g
        res = float(np.abs(F / disc.weights).max() / max(1.0, lam * np.exp(u).max()))
        c = u[q + 1] - u[q - 1]
        history.append(res)
        ok = res <= tol
        if not ok and step is not None:
            stalled = step <= 1e-10 or (len(history) > 1 and res >= 0.5 * history[-2])
            ok = stalled and res <= 10.0 * rounding_floor(disc, u, lam)
        if ok and abs(c) <= 1e-12 * max(1.0, abs(u[q])):
            return u, alpha
        if not np.isfinite(res) or it == maxiter:
            break
        J = sp.bmat([[jacobian(disc, u, lam), sp.csr_matrix(g.reshape(n, 1))],
                     [row, None]], format="csc")
        d = _solve_refined(J, -np.concatenate([F, [c]]))
        u = u + d[:n]
        alpha = alpha + d[n]
        step = _rel_step(d[:n], u)
    raise NewtonDiverged(f"pinned Newton failed (residual history {history[-4:]})")


@dataclass
class ComovingResult:
    disc: Discretization
    u: np.ndarray
    lam: float
    center: float
    alpha: float
    iterations: int
    residual: float


def comoving_solve(make_disc, lam: float, guess, center0: float, dc: float, tol: float = 1e-10,
                   maxiter: int = 30) -> ComovingResult:
    """Find the peak radius ``c`` at which the pinned solve needs no forcing.

    ``make_disc(c)`` builds a centred discretization for trial radius ``c``;
    ``guess(points)`` evaluates the initial state anywhere.  A secant
    iteration on ``alpha(c) = 0`` is used; each trial state seeds the next.
    """
    def run(c, g):
        disc = make_disc(c)
        u, a = solve_pinned(disc, lam, g(disc.node_coordinates()), tol=tol)
        return disc, u, a

    c_prev = center0
    disc, u, a_prev = run(c_prev, guess)
    c = center0 + dc
    last = (disc, u, a_prev, c_prev)
    for it in range(1, maxiter + 1):
        disc, u, a = run(c, last[0].interpolator(last[1]))
        res = residual_norm(disc, u, lam)
        if res <= tol or a == 0.0:
            return ComovingResult(disc, u, lam, c, a, it, res)
        if a == a_prev:
            break
        c_new = c - a * (c - c_prev) / (a - a_prev)
        if abs(c_new - c) <= 4 * EPS * c and res <= 10.0 * rounding_floor(disc, u, lam):
            return ComovingResult(disc, u, lam, c, a, it, res)
        last = (disc, u, a, c)
        c_prev, a_prev, c = c, a, c_new
    raise NewtonDiverged(f"co-moving secant did not converge at lambda={lam:.6g} (alpha={a:.3e})")
