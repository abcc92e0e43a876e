"""Blow-up data extracted from computed states.

Peaks, scaling parameters ``delta_j`` (``lambda e^{u(x_j)} delta_j^2 = 1``),
local masses, concentration values ``c_j`` of eigenfunctions and the
rescaled second-order profile check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad

from .eigen import EigenPair
from .errors import QuadratureNotConverged, WindowExceedsGrid, WrongPeakCount
from .green import DomainSpec, green_field
from .pde import Discretization


def bubble_profile(xt) -> np.ndarray:
    """Liouville bubble ``U(x) = -2 log(1 + |x|^2 / 8)``; accepts radii or (n, 2) points."""
    xt = np.asarray(xt, dtype=float)
    r2 = np.sum(xt * xt, axis=-1) if xt.ndim == 2 else xt * xt
    return -2.0 * np.log1p(r2 / 8.0)


@dataclass
class PeakData:
    peaks: np.ndarray
    heights: np.ndarray
    delta: np.ndarray
    R: float
    lam: float
    sigma: Optional[np.ndarray] = None
    indices: list = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.heights)

    def to_dict(self) -> dict:
        return {
            "peaks": self.peaks.tolist(), "heights": self.heights.tolist(), "delta": self.delta.tolist(),
            "R": self.R, "lambda": self.lam,
            "sigma": None if self.sigma is None else self.sigma.tolist(),
        }


def _ball_radius(domain: DomainSpec, peaks: np.ndarray) -> float:
    cap = min(domain.distance_to_boundary(p) for p in peaks)
    if len(peaks) < 2:
        return float(cap)
    dmin = min(np.hypot(*(peaks[i] - peaks[j])) for i in range(len(peaks)) for j in range(i + 1, len(peaks)))
    return float(min(0.5 * dmin, cap))


def _fit_quadratic(xy: np.ndarray, f: np.ndarray):
    """Least-squares quadratic through nine samples; returns stationary point and value."""
    x, y = xy[:, 0], xy[:, 1]
    V = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
    a = np.linalg.lstsq(V, f, rcond=None)[0]
    H = np.array([[2 * a[3], a[4]], [a[4], 2 * a[5]]])
    g = np.array([a[1], a[2]])
    try:
        p = -np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return None
    val = a[0] + g @ p + 0.5 * p @ H @ p
    return p, float(val)


def locate_peaks(disc: Discretization, u: np.ndarray, m: int, lam: float,
                 ball_radius: Optional[float] = None) -> PeakData:
    """Local maxima above half the global maximum, refined by a quadratic fit.

    Radial states have their single peak at the origin.  Sector states are
    scanned over one period (periodic in angle) and rotated into ``m``
    copies.  ``R`` defaults to half the smallest pairwise distance, capped
    by the distance to the boundary.
    """
    u = np.asarray(u, dtype=float)
    if disc.kind == "radial":
        i = int(np.argmax(u))
        if i != 0 or m != 1:
            raise WrongPeakCount(f"radial state has one peak at the origin; asked for m={m}")
        peaks = np.zeros((1, 2))
        heights = np.array([u[0]])
        idx = [0]
    else:
        nt, nr = disc.shape
        U = disc.expand(u).reshape(nt, nr)
        gmax = U.max()
        cand = []
        for j in range(nt):
            for i in range(1, nr - 1):
                v = U[j, i]
                if v < 0.5 * gmax:
                    continue
                nb = U[[(j - 1) % nt, j, (j + 1) % nt]][:, i - 1:i + 2]
                if v >= nb.max():
                    cand.append((j, i))
        th = disc.angular_grid.theta
        r = disc.radial_grid.r_unknown
        sth = disc.angular_grid.s
        sr = disc.radial_grid.s[disc.radial_grid.unknown_slice]
        found = []
        for j, i in cand:
            js = [(j - 1) % nt, j, (j + 1) % nt]
            pts, vals = [], []
            for dj, jj in zip((-1, 0, 1), js):
                for di in (-1, 0, 1):
                    pts.append((sth[j] + dj / nt, sr[i + di]))
                    vals.append(U[jj, i + di])
            pts = np.array(pts)
            ctr = np.array([sth[j], sr[i]])
            fit = _fit_quadratic(pts - ctr, np.array(vals))
            if fit is None or np.abs(fit[0] * np.array([nt, disc.n_r])).max() > 1.0:
                st, sr_, val = sth[j], sr[i], U[j, i]
            else:
                st, sr_ = ctr + fit[0]
                val = fit[1]
            rr = disc.radial_grid.mapping.x(sr_)
            tt = disc.angular_grid.mapping.x(st)
            found.append((rr, tt, val, j * nr + i))
        if len(found) != 1:
            raise WrongPeakCount(f"expected one peak per sector, found {len(found)}")
        rr, tt, val, flat = found[0]
        ang = tt + 2.0 * np.pi * np.arange(disc.m) / disc.m
        peaks = rr * np.column_stack([np.cos(ang), np.sin(ang)])
        heights = np.full(disc.m, val)
        idx = [flat] * disc.m
        if disc.m != m:
            raise WrongPeakCount(f"found {disc.m} peaks, expected {m}")
    delta = 1.0 / np.sqrt(lam * np.exp(heights))
    R = _ball_radius(disc.domain, peaks) if ball_radius is None else float(ball_radius)
    return PeakData(peaks, heights, delta, R, float(lam), indices=idx)


def local_mass(disc: Discretization, u: np.ndarray, lam: float, peaks: PeakData,
               R: Optional[float] = None, subsamples: int = 8) -> np.ndarray:
    """``lambda * integral of e^u`` over ``B_R(x_j)`` for each peak.

    Radial: cells are annuli between half nodes, the one cut by ``R`` is
    clipped exactly.  Sector: polar cells wholly inside or outside the ball
    are classified from their corner distances; cut cells are weighted by
    the fraction of ``subsamples^2`` interior sample points.
    """
    R = peaks.R if R is None else float(R)
    u = np.asarray(u, dtype=float)
    if disc.kind == "radial":
        rg = disc.radial_grid
        rh = rg.mapping.x((np.arange(rg.n) + 0.5) / rg.n)
        edges = np.concatenate([[0.0], rh])  # cell i spans [edges[i], edges[i+1]]
        w = disc.weights
        frac = np.clip((R**2 - edges[:-1] ** 2) / (edges[1:] ** 2 - edges[:-1] ** 2), 0.0, 1.0)
        sigma = 2.0 * np.pi * lam * np.sum(w * np.exp(u) * frac)
        peaks.sigma = np.array([sigma])
        return peaks.sigma.copy()

    rg, ag = disc.radial_grid, disc.angular_grid
    nt, nr = disc.shape
    sr = rg.s[rg.unknown_slice]
    dsr = 1.0 / rg.n
    st = ag.s
    dst = 1.0 / ag.n
    W = disc.full_weights.reshape(nt, nr)
    E = lam * np.exp(disc.expand(u).reshape(nt, nr)) * W
    # the sector copy that contains peak 0 also contains every peak's image
    x0 = peaks.peaks[0]
    r_lo = rg.mapping.x(sr - 0.5 * dsr)
    r_hi = rg.mapping.x(sr + 0.5 * dsr)
    t_lo = ag.mapping.x(st - 0.5 * dst)
    t_hi = ag.mapping.x(st + 0.5 * dst)
    frac = np.zeros((nt, nr))
    offs = (np.arange(subsamples) + 0.5) / subsamples
    for j in range(nt):
        tc = np.array([t_lo[j], t_hi[j]])
        d = []
        for t in tc:
            for rr in (r_lo, r_hi):
                d.append(np.hypot(rr * np.cos(t) - x0[0], rr * np.sin(t) - x0[1]))
        d = np.array(d)
        tm = 0.5 * (tc[0] + tc[1])
        rm = 0.5 * (r_lo + r_hi)
        dc = np.hypot(rm * np.cos(tm) - x0[0], rm * np.sin(tm) - x0[1])
        diam = np.hypot(r_hi - r_lo, rm * (tc[1] - tc[0]))
        inside = d.max(axis=0) <= R
        outside = dc - diam >= R
        frac[j, inside] = 1.0
        cut = ~inside & ~outside
        for i in np.nonzero(cut)[0]:
            ss_r = rg.mapping.x(sr[i] - 0.5 * dsr + offs * dsr)
            ss_t = ag.mapping.x(st[j] - 0.5 * dst + offs * dst)
            RR, TT = np.meshgrid(ss_r, ss_t)
            # sample weights follow the cell's r dr dtheta density
            wts = RR * rg.mapping.dx(sr[i] - 0.5 * dsr + offs * dsr)[None, :] * ag.mapping.dx(st[j] - 0.5 * dst + offs * dst)[:, None]
            ins = np.hypot(RR * np.cos(TT) - x0[0], RR * np.sin(TT) - x0[1]) <= R
            frac[j, i] = wts[ins].sum() / wts.sum()
    s = float(np.sum(E * frac))
    peaks.sigma = np.full(peaks.m, s)
    return peaks.sigma.copy()


def extract_c(pair: EigenPair, peaks: PeakData) -> tuple[np.ndarray, np.ndarray]:
    """``c_j = v(x_j)``: raw values and the unit-length vector."""
    raw = np.asarray(pair.evaluate(peaks.peaks), dtype=float)
    nrm = np.linalg.norm(raw)
    return raw, (raw / nrm if nrm > 0 else raw)


def rescaled_profile_error(pair: EigenPair, peaks: PeakData, j: int, c_j: float, mu: float,
                           window: float = 10.0, model: str = "second", n_radii: int = 201,
                           n_angles: int = 16) -> float:
    """``sup_{|x| <= window} |v(x_j + delta_j x) - v(x_j) - mu c_j U(x)| / mu``.

    ``model="first"`` drops the ``mu c_j U`` term.  ``j`` is 1-based.
    """
    if model not in ("first", "second"):
        raise ValueError("model must be 'first' or 'second'")
    xj = peaks.peaks[j - 1]
    dj = peaks.delta[j - 1]
    disc = pair.disc
    if window * dj >= disc.domain.distance_to_boundary(xj):
        raise WindowExceedsGrid(f"window {window} x delta {dj:.3e} leaves the domain")
    rad = np.linspace(0.0, window, n_radii)
    ang = 2.0 * np.pi * np.arange(n_angles) / n_angles
    Rr, Aa = np.meshgrid(rad, ang)
    xt = np.column_stack([(Rr * np.cos(Aa)).ravel(), (Rr * np.sin(Aa)).ravel()])
    vals = pair.evaluate(xj + dj * xt)
    v0 = pair.evaluate(xj[None, :])[0]
    diff = vals - v0
    if model == "second":
        diff = diff - mu * c_j * bubble_profile(xt)
    return float(np.abs(diff).max() / mu)


@dataclass(frozen=True)
class BubbleConstants:
    mass: float
    moment: float
    log_moment: float


def bubble_constants(epsabs: float = 0.0, epsrel: float = 1e-12) -> BubbleConstants:
    """Integrals of ``e^U``, ``e^U U`` and ``(1/2 pi) log(1/|y|) e^U`` over the plane.

    With ``t = r^2/8`` and ``w = t / (1 + t)`` each reduces to a smooth or
    log-singular integral over ``w in [0, 1]``, so the infinite tail is
    handled exactly by the change of variables.
    """
    def run(f, points=None):
        val, err = quad(f, 0.0, 1.0, epsabs=epsabs, epsrel=epsrel, limit=200)
        if not np.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
            raise QuadratureNotConverged(f"quadrature error estimate {err:.2e}")
        return val
    # e^U r dr dtheta = 8 pi dw; U = 2 log(1 - w); log(1/r) = -log(8w/(1-w))/2
    mass = 8.0 * np.pi * run(lambda w: 1.0)
    moment = 16.0 * np.pi * run(lambda w: np.log1p(-w) if w < 1 else 0.0)
    log_moment = -2.0 * run(lambda w: np.log(8.0 * w / (1.0 - w)) if 0 < w < 1 else 0.0)
    return BubbleConstants(mass, moment, log_moment)


def far_field_errors(disc: Discretization, u: np.ndarray, peaks: PeakData, points: np.ndarray,
                     pair: Optional[EigenPair] = None, c: Optional[np.ndarray] = None,
                     mu: Optional[float] = None) -> dict:
    """Sup errors of ``u ~ 8 pi sum G(., x_j)`` and ``v / mu ~ 8 pi sum c_j G(., x_j)`` at ``points``."""
    pts = np.atleast_2d(points)
    G = np.column_stack([green_field(disc.domain, pts, p) for p in peaks.peaks])
    out = {"u": float(np.abs(disc.interpolator(u)(pts) - 8.0 * np.pi * G.sum(axis=1)).max())}
    if pair is not None:
        v = pair.evaluate(pts)
        out["v"] = float(np.abs(v / mu - 8.0 * np.pi * G @ np.asarray(c)).max())
    return out


def far_field_points(disc: Discretization, peaks: PeakData, count: int = 64, min_dist: Optional[float] = None,
                     seed: int = 0) -> np.ndarray:
    """Deterministic sample of interior points at distance >= ``2R`` from every peak."""
    min_dist = 2.0 * peaks.R if min_dist is None else min_dist
    rng = np.random.default_rng(seed)
    lo, hi = disc.domain.radial_bounds()
    out = []
    tries = 0
    while len(out) < count and tries < 100 * count:
        tries += 1
        r = np.sqrt(rng.uniform(lo * lo, hi * hi))
        t = rng.uniform(0, 2 * np.pi)
        p = np.array([r * np.cos(t), r * np.sin(t)])
        if disc.domain.distance_to_boundary(p) < 0.02 * disc.domain.diameter:
            continue
        if np.min(np.hypot(*(peaks.peaks - p).T)) >= min_dist:
            out.append(p)
    return np.array(out).reshape(-1, 2)


def analysis_record(peaks: PeakData, pairs: list, c_list: list, errors: dict) -> dict:
    return {
        "lambda": peaks.lam,
        "peaks": peaks.peaks.tolist(),
        "delta": peaks.delta.tolist(),
        "sigma": None if peaks.sigma is None else peaks.sigma.tolist(),
        "mu": [p.mu for p in pairs],
        "c_extracted": [np.asarray(c).tolist() for c in c_list],
        "errors": errors,
    }
