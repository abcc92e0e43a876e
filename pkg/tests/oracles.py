"""Reference computations that share no code with the package.

* disk Green function in Moebius form,
* finite-difference Laplace solves for the annulus regular part,
* the closed-form Liouville family on the disk,
* exact linearized eigenvalues on the disk through the spherical-cap
  Legendre problem (mpmath).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

TWO_PI = 2.0 * np.pi


def disk_green(x, y) -> float:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    num = 1.0 - 2.0 * x @ y + (x @ x) * (y @ y)
    return float(np.log(np.sqrt(num) / np.linalg.norm(x - y)) / TWO_PI)


def disk_robin(x) -> float:
    x = np.asarray(x, float)
    return float(np.log(1.0 - x @ x) / TWO_PI)


def _polar_laplace(a: float, nr: int, nth: int, bc):
    """Solve Laplace on a < r < 1 with Dirichlet data ``bc(x, y)``; second-order polar FD."""
    h = (1.0 - a) / nr
    r = a + h * np.arange(nr + 1)
    th = TWO_PI * np.arange(nth) / nth
    k = TWO_PI / nth
    ri = r[1:-1]
    n_in = nr - 1
    idx = lambda i, j: j * n_in + (i - 1)
    rows, cols, vals = [], [], []
    rhs = np.zeros(n_in * nth)
    for j in range(nth):
        for i in range(1, nr):
            p = idx(i, j)
            rp, rm, rc = r[i] + 0.5 * h, r[i] - 0.5 * h, r[i]
            cr_p, cr_m = rp / (rc * h * h), rm / (rc * h * h)
            ct = 1.0 / (rc * rc * k * k)
            rows.append(p); cols.append(p); vals.append(-(cr_p + cr_m + 2 * ct))
            for ii, c in ((i + 1, cr_p), (i - 1, cr_m)):
                if ii in (0, nr):
                    rhs[p] -= c * bc(r[ii] * np.cos(th[j]), r[ii] * np.sin(th[j]))
                else:
                    rows.append(p); cols.append(idx(ii, j)); vals.append(c)
            for jj in ((j + 1) % nth, (j - 1) % nth):
                rows.append(p); cols.append(idx(i, jj)); vals.append(ct)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n_in * nth, n_in * nth))
    u = spl.spsolve(A.tocsc(), rhs)
    return r, th, u.reshape(nth, n_in)


def annulus_regular_fd(a: float, y, x, nr: int = 100, nth: int = 256) -> float:
    """K(x, y) on the annulus via Richardson-extrapolated FD; ``x`` must be a node of both grids."""
    y = np.asarray(y, float)

    def bc(px, py):
        return np.log(np.hypot(px - y[0], py - y[1])) / TWO_PI

    vals = []
    for f in (1, 2):
        r, th, u = _polar_laplace(a, nr * f, nth * f, bc)
        rx = np.hypot(*x)
        tx = np.arctan2(x[1], x[0]) % TWO_PI
        i = int(round((rx - a) / ((1 - a) / (nr * f))))
        j = int(round(tx / (TWO_PI / (nth * f)))) % (nth * f)
        assert abs(r[i] - rx) < 1e-12 and abs(th[j] - tx) < 1e-12
        vals.append(u[j, i - 1])
    return float((4 * vals[1] - vals[0]) / 3)


def liouville_eps2(lam: float, branch: str) -> float:
    """Roots of 8 e = lam (1 + e)^2: ``upper`` (small e, large u) or ``lower``."""
    b = 2.0 * lam - 8.0
    disc = np.sqrt(b * b - 4 * lam * lam)
    lo, hi = (-b - disc) / (2 * lam), (-b + disc) / (2 * lam)
    return lo if branch == "upper" else hi


def liouville_solution(lam: float, e2: float, r):
    r = np.asarray(r, float)
    return np.log(8.0 * e2 / (lam * (e2 + r * r) ** 2))


def exact_disk_mu(lam: float, n: int = 0, dps: int = 30) -> float:
    """Smallest eigenvalue with angular number ``n`` of the linearization at the upper-branch state.

    Stereographic projection maps the problem to a spherical cap of
    half-angle ``2 atan(1/eps)`` and ``mu = nu (nu + 1) / 2`` with
    ``P_nu^n(cos theta0) = 0``.
    """
    import mpmath as mp

    mp.mp.dps = dps
    lam = mp.mpf(lam)
    e2 = mp.findroot(lambda t: 8 * t - lam * (1 + t) ** 2, lam / 8)
    x = mp.cos(2 * mp.atan(1 / mp.sqrt(e2)))
    f = lambda nu: mp.legenp(nu, n, x)
    nu = mp.mpf("0.001") if n == 0 else mp.mpf(n) + mp.mpf("1e-6")
    step = mp.mpf("0.002")
    prev = f(nu)
    while True:
        nxt = nu + step
        cur = f(nxt)
        if prev * cur < 0:
            root = mp.findroot(f, (nu, nxt), solver="anderson")
            return float(root * (root + 1) / 2)
        nu, prev = nxt, cur
