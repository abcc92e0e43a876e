"""Compare the smallest linearized eigenvalue on the disk with its two-term prediction.

Run:  python demos/first_eigenvalue.py
"""

import numpy as np

from gelfand_lab import (Configuration, Discretization, DomainSpec, continue_branch, predict_all, predict_mu,
                         regrade, weighted_spectrum)

LAMS = (1e-3, 1e-4, 1e-5)


def main():
    disk = DomainSpec.disk()
    coarse = Discretization.radial(disk, 4096, core=0.05)
    branch = continue_branch(coarse, (0.0, np.zeros(coarse.size)), lambda_min=min(LAMS) * (1 - 1e-6),
                             record_lambdas=LAMS)
    print(f"fold at lambda = {branch.fold[0]:.8f}")
    pred = predict_all(disk, Configuration(np.zeros((1, 2))))
    print(f"{'lambda':>8} {'u_max':>9} {'mu1':>10} {'predicted':>10} {'diff*log^2':>11}")
    for lam in LAMS:
        st = branch.recorded[f"lambda={lam:.12g}"]
        delta = 1.0 / np.sqrt(lam * np.exp(st.u_max))
        fine = Discretization.radial(disk, 4096, core=delta)
        u, _ = regrade(st.u, lam, coarse, fine, keep="lambda")
        mu = weighted_spectrum(fine, u, lam, 1)[0].mu
        mp = predict_mu(pred, 1, lam)
        print(f"{lam:8.0e} {u.max():9.4f} {mu:10.6f} {mp:10.6f} {abs(mu - mp) * np.log(lam) ** 2:11.4f}")


if __name__ == "__main__":
    main()
