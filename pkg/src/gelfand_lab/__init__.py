"""Numerical study of blow-up solutions of -Delta u = lambda e^u and their linearized spectra."""

from .errors import *  # noqa: F401,F403
from .green import DomainSpec, green, regular_part, robin
from .hamiltonian import Configuration, find_critical_point, hamiltonian_grad, hamiltonian_hess, hamiltonian_value
from .spectral import (assemble_h, circulant_report, eigen_h, predict_all, predict_d, predict_mu,
                       predict_mu_second_band)
from .pde import Discretization, continue_branch, newton_solve, regrade
from .eigen import weighted_spectrum
from .peaks import bubble_constants, locate_peaks, local_mass

__version__ = "0.1.0"
