"""CSL collapse of cosmological perturbations: one Fourier mode from inflation
through the radiation era, its power spectrum and the (r_c, lambda) exclusion map."""

__version__ = "0.1.0"

from .background import CosmologyParams, Era, MatchingData, PhysicalConstants, convert_units, load_constants
from .coupling import CslParams, gamma_of_lambda, lambda_of_gamma
from .exclusion import CellStatus, gamma_bounds, load_lab_overlay, sample_overlay, scan_grid
from .moments import IntegrationError, ModeSetup, integrate_moments, quadrature_solution
from .spectrum import (Regime, SpectrumPoint, collapse_R, correction_coefficient, fit_correction_index,
                       power_spectrum)
from .wavefunction import integrate_omega, perturbative_omega, run_ensemble

__all__ = [
    "CellStatus", "CosmologyParams", "CslParams", "Era", "IntegrationError", "MatchingData", "ModeSetup",
    "PhysicalConstants", "Regime", "SpectrumPoint", "collapse_R", "convert_units", "correction_coefficient",
    "fit_correction_index", "gamma_bounds", "gamma_of_lambda", "integrate_moments", "integrate_omega",
    "lambda_of_gamma", "load_constants", "load_lab_overlay", "perturbative_omega", "power_spectrum",
    "quadrature_solution", "run_ensemble", "sample_overlay", "scan_grid",
]
