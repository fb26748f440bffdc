"""Spectral lab for decay exponents of fractional MHD."""
from .exponents import BootstrapInput, closed_form_limit, run_bootstrap
from .spectral_core import (ContinuousMeasure, DiscreteMeasure, audit_smoothing_bounds,
                            weighted_norm_sq)
from .solenoidal import SolenoidalField, WaveGrid, random_solenoidal
from .mild_solver import MhdState, SolverParams, picard_solve, run_with_ledger, step_integrate
from .decay_lab import fit_loglog_slope, linear_decay_curve, nonlinear_decay_experiment

__version__ = "0.1.0"
