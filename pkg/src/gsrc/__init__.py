"""Reservoir-computing forecasts of chaotic flows, gated by a generalized-synchronization test."""

from .drivers import (DriverSystem, Standardizer, Trajectory, generate, get_system, integrate_rk4, lorenz63,
                      lorenz63_vector_field, lorenz96, lorenz96_vector_field, lyapunov_spectrum_ode, standardize)
from .errors import (ConvergenceError, DivergenceError, GSRCError, PrerequisiteError, SingularSystemError,
                     ValidationError)
from .evaluation import (ForecastMetrics, SpectrumMatchReport, lyapunov_spectrum_rc, mean_valid_time, rc_jacobian,
                         spectrum_match, valid_time)
from .gs import GSReport, auxiliary_test, estimate_conditional_le, gs_region_scan
from .lyapunov import LyapunovSpectrum
from .reservoir import (Reservoir, ReservoirParams, build_adjacency, build_input_matrix, drive,
                        estimate_spectral_radius, forecast, reservoir_vector_field)
from .training import FeatureSpec, Readout, features, harvest, ridge_fit, train

__version__ = "0.1.0"
