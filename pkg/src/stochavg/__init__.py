"""Discrete-time stochastic averaging and stochastic extremum seeking."""

from .averaging import (AverageField, GridTrajectory, SystemModel, Trajectory, embed_time,
                        estimate_average_field, integrate_continuous_average,
                        iterate_discrete_average, iterate_original)
from .metrics import (NEVER, AveragingExperiment, EnvelopeSpec, averaging_rate_study,
                      compute_residual, envelope_exceedance, exceedance_probability,
                      first_exit_time, sup_deviation)
from .numerics import ConvergenceError, ExplosionError
from .processes import (FiniteMarkov, IIDGaussian, JointProcess, SampledOU, TruncatedGaussian,
                        gaussian_sine_moment, make_process, truncated_noise_mass)

__version__ = "0.1.0"
