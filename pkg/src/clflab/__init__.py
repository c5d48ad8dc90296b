"""Lyapunov spectra, covariant Lyapunov vectors and their scalar multiplier fields."""
from .core import (ContractViolation, IntegrationError, SystemDefinition, metric_tensor, tangent_norm,
                   metric_lie_derivative, quadratic_form_norm, user_system, validate_jacobian)
from .systems import (HenonHeilesSpec, make_harmonic, make_henon_heiles, make_linear, make_rotation,
                      make_zero, linear_oracle, sample_energy_surface)
from .integrate import IntegratorConfig, TangentTrajectory, default_config, evolve, step_flow, step_tangent
from .lyapunov import (ClvSample, ClvSeries, DegenerateSpectrumWarning, LyapunovSpectrum, backward_spectrum,
                       benettin_spectrum, clv_exponent_check, ginelli_clv, opposition_error)
from .clf import (GaugeFunction, ScalarFieldSeries, clf_residual, gauge_transform, involutivity_residual,
                  le_integral_estimate, le_upper_bound, scalar_b_from_c, scalar_c_along, time_average)

__version__ = "0.1.0"
