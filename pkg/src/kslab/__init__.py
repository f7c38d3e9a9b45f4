"""kslab: a structure-preserving numerical laboratory for the fully parabolic
chemotaxis system u_t = div(grad(u*gamma(v))), tau*v_t - lap(v) + v = u with
signal-dependent motility gamma and zero-flux boundaries."""

from .analysis import (Classification, ClassifyThresholds, RunDiagnostics,
                       brezis_merle_check, brezis_merle_value, classify_run,
                       compute_w, energy_h1, energy_inequality_check,
                       flux_form_crosscheck, gamma_big, key_identity_residual,
                       key_inequality_check, lp_ladder, two_sided_ratio)
from .discretization import (Grid, LinOp, build_grid, field_to_csv, helmholtz_solve,
                             laplacian, read_snapshot, semigroup_apply, write_snapshot)
from .dynamics import (Constant, CosinePerturbation, GaussianBump, SeededNoise,
                       SimParams, State, Stepper, adapt_dt, build_initial, run,
                       step_imex)
from .errors import ConfigError, DomainError, FormatError, KslabError, NumericalError
from .harness import (RunConfig, apply_overrides, config_hash, parse_config,
                      parse_sweep, run_scenario, serialize_config, sweep,
                      threshold_scan)
from .motility import (Algebraic, AlgebraicLog, AssumptionReport, BoundedOscillatory,
                       Exponential, MotilityFamily, PeakedNonMonotonic,
                       StretchedExponential, algebraic_envelope, check_assumption,
                       gamma_deriv, gamma_eval)

__version__ = "0.1.0"
