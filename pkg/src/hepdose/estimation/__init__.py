"""Joint state/parameter estimation from dosing records.

Likelihood evaluation profiles the latent aPTT trajectory through an exact
LP projection; searches over kinetics run on Benders-style cuts over finite
candidate sets; scenario tables turn profiled posteriors into normalized
weights for downstream dose planning.
"""

from .benders import (BendersDiagnostics, BendersResult, benders_solve,
                      refined_mesh, roll_x_batch)
from .likelihood import (FeasCut, OptCut, ProfileResult, full_likelihood_lp,
                         log_likelihood_at, profile_loglik)
from .observations import (LOW_INFORMATION_COUNT, ObservationSeries,
                           default_noise_scale)
from .priors import UNIFORM_PRIOR, PriorSpec
from .reformulation import (Assignment, BigM, CheckReport, big_m_bounds,
                            check_assignment, decode_assignment,
                            encode_trajectory)
from .search import (DEFAULT_B_GRID, DEFAULT_K_MESH, EstimateConfig,
                     EstimateResult, Scenario, ScenarioTable, bracket_mesh,
                     log_posterior_at, mle_estimate, mle_grid,
                     scaled_posterior, scenario_table)

__all__ = [
    "Assignment", "BendersDiagnostics", "BendersResult", "BigM",
    "CheckReport", "DEFAULT_B_GRID", "DEFAULT_K_MESH", "EstimateConfig",
    "EstimateResult", "FeasCut", "LOW_INFORMATION_COUNT",
    "ObservationSeries", "OptCut", "PriorSpec", "ProfileResult", "Scenario",
    "ScenarioTable", "UNIFORM_PRIOR", "benders_solve", "big_m_bounds",
    "bracket_mesh", "check_assignment", "decode_assignment",
    "default_noise_scale", "encode_trajectory", "full_likelihood_lp",
    "log_likelihood_at", "log_posterior_at", "mle_estimate", "mle_grid",
    "profile_loglik", "refined_mesh", "roll_x_batch", "scaled_posterior",
    "scenario_table",
]
