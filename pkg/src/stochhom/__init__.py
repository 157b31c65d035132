"""Stochastic homogenization of convex subdifferential inclusions.

Random chess-board media, convex integrands with conjugates, the periodic
cell problem defining the homogenized law, Dirichlet solvers for the
oscillating and homogenized problems, and convergence experiments.
"""
from .cell import (CellProblemConfig, CorrectorSolution, Estimate, HomogenizedLaw,
                   MeanFluxReport, check_mean_flux_law, discrete_weyl_orthogonality,
                   estimate_phi0, estimate_psi0, potential_field, rve_realization,
                   solenoidal_field, solve_corrector, tabulate_law)
from .errors import (AliasingError, ConfigurationError, ConvergenceError,
                     GridTooSmallError, HullError, SeedMismatchError)
from .harness import (ConvergenceReport, divcurl_product_test, monotonicity_test,
                      oscillating_corrector, run_convergence, smooth_test_functions,
                      weak_error)
from .integrands import GrowthReport, Integrand, Kind, Material, transfer_growth
from .media import (ErgodicRecord, RandomMedium, RealizationField, ergodic_average,
                    expectation, fit_loglog_slope, sample_realization)
from .pde import (ProblemSpec, SolveResult, a_priori_bound, a_priori_terms,
                  dual_certificate, solve_homogenized, solve_oscillating)

__version__ = "0.1.0"
