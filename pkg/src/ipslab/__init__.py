"""Numerical laboratory for stochastic interacting-particle systems:
trajectory simulation, nonparametric interaction-function estimation, and
coercivity/positive-definiteness diagnostics."""

from .core import (BasisFamily, Linear, PerturbedPower, PowerPotential,
                   SystemConfig, Tabulated, bspline_basis, custom_basis,
                   drift, eval_phi, eval_potential, nonradial_pwl_basis,
                   pairwise_force, potential_J, pwc_basis, pwl_basis)
from .coercivity import (CoercivityReport, GramPair, assemble_gram_pair,
                         coercivity_constant, coercivity_relation_check,
                         identifiability_margin, min_generalized_eig,
                         old_coercivity_constant, triple_decomposition)
from .errors import (AcceptanceRateError, BasisSupportError, BlowUpError,
                     ConfigError, IllConditionedGramError, IpslabError,
                     NumericalError, QuadratureError)
from .inference import (EstimatorResult, NormalEquations,
                        assemble_normal_equations, error_l2rho, estimate_phi,
                        log_likelihood_ratio, mean_log_likelihood,
                        solve_regularized)
from .kernels import (ComparisonBoundResult, GaussianDistanceDensity,
                      GramTestResult, KernelHandle, comparison_bound_check,
                      gamma_representation_check, gaussian_cloud,
                      gaussian_pair_kernel, gaussian_pair_kernel_series,
                      gaussian_q_density, gram_nd_test, gram_pd_test,
                      inner_product_kernel, kernel_quadrature_form,
                      make_gaussian_pair_kernel, nd_kernel_library,
                      nd_potential, power_exponential_kernel, radial_pointwise,
                      scan_power_kernel_violation, uniform_cloud)
from .measures import (EmpiricalDistanceMeasure, empirical_rho, l2_inner,
                       measure_to_csv, pairwise_distances, sphere_moment,
                       sphere_moment_exact)
from .simulate import (ExchangeableGaussian, ExplicitSamples, IIDGaussian,
                       McmcParams, PairSampleSet, PairTrajectories,
                       StationaryPairLift, TrajectoryEnsemble, ensemble_to_csv,
                       lambda_of_t, load_ensemble, pair_drift,
                       pair_samples_to_csv, sample_gaussian_pairs,
                       sample_linear_exact, sample_stationary_pair,
                       save_ensemble, simulate_em, simulate_pair_system)

__version__ = "0.1.0"
