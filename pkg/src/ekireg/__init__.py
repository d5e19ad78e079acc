"""
ekireg: ensemble Kalman inversion as low-rank Tikhonov regularization.

Modules
-------
operators   linear maps, SPD operators, adjoint test
lowrank     anomaly, truncated-SVD and Nystrom factors
solvers     Tikhonov, direct / iterative / stochastic EKI
adaptive    adaptive EKI with discrepancy-principle stopping
tomo        Radon / Shepp-Logan / Ornstein-Uhlenbeck test bench
experiments sweeps, CSV logs, manifests and plot scripts
"""

__version__ = "0.1.0"

from .operators import (LinearMap, SpdOperator, WeightedNorm, adjoint_test,
                        AdjointUnavailableError, NotPSDError)
from .lowrank import (GaussianSampler, LowRankFactor, anomaly, anomaly_factor, svd_factor,
                      nystroem_factor, make_factor, approx_error, projection_error)
from .solvers import (InverseProblem, EkiState, tikhonov_solve, direct_eki, eki_step_sqrt,
                      eki_step_cov, stochastic_eki_run, estimate_rl_bound)
from .adaptive import (AdaptiveConfig, IterationRecord, AdaptiveResult, AdaptiveRunError,
                       adaptive_run, schedule, project_ball, discrepancy_stop)
from .tomo import (RadonGeometry, radon_operator, shepp_logan, ou_covariance,
                   make_noisy_data, tomography_problem, metrics)

__all__ = [name for name in dir() if not name.startswith("_")]
