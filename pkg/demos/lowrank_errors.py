"""How fast do the three covariance factors converge in J?

For C0 = diag(i^-2) the truncated SVD error is exactly lambda_{J+1}, the
Nystrom error decays at about the same order, and the ensemble anomaly error
decays only like J^{-1/2}, independently of the spectrum.

    python demos/lowrank_errors.py
"""

import numpy as np

from ekireg.lowrank import (GaussianSampler, anomaly_factor, approx_error, loglog_slope,
                            nystroem_factor, svd_factor)
from ekireg.operators import SpdOperator

n, Js, seeds = 512, [8, 16, 32, 64, 128], 10
c0 = SpdOperator.diagonal(np.arange(1, n + 1, dtype=float) ** -2.0)

errors = {"svd": [], "nystroem": [], "anomaly": []}
for J in Js:
    errors["svd"].append(approx_error(svd_factor(c0, J), c0))
    errors["nystroem"].append(np.mean([approx_error(nystroem_factor(c0, J, GaussianSampler(s)), c0)
                                       for s in range(seeds)]))
    errors["anomaly"].append(np.mean([approx_error(anomaly_factor(c0, J, GaussianSampler(s)), c0)
                                      for s in range(seeds)]))

print("      J " + "".join(f"{name:>12s}" for name in errors))
for i, J in enumerate(Js):
    print(f"{J:7d} " + "".join(f"{errors[name][i]:12.3e}" for name in errors))
print("  slope " + "".join(f"{loglog_slope(Js, errors[name]):12.3f}" for name in errors))
