"""Convergence rate in the noise level under a source condition.

The exact solution satisfies a source condition of order mu.  Adaptive EKI
with the truncated-SVD factor and the discrepancy principle should then
converge like delta^{2 mu / (2 mu + 1)}.

    python demos/rate.py
"""

from ekireg.experiments import rate_experiment

deltas = [1e-1, 1e-2, 1e-3, 1e-4]
for mu in (0.25, 0.5):
    res = rate_experiment(mu, deltas, backend="svd")
    print(f"mu = {mu}: expected slope {res['expected']:.3f}, fitted {res['slope']:.3f}")
    for d, e in zip(res["deltas"], res["errors"]):
        print(f"   delta = {d:.0e}  error = {e:.4e}")
