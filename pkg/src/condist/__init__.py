"""Conditional distribution estimation from samples.

Raw clustering estimators (r-box, k-nearest-neighbor), a Lipschitz-
regular neural estimator trained against the k-NN targets through a
sparsified entropic transport objective, and an experiment harness that
verifies convergence rates and variance bounds on synthetic kernels
with analytic ground truth.
"""

__version__ = "0.1.0"
