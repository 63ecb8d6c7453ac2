"""Ridge regression as per-mode spectral shrinkage.

The closed-form ridge solution (X'X + gamma I)^-1 X'Y equals the OLS
solution filtered mode-by-mode with d_i / (d_i + gamma), where d_i are
the eigenvalues of X'X. This demo assembles both routes and prints the
deviation, then shows how the shrinkage profile moves with gamma --
exactly the shape of the relu-ridge filter used for adaptation.

Run with:  python3 demos/03_ridge_equivalence.py
"""

import numpy as np

from spectral_tta.ridge import (
    RegressionProblem,
    ridge_closed_form,
    spectral_ridge,
    verify_equivalence,
)

rng = np.random.default_rng(2)

x = rng.normal(size=(40, 5))
y = rng.normal(size=(40, 2))

print("relative deviation between the two solvers:")
for gamma in [0.01, 0.1, 1.0, 10.0]:
    prob = RegressionProblem(x=x, y=y, gamma=gamma)
    a = ridge_closed_form(prob)
    b = spectral_ridge(prob)
    dev = np.linalg.norm(a - b) / np.linalg.norm(a)
    print(f"  gamma = {gamma:6.2f}:  {dev:.3e}")

# --- shrinkage profile ------------------------------------------------------
d = np.linalg.svd(x, compute_uv=False) ** 2
print("\neigenvalues of X'X:", np.round(d, 1))
print("per-mode shrinkage d / (d + gamma):")
for gamma in [0.1, 1.0, 10.0, 100.0]:
    print(f"  gamma = {gamma:6.1f}:", np.round(d / (d + gamma), 3))

# Small eigenvalues get suppressed first; the dominant modes survive
# until gamma rivals them. A learnable per-mode gamma generalizes this
# scalar knob into one knob per principal direction.

# --- the batch verification report ------------------------------------------
report = verify_equivalence(trials=50, seed=0)
print(f"\n50-trial verification: passed = {report['passed']}, "
      f"max relative deviation = {report['max_relative_deviation']:.3e}")
