"""
Exact linear part, explicit coupling
====================================

The upper triangular test system y' = -L y with eigenvalues 1, 75 and 15
has no nonlinearity at all.  The matrix formulation integrates it exactly
for any step; the Schur-vector formulation treats only the diagonal
exactly and the strict upper part explicitly, so it converges at fourth
order; classical RK4 blows up until h is inside its stability interval.
"""

import numpy as np

from schurerk.integrate import integrate_fixed
from schurerk.problems import heat_quartic, triangular3

p = triangular3()
exact = p.exact(1.0)
print("h         ERK4HO5 M   ERK4HO5 V   RK4")
for k in range(0, 11, 2):
    h = 2.0**-k
    errs = [np.linalg.norm(integrate_fixed(p, m, h, f, keep="final").y_final - exact)
            for m, f in (("ERK4HO5", "matrix"), ("ERK4HO5", "vector"), ("RK4", "matrix"))]
    print(f"{h:<9.4g} " + "  ".join(f"{e:9.2e}" for e in errs))

# Order reduction on a nonlinear PDE: heat equation with a nonlocal quartic
# source, N = 49 interior points, error at t = 1.
p = heat_quartic(49)
exact = p.exact(1.0)
hs = [2.0**-k for k in range(2, 9)]
for name in ("ERK4CM", "ERK4K", "ERK4HO5"):
    errs = [np.linalg.norm(integrate_fixed(p, name, h, keep="final").y_final - exact) for h in hs]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    print(f"{name:8s} observed orders {np.round(orders, 2)}")
