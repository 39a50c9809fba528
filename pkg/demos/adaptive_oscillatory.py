"""
Adaptive steps without refactoring
==================================

With the Schur form of L computed once, a new step size only needs new
phi-function values of the diagonal, so embedded error control is cheap.
Step sizes are rounded onto a ladder of 2^(j/8), which makes them recur and
lets cached weights be reused.
"""

import numpy as np

from schurerk.integrate import StepControl, integrate_adaptive
from schurerk.problems import oscillatory

p = oscillatory(127)
for rtol in (1e-4, 1e-6, 1e-8):
    r = integrate_adaptive(p, "ERK43ZB", StepControl(rtol=rtol, atol=rtol), formulation="vector",
                           keep="final")
    st = r.stats
    err = np.max(np.abs(r.y_final - p.exact(p.t_end)))
    print(f"rtol={rtol:.0e}: {st.steps_accepted} accepted, {st.steps_rejected} rejected, "
          f"{st.weight_refresh_count} weight builds, error {err:.2e}, "
          f"Schur {1e3 * st.schur_time:.0f} ms, weights {1e3 * st.weights_time:.0f} ms, "
          f"stepping {1e3 * st.stepping_time:.0f} ms")
