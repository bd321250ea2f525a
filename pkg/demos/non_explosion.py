"""
Non-explosion from a Lyapunov function
======================================

With phi(z) = 1 + |z|^2 and L phi <= C phi, the expectation of phi along
the path grows at most like phi(z0) e^(Ct), and Chebyshev bounds the
probability of leaving a large ball.
"""

import numpy as np

from degsde import sdesim
from degsde.models import builtin, validate

m = builtin("paper-ex1")
z0 = np.ones(3)
report = validate(m, R=3.0)
C = report.lyapunov_check["max_ratio"]
print(report.statement, f"; sampled max of L phi / phi = {C:.3f} (declared {m.C:g})")

radii = np.array([5.0, 6.0, 7.0, 8.0, 10.0, 13.0])
curve = sdesim.exit_prob_curve(m, z0, radii, 1.0, 2.0**-7, 20_000, seed=1)
bound = np.minimum(1.0, m.phi(z0[None])[0] * np.exp(C) / (1 + radii**2))
for R, p, se, b in zip(radii, curve.prob, curve.stderr, bound):
    print(f"R={R:5.1f}  P(exit by t=1) = {p:.4f} +- {se:.4f}   Chebyshev bound {b:.3f}")

ens = sdesim.euler_maruyama(m, z0, 2.0**-7, 1.0, 10_000, seed=2, record_every=16)
mon = sdesim.lyapunov_monitor(ens, m.phi, C)
print("E phi(Z_t) vs phi(z0) e^(Ct) violations:", mon.n_violations)
