"""Size and material of a disk from multi-frequency data.

Once the disk is located, each SFR column is a multiple tau_n of a known
sensor vector.  Fitting alpha^2 (k_n - 1)/(k_n + 1) to the tau_n over 100
harmonics separates the radius alpha, the conductivity k and the
permittivity eps.
"""

import numpy as np

from electrolocation import FishSolver, TargetSpec, default_fish, fit_disk, measure
from electrolocation.characterization import estimate_tau_disk

fish = default_fish()
solver = FishSolver.build(fish, 256)
z = 1.5 * np.array([np.cos(np.pi / 3), np.sin(np.pi / 3)])

print(" alpha    k   eps |  alpha_est   k_est  eps_est")
for alpha, k, eps in ((0.05, 5, 1), (0.05, 4, 1), (0.05, 5, 2), (0.06, 5, 1), (0.04, 3, 2)):
    t = TargetSpec.disk(z, alpha, k, eps)
    A = measure(solver, t, t.spectrum(range(1, 101))).sfr()
    res = fit_disk(estimate_tau_disk(A, z, fish, solver), init=(0.01, 1.0, 1.0))
    print(f"{alpha:6.2f} {k:4d} {eps:5d} | {res.alpha:9.4f} {res.k:7.3f} {res.eps:8.3f}")
