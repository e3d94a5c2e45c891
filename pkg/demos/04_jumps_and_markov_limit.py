"""Slowly rotating facts: bursts of measurements separated by free evolution.

Every cycle a burst of ``M`` measurements lasting ``lambda1`` pins the dot to
a fact; the free evolution for the rest of the period ``lambda2`` rotates it.
Reading the fact from each burst gives a jump trajectory, and the jumps
follow a Markov chain with transition probabilities
``Tr(P_nu U^+ P_nu' U P_nu)``.
"""

import numpy as np

from qfacts.channels import CycleConfig
from qfacts.jumps import markov_limit_comparison, run_cycles, theorem43_check
from qfacts.models import SIGMA_X, qd2_model, qd2_psi

model = qd2_model()
psi = qd2_psi()

omega = np.pi / 2
cfg = CycleConfig(lambda1=1e-3, lambda2=1.0, M=100, H_P=omega / 2 * SIGMA_X, nd_model=model)
jt, rec = run_cycles(cfg, psi, 40, seed=4)
print("estimated facts per cycle:", "".join(str(n) for n in jt.nu_hat))
print("smallest max weight after a burst: %.6f" % jt.max_weight.min())

t43 = theorem43_check(cfg, psi, 200, 0.05, seed=5, n_runs=4)
print(f"fraction of post-burst states 0.05-close to one fact: {t43.fraction:.4f}")

mc = markov_limit_comparison(cfg, psi, 600, seed=6, n_runs=4)
print("\nempirical transitions:\n", mc.empirical.round(4))
print("limit chain:\n", mc.theoretical.round(4))
print(f"{mc.n_transitions} transitions, largest deviation {mc.max_abs_deviation:.4f}")

print("\nshorter bursts purify less:")
for M in (1, 5, 20, 50):
    c = CycleConfig(1e-3, 1.0, M, 0.2 * SIGMA_X, model)
    print(f"  M={M:3d}  closeness fraction {theorem43_check(c, psi, 100, 0.05, seed=7, n_runs=8).fraction:.3f}")
