"""Histories of plausible facts.

Cut a protocol into ``p`` windows of length ``r`` and label each window with
the fact whose outcome law its frequencies match within ``eps_r``.  For
non-demolition dynamics almost all mass sits on constant histories with Born
weights; with slow rotation the histories jump.
"""

import numpy as np

from qfacts.channels import CycleConfig, build_cycle_dynamics, nd_dynamics
from qfacts.jumps import default_epsilon, history_sets_probability
from qfacts.models import SIGMA_X, qd2_model, qd2_psi

model = qd2_model()
psi = qd2_psi()

rep = history_sets_probability(nd_dynamics(model), psi, 6, 3, epsilon=0.2)
print(f"exact enumeration, r=6, p=3, eps=0.2 ({rep.method})")
for h, w in rep.masses.items():
    print("  ", h, f"{w:.4f}")
print(f"  uncovered {rep.uncovered:.4f}")

for r in (50, 200):
    rep = history_sets_probability(nd_dynamics(model), psi, r, 4, method="montecarlo",
                                   budget=5000, seed=1)
    print(f"\nr={r}, eps_r = r^(-1/3) = {default_epsilon(r):.3f}: uncovered {rep.uncovered:.4f}")
    for h, w in rep.masses.items():
        print("  ", h, f"{w:.4f}")

cfg = CycleConfig(1e-3, 1.0, 100, np.pi / 4 * SIGMA_X, model)
rep = history_sets_probability(build_cycle_dynamics(cfg), psi, 100, 4, method="montecarlo",
                               budget=5000, seed=2)
print("\nwith slow rotation, windows aligned to bursts:")
for h, w in sorted(rep.masses.items(), key=lambda kv: -kv[1])[:6]:
    print("  ", h, f"{w:.4f}")
