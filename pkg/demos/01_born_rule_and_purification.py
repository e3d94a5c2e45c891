"""Repeated non-demolition measurement of a two-level dot.

A dot in a superposition of two facts is watched by scattering particles
left or right.  Each outcome leaves the fact weights unchanged on average but
drives every single trajectory towards one fact; the frequency of landing on
fact 0 is the Born weight 0.4.
"""

import numpy as np

from qfacts.channels import nd_dynamics
from qfacts.inference import born_rule_check, offdiagonal_decay, purification_analysis
from qfacts.models import qd2_model, qd2_psi
from qfacts.trajectories import sample_trajectory

model = qd2_model()
dyn = nd_dynamics(model)
psi = qd2_psi(0.4)

print("p(L|0) = %.2f, p(L|1) = %.2f" % (model.p("L", 0), model.p("L", 1)))
print("Born weights of the initial state:", model.projectors.weights(psi.matrix).round(3))

# One trajectory, with a state kept every 20 steps.
rec = sample_trajectory(dyn, psi, 200, seed=2024, store_states=True, stride=20)
print("\nfirst 40 outcomes:", "".join(rec.protocol[:40]))
rep = purification_analysis(rec, model)
for k, c in zip(rep.steps, rep.offdiag[(0, 1)]):
    print(f"  step {k:3d}  coherence ||P0 rho P1||_1 = {c:.2e}")
print("this trajectory settled on fact", rep.theta, "with final weights", rep.final_weights)

# Coherences shrink by the Bhattacharyya factor per step on average.
delta = model.bhattacharyya(0, 1)
dec = offdiagonal_decay(dyn, psi, model, [10, 50, 100], n_traj=2000, seed=7)
print(f"\ndelta_01 = {delta:.5f}")
for k in dec.steps:
    print(f"  k={k:3d}  mean coherence {dec.mean[k]:.3e}   closed form {dec.bound[k]:.3e}")

# Many trajectories: the purified fact follows the Born rule.
born = born_rule_check(dyn, psi, model, n_traj=10_000, length=200, seed=1)
lo, hi = born.intervals[0]
print(f"\nP(Theta = 0) = {born.freqs[0]:.4f}  (3-sigma Wilson interval [{lo:.4f}, {hi:.4f}])")
print("unresolved trajectories:", born.unresolved)
print("expected:", born.expected)
assert np.isclose(sum(born.expected.values()), 1.0)
