"""Recovering facts from the measurement maps alone.

Given only the Kraus operators of a non-demolition measurement in an
arbitrary basis, the joint eigenprojectors of the effects are the facts and
their eigenvalues are the outcome laws.
"""

import numpy as np

from qfacts.channels import (
    check_map_commutation,
    joint_spectral_projectors,
    stationary_state,
)
from qfacts.models import random_nd_model

rng = np.random.default_rng(3)
model = random_nd_model(dim=5, n_outcomes=3, n_facts=3, rng=rng)
print("fact ranks:", model.projectors.ranks())
print("outcome laws p(xi|nu) (columns are facts):\n", model.cond_probs.round(4))
print("largest commutator of the step maps: %.1e" % check_map_commutation(model.kraus).max())

projs, probs = joint_spectral_projectors(model.kraus)
print("\nrecovered ranks:", projs.ranks())
print("recovered outcome laws:\n", probs.round(4))

rho, faithful = stationary_state(model.kraus)
print("\nstationary state eigenvalues:", np.linalg.eigvalsh(rho.matrix).round(4),
      "faithful" if faithful else "not faithful")
