"""Facts and histories from repeated non-demolition measurements.

Simulate quantum trajectories of indirect measurements, estimate the fact
revealed by a window of outcomes, and follow slow jumps between facts.
"""

from qfacts.channels import (
    CycleConfig,
    KrausFamily,
    NonDemolitionModel,
    StepDynamics,
    assumption_constants,
    build_cycle_dynamics,
    build_hamiltonian_perturbation,
    build_mixture_channel,
    build_nd_model,
    joint_spectral_projectors,
    nd_dynamics,
    stationary_state,
)
from qfacts.inference import (
    born_rule_check,
    error_probability,
    estimate_fact,
    lemma42_bounds,
    relative_entropy,
    sanov_certificate,
)
from qfacts.jumps import (
    history_sets_probability,
    markov_limit_comparison,
    run_cycles,
    theorem43_check,
)
from qfacts.models import qd2_model, qd2_psi
from qfacts.qcore import DensityMatrix, ProjectorFamily, validate_density
from qfacts.trajectories import empirical_frequencies, sample_batch, sample_trajectory

__version__ = "0.1.0"

__all__ = [
    "CycleConfig", "DensityMatrix", "KrausFamily", "NonDemolitionModel", "ProjectorFamily",
    "StepDynamics", "assumption_constants", "born_rule_check", "build_cycle_dynamics",
    "build_hamiltonian_perturbation", "build_mixture_channel", "build_nd_model",
    "empirical_frequencies", "error_probability", "estimate_fact", "history_sets_probability",
    "joint_spectral_projectors", "lemma42_bounds", "markov_limit_comparison", "nd_dynamics",
    "qd2_model", "qd2_psi", "relative_entropy", "run_cycles", "sample_batch",
    "sample_trajectory", "sanov_certificate", "stationary_state", "theorem43_check",
    "validate_density", "__version__",
]
