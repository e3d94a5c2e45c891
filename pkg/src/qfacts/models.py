"""Ready-made models used throughout the demos and tests."""

import numpy as np

from qfacts.channels import NonDemolitionModel, build_nd_model
from qfacts.qcore import DensityMatrix, ProjectorFamily, diagonal_projectors, pure_state

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def qd2_model(p_left: float = 0.3) -> NonDemolitionModel:
    """Two-level dot read out by left/right scattering.

    Fact 0 scatters left with probability ``p_left``; fact 1 with
    ``1 - p_left``.
    """
    proj = diagonal_projectors(2, [[0], [1]])
    a, b = np.sqrt(p_left), np.sqrt(1 - p_left)
    return build_nd_model(proj, {"L": [a, b], "R": [b, a]})


def qd2_psi(weight0: float = 0.4) -> DensityMatrix:
    """Pure superposition with Born weights ``(weight0, 1 - weight0)``."""
    return pure_state([np.sqrt(weight0), np.sqrt(1 - weight0)])


def fact_state(projectors: ProjectorFamily, nu) -> DensityMatrix:
    """Normalized projector of fact ``nu``: a state supported on one fact."""
    p = projectors.projectors[projectors.labels.index(nu)]
    return DensityMatrix(p / np.real(np.trace(p)))


def random_nd_model(dim: int, n_outcomes: int, n_facts: int, rng: np.random.Generator,
                    unitary=None) -> NonDemolitionModel:
    """Random non-demolition model in a rotated basis.

    Facts get contiguous blocks of basis vectors (each at least one),
    amplitudes are random complex numbers normalized per fact.
    """
    from qfacts.qcore import random_unitary

    if not 1 <= n_facts <= dim:
        raise ValueError("need 1 <= n_facts <= dim")
    cuts = np.sort(rng.choice(np.arange(1, dim), size=n_facts - 1, replace=False))
    blocks = np.split(np.arange(dim), cuts)
    u = random_unitary(dim, rng) if unitary is None else unitary
    projs = []
    for b in blocks:
        v = u[:, b]
        projs.append(v @ v.conj().T)
    fam = ProjectorFamily(tuple(range(n_facts)), tuple(projs))
    probs = rng.dirichlet(np.ones(n_outcomes), size=n_facts).T
    phases = np.exp(2j * np.pi * rng.random(probs.shape))
    amps = np.sqrt(probs) * phases
    alphabet = tuple(f"x{i}" for i in range(n_outcomes))
    return build_nd_model(fam, amps, alphabet=alphabet)
