import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from qfacts.channels import joint_spectral_projectors, nd_dynamics
from qfacts.inference import relative_entropy
from qfacts.models import random_nd_model
from qfacts.qcore import trace_norm, validate_density
from qfacts.trajectories import enumerate_protocols

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@st.composite
def distributions(draw, n=None):
    n = n or draw(st.integers(2, 5))
    w = draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n))
    w = np.array(w)
    return w / w.sum()


@given(distributions(n=3), distributions(n=3))
def test_relative_entropy_nonnegative(p, q):
    v = relative_entropy(p, q)
    assert v >= 0
    if np.max(np.abs(p - q)) > 1e-6:
        assert v > 0


@given(distributions())
def test_relative_entropy_zero_on_diagonal(p):
    assert relative_entropy(p, p) == 0.0


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 4))
def test_density_invariants(seed, dim):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = validate_density(a @ a.conj().T)
    assert abs(np.trace(rho.matrix) - 1) <= 1e-10
    assert np.linalg.eigvalsh(rho.matrix).min() >= -1e-10
    assert trace_norm(rho.matrix) >= abs(np.trace(rho.matrix)) - 1e-12


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_joint_spectral_round_trip(seed):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(2, 5))
    m = random_nd_model(dim, int(rng.integers(2, 4)), int(rng.integers(1, dim + 1)), rng)
    projs, probs = joint_spectral_projectors(m.kraus)
    assert probs.shape == m.cond_probs.shape
    for j in range(m.n_facts):
        i = int(np.argmin(np.abs(probs - m.cond_probs[:, [j]]).max(axis=0)))
        np.testing.assert_allclose(probs[:, i], m.cond_probs[:, j], atol=1e-9)
        np.testing.assert_allclose(projs.projectors[i], m.projectors.projectors[j], atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_protocol_measure_normalized(seed):
    rng = np.random.default_rng(seed)
    m = random_nd_model(3, 3, 2, rng)
    _, logp, _ = enumerate_protocols(nd_dynamics(m), np.eye(3) / 3, 5)
    assert abs(np.exp(logp).sum() - 1) <= 1e-10
