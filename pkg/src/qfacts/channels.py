"""Measurement channels: Kraus families, non-demolition models and step dynamics.

Conventions
-----------
Superoperators act on row-major vectorized matrices, so that
``vec(A X B) = kron(A, B.T) @ vec(X)``.  The state-side map of an outcome is
``rho -> sum_a K_a rho K_a^+``; its dual (Heisenberg) map is
``X -> sum_a K_a^+ X K_a``.
"""

from __future__ import annotations

import functools
import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import optimize

from qfacts.errors import (
    AssumptionViolated,
    DegenerateFacts,
    DominanceViolated,
    InvalidConfig,
    NoFixedPoint,
    NonCommuting,
    NoReference,
    NotNormalized,
    PerturbationTooLarge,
    UnknownOutcome,
    ZeroAmplitude,
)
from qfacts.qcore import (
    DensityMatrix,
    ProjectorFamily,
    as_matrix,
    dagger,
    matrix_exponential_unitary,
    op_norm,
    trace_norm,
    validate_density,
)

COMPLETENESS_TOL = 1e-10
PROB_TOL = 1e-12
DISTINCT_TV = 1e-6
COMMUTE_TOL = 1e-8


def _check_alphabet(labels) -> tuple:
    labels = tuple(labels)
    if not labels:
        raise ValueError("outcome alphabet is empty")
    if len(set(labels)) != len(labels):
        raise ValueError(f"outcome labels are not distinct: {labels}")
    return labels


@dataclass(frozen=True, eq=False)
class KrausFamily:
    """Outcome-indexed completely positive maps given by Kraus operators.

    ``kraus[xi]`` is the tuple of Kraus operators of the map for outcome
    ``xi``.  With ``check=True`` the family must be trace preserving as a
    whole: ``sum_xi sum_a K^+ K = 1`` to within ``1e-10``.
    """

    alphabet: tuple
    kraus: Mapping
    check: bool = True
    _stack: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        alphabet = _check_alphabet(self.alphabet)
        ops = {}
        dim = None
        for xi in alphabet:
            if xi not in self.kraus:
                raise UnknownOutcome(f"no Kraus operators for outcome {xi!r}")
            lst = tuple(as_matrix(k) for k in self.kraus[xi])
            if not lst:
                raise ValueError(f"outcome {xi!r} has no Kraus operators")
            for k in lst:
                k.setflags(write=False)
                if dim is None:
                    dim = k.shape[0]
                elif k.shape[0] != dim:
                    raise ValueError("Kraus operators have mismatched dimensions")
            ops[xi] = lst
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "kraus", ops)
        if self.check:
            defect = op_norm(sum(self.effects().values()) - np.eye(dim))
            if defect > COMPLETENESS_TOL:
                raise NotNormalized(f"Kraus family is not trace preserving (defect {defect:.3g})")

    @property
    def dim(self) -> int:
        return self.kraus[self.alphabet[0]][0].shape[0]

    def ops(self, xi) -> tuple:
        try:
            return self.kraus[xi]
        except KeyError:
            raise UnknownOutcome(f"outcome {xi!r} not in alphabet {self.alphabet}") from None

    def effect(self, xi) -> np.ndarray:
        """Image of the identity under the dual map of ``xi``."""
        return sum(dagger(k) @ k for k in self.ops(xi))

    def effects(self) -> dict:
        return {xi: self.effect(xi) for xi in self.alphabet}

    def apply(self, xi, rho) -> tuple[np.ndarray, float]:
        return apply_outcome(self, xi, rho)

    def superop(self, xi) -> np.ndarray:
        return sum(np.kron(k, k.conj()) for k in self.ops(xi))

    def dual_superop(self, xi) -> np.ndarray:
        return sum(np.kron(dagger(k), k.T) for k in self.ops(xi))

    def total_superop(self) -> np.ndarray:
        return sum(self.superop(xi) for xi in self.alphabet)

    def stacked(self) -> np.ndarray:
        """Kraus operators as an array ``(n_outcomes, n_kraus, d, d)``, zero padded."""
        if "a" not in self._stack:
            n = max(len(self.kraus[xi]) for xi in self.alphabet)
            arr = np.zeros((len(self.alphabet), n, self.dim, self.dim), dtype=complex)
            for i, xi in enumerate(self.alphabet):
                for a, k in enumerate(self.kraus[xi]):
                    arr[i, a] = k
            arr.setflags(write=False)
            self._stack["a"] = arr
        return self._stack["a"]


def apply_outcome(family: KrausFamily, xi, rho) -> tuple[np.ndarray, float]:
    """Unnormalized image ``Phi_xi[rho]`` and its trace."""
    r = np.asarray(rho, dtype=complex)
    out = sum(k @ r @ dagger(k) for k in family.ops(xi))
    return out, float(np.real(np.trace(out)))


@dataclass(frozen=True, eq=False)
class NonDemolitionModel:
    """Kraus operators ``C_xi = sum_nu c_xi(nu) P_nu`` diagonal in the fact projectors.

    ``amplitudes[i, j]`` is ``c_xi(nu)`` for outcome ``alphabet[i]`` and fact
    ``projectors.labels[j]``; ``cond_probs`` holds ``|c|^2`` in the same layout.
    """

    projectors: ProjectorFamily
    alphabet: tuple
    amplitudes: np.ndarray
    cond_probs: np.ndarray
    kraus: KrausFamily

    @property
    def labels(self) -> tuple:
        return self.projectors.labels

    @property
    def dim(self) -> int:
        return self.projectors.dim

    @property
    def n_facts(self) -> int:
        return len(self.projectors)

    def fact_index(self, nu) -> int:
        return self.labels.index(nu)

    def outcome_index(self, xi) -> int:
        try:
            return self.alphabet.index(xi)
        except ValueError:
            raise UnknownOutcome(f"outcome {xi!r} not in alphabet {self.alphabet}") from None

    def p(self, xi, nu) -> float:
        return float(self.cond_probs[self.outcome_index(xi), self.fact_index(nu)])

    def distribution(self, nu) -> np.ndarray:
        """``p(.|nu)`` as an array over the alphabet."""
        return self.cond_probs[:, self.fact_index(nu)].copy()

    def bhattacharyya(self, nu, nu2) -> float:
        """``sum_xi |c_xi(nu)| |c_xi(nu2)|``: the per-step coherence decay factor."""
        a = np.abs(self.amplitudes)
        return float(np.sum(a[:, self.fact_index(nu)] * a[:, self.fact_index(nu2)]))

    def min_tv_gap(self) -> float:
        p = self.cond_probs
        gaps = [0.5 * np.sum(np.abs(p[:, i] - p[:, j]))
                for i, j in itertools.combinations(range(self.n_facts), 2)]
        return float(min(gaps)) if gaps else 1.0


def build_nd_model(projectors: ProjectorFamily, amplitudes, alphabet=None,
                   strict: bool = False) -> NonDemolitionModel:
    """Build and validate a non-demolition model.

    ``amplitudes`` is either a mapping ``{xi: [c_xi(nu) for nu in labels]}``
    (also accepting ``{(xi, nu): c}``), or a 2-D array ``(n_outcomes, n_facts)``
    together with ``alphabet``.
    """
    labels = projectors.labels
    if isinstance(amplitudes, Mapping):
        keys = list(amplitudes)
        if keys and isinstance(keys[0], tuple):
            xis = list(dict.fromkeys(k[0] for k in keys)) if alphabet is None else list(alphabet)
            table = np.array([[amplitudes[(xi, nu)] for nu in labels] for xi in xis], dtype=complex)
        else:
            xis = keys if alphabet is None else list(alphabet)
            table = np.array([list(amplitudes[xi]) for xi in xis], dtype=complex)
        alphabet = tuple(xis)
    else:
        if alphabet is None:
            raise ValueError("alphabet is required with an amplitude array")
        table = np.array(amplitudes, dtype=complex)
    alphabet = _check_alphabet(alphabet)
    if table.shape != (len(alphabet), len(labels)):
        raise ValueError(f"amplitude table has shape {table.shape}, "
                         f"expected {(len(alphabet), len(labels))}")
    probs = np.abs(table) ** 2
    for j, nu in enumerate(labels):
        s = probs[:, j].sum()
        if abs(s - 1.0) > PROB_TOL:
            raise NotNormalized(f"p(.|{nu!r}) sums to {s!r}, not 1")
    for i, j in itertools.combinations(range(len(labels)), 2):
        tv = 0.5 * np.sum(np.abs(probs[:, i] - probs[:, j]))
        if tv <= DISTINCT_TV:
            raise DegenerateFacts(f"facts {labels[i]!r} and {labels[j]!r} have the same "
                                  f"outcome distribution (TV {tv:.3g})")
    if strict and np.any(probs == 0):
        i, j = np.argwhere(probs == 0)[0]
        raise ZeroAmplitude(f"p({alphabet[i]!r}|{labels[j]!r}) = 0")
    kraus = {xi: (sum(table[i, j] * projectors.projectors[j] for j in range(len(labels))),)
             for i, xi in enumerate(alphabet)}
    table.setflags(write=False)
    probs.setflags(write=False)
    return NonDemolitionModel(projectors, alphabet, table, probs, KrausFamily(alphabet, kraus))


def check_map_commutation(family: KrausFamily) -> np.ndarray:
    """Pairwise commutator residuals of the dual maps.

    Entry ``[i, j]`` is the largest operator norm of
    ``(D_i D_j - D_j D_i)[|a><b|]`` over matrix units ``|a><b|``.
    """
    duals = [family.dual_superop(xi) for xi in family.alphabet]
    d = family.dim
    n = len(duals)
    res = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            c = duals[i] @ duals[j] - duals[j] @ duals[i]
            worst = max(op_norm(c[:, col].reshape(d, d)) for col in range(d * d))
            res[i, j] = res[j, i] = worst
    return res


def check_unital_images_commute(family: KrausFamily) -> float:
    """Largest ``||[E_xi, E_xi']||_op`` over pairs of effects ``E_xi = Phi_*xi[1]``."""
    eff = list(family.effects().values())
    worst = 0.0
    for a, b in itertools.combinations(eff, 2):
        worst = max(worst, op_norm(a @ b - b @ a))
    return worst


def joint_spectral_projectors(family: KrausFamily, tol: float = 1e-8):
    """Joint eigenprojectors of the commuting effects and the table ``p(xi|nu)``.

    Returns ``(ProjectorFamily, probs)`` with ``probs[i, j] = p(alphabet[i] | j)``.
    Facts are ordered lexicographically by their outcome distribution.
    Facts with identical distributions stay merged in a single projector.
    """
    resid = check_unital_images_commute(family)
    if resid > COMMUTE_TOL:
        raise NonCommuting(f"effects do not commute (residual {resid:.3g})")
    effects = [0.5 * (e + dagger(e)) for e in family.effects().values()]
    d = family.dim
    blocks = [np.eye(d, dtype=complex)]
    for e in effects:
        refined = []
        for v in blocks:
            sub = dagger(v) @ e @ v
            w, u = np.linalg.eigh(0.5 * (sub + dagger(sub)))
            start = 0
            for i in range(1, len(w) + 1):
                if i == len(w) or w[i] - w[i - 1] > tol:
                    refined.append(v @ u[:, start:i])
                    start = i
        blocks = refined
    projs = [v @ dagger(v) for v in blocks]
    ranks = [v.shape[1] for v in blocks]
    probs = np.array([[np.real(np.trace(p @ e)) / r for p, r in zip(projs, ranks)]
                      for e in effects])
    order = sorted(range(len(projs)), key=lambda j: tuple(np.round(probs[:, j], 9)))
    projs = [projs[j] for j in order]
    probs = probs[:, order]
    return ProjectorFamily(tuple(range(len(projs))), tuple(projs)), probs


def stationary_state(family: KrausFamily, eig_tol: float = 1e-9,
                     cauchy_tol: float = 1e-10) -> tuple[DensityMatrix, bool]:
    """Fixed point of the total state map and whether it is faithful.

    A one-dimensional fixed space is read off the eigenvector at eigenvalue 1.
    A degenerate fixed space is resolved by the ergodic average of the
    iterates applied to the maximally mixed state, which is basis independent.
    """
    s = family.total_superop()
    d = family.dim
    w, v = np.linalg.eig(s)
    near = np.flatnonzero(np.abs(w - 1.0) <= eig_tol)
    if near.size == 0:
        raise NoFixedPoint(f"no eigenvalue within {eig_tol} of 1 (closest {w[np.argmin(np.abs(w - 1))]})")
    if near.size == 1:
        m = v[:, near[0]].reshape(d, d)
        m = m / np.trace(m)
    else:
        x = (np.eye(d) / d).reshape(-1).astype(complex)
        mean = x.copy()
        power = s.copy()
        for _ in range(64):
            # average of the first 2n iterates from the first n
            nxt = 0.5 * (mean + power @ mean)
            done = np.max(np.abs(nxt - mean)) < cauchy_tol
            mean = nxt
            power = power @ power
            if done:
                break
        m = mean.reshape(d, d)
    rho = validate_density(0.5 * (m + dagger(m)))
    faithful = bool(np.linalg.eigvalsh(rho.matrix)[0] > 1e-10)
    return rho, faithful


@dataclass(frozen=True, eq=False)
class StepDynamics:
    """Per-step outcome-indexed maps ``Phi^(k)_xi``.

    ``step_map(k, prefix)`` returns the Kraus family used at step ``k``
    (1-based) given the earlier outcomes ``prefix = (xi_1, ..., xi_{k-1})``.
    Maps that ignore ``prefix`` should leave ``history_dependent`` false so
    that samplers may evolve many trajectories in lock step.

    ``unitary_norm(k)``, when set, is ``||H^(k)||_op`` for dynamics of the form
    ``Phi~_xi o exp(-i ad H^(k))``; it enables the analytic perturbation bound.
    """

    alphabet: tuple
    dim: int
    step_map: Callable
    reference: NonDemolitionModel | None = None
    history_dependent: bool = False
    unitary_norm: Callable | None = None
    period: int | None = None

    def family(self, k: int, prefix: Sequence = ()) -> KrausFamily:
        return self.step_map(k, tuple(prefix))

    def entry(self, k: int, xi, prefix: Sequence = ()) -> tuple:
        return self.family(k, prefix).ops(xi)


def nd_dynamics(model: NonDemolitionModel) -> StepDynamics:
    """Time-independent repetition of the non-demolition channel."""
    fam = model.kraus
    return StepDynamics(model.alphabet, model.dim, lambda k, prefix: fam, reference=model,
                        unitary_norm=lambda k: 0.0, period=1)


def kraus_dynamics(family: KrausFamily, reference: NonDemolitionModel | None = None) -> StepDynamics:
    """Time-independent repetition of an arbitrary Kraus family."""
    return StepDynamics(family.alphabet, family.dim, lambda k, prefix: family,
                        reference=reference, period=1)


def _premultiplied(model: NonDemolitionModel, u: np.ndarray) -> KrausFamily:
    return KrausFamily(model.alphabet,
                       {xi: tuple(k @ u for k in model.kraus.ops(xi)) for xi in model.alphabet})


def build_hamiltonian_perturbation(ref: NonDemolitionModel, h_sequence,
                                   d1: float | None = None) -> StepDynamics:
    """Non-demolition channel preceded at every step by ``exp(-i H^(k))``.

    ``h_sequence`` is one Hermitian matrix (used at every step), a list of
    matrices (cycled with period ``len``), or a callable ``k -> H``.  When the
    caller declares ``d1``, every ``||H^(k)||_op`` must be at most ``d1 / 2``;
    lists and single matrices are checked eagerly, callables on first use.
    """
    if callable(h_sequence):
        get_h = h_sequence
        period = None
    else:
        arr = np.asarray(h_sequence, dtype=complex)
        if arr.ndim == 2:
            arr = arr[None]
        hs = [as_matrix(h) for h in arr]
        period = len(hs)

        def get_h(k):
            return hs[(k - 1) % period]

    def checked_h(k):
        h = as_matrix(get_h(k))
        if d1 is not None and op_norm(h) > d1 / 2 + 1e-15:
            raise PerturbationTooLarge(
                f"||H^({k})||_op = {op_norm(h):.6g} exceeds d1/2 = {d1 / 2:.6g}")
        return h

    if period is not None:
        for k in range(1, period + 1):
            checked_h(k)

    @functools.lru_cache(maxsize=4096)
    def fam(k):
        return _premultiplied(ref, matrix_exponential_unitary(checked_h(k)))

    if period is not None:
        def step_map(k, prefix):
            return fam((k - 1) % period + 1)
    else:
        def step_map(k, prefix):
            return fam(k)

    return StepDynamics(ref.alphabet, ref.dim, step_map, reference=ref,
                        unitary_norm=lambda k: op_norm(checked_h(k)), period=period)


@dataclass(frozen=True)
class AssumptionConstants:
    """Constants of the near-non-demolition assumption.

    ``d1`` bounds the relative distance of the true step maps from the
    reference maps, ``d2`` the relative lower bound of the reference outcome
    probabilities, and ``d = d2 - d1``.  ``d1_method`` records how ``d1`` was
    obtained: ``"analytic"`` (twice the Hamiltonian norm, a rigorous bound)
    or ``"sampled"`` (a lower estimate; ``d1_upper`` then holds a rigorous
    but coarse upper bound).
    """

    d1: float
    d2: float
    per_xi_norms: dict
    d1_method: str = "analytic"
    d1_upper: float | None = None

    @property
    def d(self) -> float:
        return self.d2 - self.d1

    @property
    def d1_is_estimate(self) -> bool:
        return self.d1_method == "sampled"


def reference_norms(ref: NonDemolitionModel) -> tuple[dict, float]:
    """``||Phi~_xi||`` per outcome and the resulting ``d2``.

    For a completely positive map the induced trace norm equals the largest
    eigenvalue of its effect.
    """
    norms, ratios = {}, []
    for xi, e in ref.kraus.effects().items():
        w = np.linalg.eigvalsh(0.5 * (e + dagger(e)))
        norms[xi] = float(w[-1])
        ratios.append(float(w[0]) / float(w[-1]))
    return norms, min(ratios)


def _kraus_distance_upper(a_ops, b_ops) -> float:
    n = max(len(a_ops), len(b_ops))
    d = a_ops[0].shape[0]
    zero = np.zeros((d, d))
    total = 0.0
    for i in range(n):
        a = a_ops[i] if i < len(a_ops) else zero
        b = b_ops[i] if i < len(b_ops) else zero
        total += op_norm(a - b) * (op_norm(a) + op_norm(b))
    return total


def _random_pure(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    z /= np.linalg.norm(z)
    return np.outer(z, z.conj())


def assumption_constants(dyn: StepDynamics, ref: NonDemolitionModel | None = None,
                         mode: str = "analytic", n_steps: int | None = None,
                         n_samples: int = 256, seed: int = 0) -> AssumptionConstants:
    """Evaluate ``d1``, ``d2`` for ``dyn`` against its reference model.

    Steps ``1..n_steps`` are scanned; the default covers one period of a
    periodic dynamics and 64 steps otherwise.
    """
    ref = ref if ref is not None else dyn.reference
    if ref is None:
        raise NoReference("dynamics has no reference non-demolition model")
    norms, d2 = reference_norms(ref)
    if n_steps is None:
        n_steps = dyn.period if dyn.period else 64
    upper = None
    if mode == "analytic":
        if dyn.unitary_norm is None:
            raise ValueError("analytic mode needs Hamiltonian-perturbation dynamics")
        d1 = max(2.0 * dyn.unitary_norm(k) for k in range(1, n_steps + 1))
    elif mode == "sampled":
        rng = np.random.default_rng(seed)
        d1 = 0.0
        upper = 0.0
        probes = [_random_pure(ref.dim, rng) for _ in range(n_samples)]
        for k in range(1, n_steps + 1):
            prefix = tuple(rng.choice(len(dyn.alphabet), size=k - 1)) if dyn.history_dependent else ()
            prefix = tuple(dyn.alphabet[i] for i in prefix)
            fam = dyn.family(k, prefix)
            for xi in ref.alphabet:
                true_ops, ref_ops = fam.ops(xi), ref.kraus.ops(xi)
                for rho in probes:
                    img = sum(k_ @ rho @ dagger(k_) for k_ in true_ops)
                    img -= sum(k_ @ rho @ dagger(k_) for k_ in ref_ops)
                    d1 = max(d1, trace_norm(img) / norms[xi])
                upper = max(upper, _kraus_distance_upper(true_ops, ref_ops) / norms[xi])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if d1 >= d2:
        raise AssumptionViolated(f"d1 = {d1:.6g} is not below d2 = {d2:.6g}")
    return AssumptionConstants(float(d1), float(d2), norms, mode, upper)


def induced_trace_norm(superop: np.ndarray, n_restarts: int = 8, seed: int = 0) -> float:
    """Induced trace norm of a linear map on matrices.

    The maximum is attained on rank-one inputs ``|psi><phi|`` (the extreme
    points of the trace-norm unit ball); it is searched numerically from the
    matrix units plus random restarts.
    """
    dsq = superop.shape[0]
    d = int(round(np.sqrt(dsq)))
    if not np.any(superop):
        return 0.0

    def value(x):
        psi = x[:d] + 1j * x[d:2 * d]
        phi = x[2 * d:3 * d] + 1j * x[3 * d:]
        n = np.linalg.norm(psi) * np.linalg.norm(phi)
        if n == 0:
            return 0.0
        out = (superop @ np.outer(psi, phi.conj()).reshape(-1)).reshape(d, d)
        return trace_norm(out) / n

    best = 0.0
    starts = []
    for i in range(d):
        for j in range(d):
            x = np.zeros(4 * d)
            x[i] = 1.0
            x[2 * d + j] = 1.0
            starts.append(x)
    rng = np.random.default_rng(seed)
    starts += [rng.standard_normal(4 * d) for _ in range(n_restarts)]
    for x0 in starts:
        best = max(best, value(x0))
        res = optimize.minimize(lambda x: -value(x), x0, method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
        best = max(best, -res.fun)
    return float(best)


@dataclass(frozen=True, eq=False)
class MixtureChannel:
    """Maps ``upsilon_xi * id + Upsilon_xi`` as superoperator matrices."""

    alphabet: tuple
    upsilon: np.ndarray
    superops: tuple
    deviation_norms: np.ndarray
    d2: float


def build_mixture_channel(upsilon, deviations, norms=None, alphabet=None) -> MixtureChannel:
    """Mixture-of-identity reference maps and their ``d2`` constant.

    ``deviations`` are superoperator matrices ``Upsilon_xi`` summing to zero.
    ``norms`` may supply ``||Upsilon_xi||`` directly; otherwise they are
    computed with :func:`induced_trace_norm`.  The returned ``d2`` is the
    smallest per-outcome value ``1 - 2||Upsilon||/(upsilon + ||Upsilon||)``,
    the one that holds for every outcome simultaneously.
    """
    ups = np.asarray(upsilon, dtype=float)
    devs = tuple(np.asarray(u, dtype=complex) for u in deviations)
    if len(devs) != len(ups):
        raise ValueError("need one deviation map per outcome")
    if abs(ups.sum() - 1.0) > PROB_TOL or np.any(ups < 0):
        raise NotNormalized("upsilon is not a probability distribution")
    dsq = devs[0].shape[0]
    if np.max(np.abs(sum(devs))) > COMPLETENESS_TOL:
        raise ValueError("deviation maps do not sum to zero")
    nrm = (np.array([induced_trace_norm(u) for u in devs]) if norms is None
           else np.asarray(norms, dtype=float))
    bad = np.flatnonzero(ups <= nrm)
    if bad.size:
        raise DominanceViolated(f"upsilon <= ||Upsilon|| for outcome index {bad[0]}")
    d2 = float(np.min(1.0 - 2.0 * nrm / (ups + nrm)))
    eye = np.eye(dsq)
    maps = tuple(u * eye + dv for u, dv in zip(ups, devs))
    alphabet = tuple(range(len(ups))) if alphabet is None else _check_alphabet(alphabet)
    return MixtureChannel(alphabet, ups, maps, nrm, d2)


@dataclass(frozen=True, eq=False)
class CycleConfig:
    """Measurement bursts of ``M`` outcomes over ``lambda1`` every ``lambda2``."""

    lambda1: float
    lambda2: float
    M: int
    H_P: np.ndarray
    nd_model: NonDemolitionModel

    def __post_init__(self):
        if not (self.lambda1 >= 0):
            raise InvalidConfig("lambda1 must be non-negative")
        if not (self.lambda2 > self.lambda1):
            raise InvalidConfig("lambda2 must exceed lambda1")
        if int(self.M) != self.M or self.M < 1:
            raise InvalidConfig("M must be a positive integer")
        h = as_matrix(self.H_P)
        if h.shape[0] != self.nd_model.dim:
            raise InvalidConfig("H_P dimension does not match the model")
        if np.max(np.abs(h - dagger(h))) > 1e-8:
            raise InvalidConfig("H_P is not Hermitian")
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "H_P", h)

    @property
    def in_burst_dt(self) -> float:
        return self.lambda1 / (self.M - 1) if self.M > 1 else 0.0


def build_cycle_dynamics(cfg: CycleConfig) -> StepDynamics:
    """Step dynamics of the burst/free-evolution cycle.

    Step ``k`` is measurement ``j = (k-1) % M`` of its burst.  The free
    evolution that precedes a measurement is folded into its Kraus operators:
    none before the very first measurement, ``exp(-i (lambda2-lambda1) H_P)``
    before the first measurement of every later burst, and
    ``exp(-i dt H_P)`` with ``dt = lambda1/(M-1)`` inside a burst.  The state
    after step ``n*M`` is therefore the post-burst state of cycle ``n``.
    """
    model = cfg.nd_model
    gap = cfg.lambda2 - cfg.lambda1
    dt = cfg.in_burst_dt
    first = model.kraus
    start = _premultiplied(model, matrix_exponential_unitary(cfg.H_P, gap))
    inner = _premultiplied(model, matrix_exponential_unitary(cfg.H_P, dt))
    hnorm = op_norm(cfg.H_P)
    M = cfg.M

    def phase(k):
        if k == 1:
            return "first"
        return "start" if (k - 1) % M == 0 else "inner"

    fams = {"first": first, "start": start, "inner": inner}
    times = {"first": 0.0, "start": gap, "inner": dt}

    def step_map(k, prefix):
        return fams[phase(k)]

    return StepDynamics(model.alphabet, model.dim, step_map, reference=model,
                        unitary_norm=lambda k: times[phase(k)] * hnorm, period=None)


def warn_if_not_faithful(family: KrausFamily) -> bool:
    """Check the faithful-stationary-state hypothesis; warn when it fails."""
    _, faithful = stationary_state(family)
    if not faithful:
        warnings.warn("total channel has no faithful stationary state; the joint "
                      "spectral structure is not guaranteed", RuntimeWarning, stacklevel=2)
    return faithful
