"""Relative-entropy fact estimation, error probabilities and purification.

The estimator scores each candidate fact by the relative entropy of the
windowed empirical distribution *with respect to* that fact's outcome
distribution, ``I_{p_nu}(f) = sum f ln(f / p_nu)``, and picks the smallest
score.  Ties go to the earliest fact label.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import binomtest

from qfacts.channels import AssumptionConstants, NonDemolitionModel, StepDynamics
from qfacts.errors import (
    DegenerateD,
    FactsUnidentifiable,
    NeighborhoodsOverlap,
    NoReference,
    NoStates,
    TooLarge,
)
from qfacts.qcore import trace_norms
from qfacts.rng import check_seed, stream_generator
from qfacts.trajectories import (
    ENUM_BUDGET,
    FrequencyTable,
    TrajectoryRecord,
    _as_state,
    enumerate_levels,
    enumerate_protocols,
    sample_batch,
)

TIE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class OutcomeDistribution:
    alphabet: tuple
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (len(self.alphabet),):
            raise ValueError("one probability per outcome")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("not a probability distribution")
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        object.__setattr__(self, "probs", p)

    def __getitem__(self, xi) -> float:
        return float(self.probs[self.alphabet.index(xi)])


def _probs(p) -> np.ndarray:
    if isinstance(p, OutcomeDistribution):
        return p.probs
    if isinstance(p, Mapping):
        return np.array([float(v) for v in p.values()])
    return np.asarray(p, dtype=float)


def relative_entropy(p, q) -> float:
    """``sum p ln(p/q)`` with ``0 ln(0/q) = 0`` and ``+inf`` when ``p`` is not dominated by ``q``."""
    p, q = _probs(p), _probs(q)
    if p.shape != q.shape:
        raise ValueError("distributions live on different alphabets")
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return float(max(0.0, np.sum(p[mask] * np.log(p[mask] / q[mask]))))


def entropy_scores(freqs: np.ndarray, cond_probs: np.ndarray) -> np.ndarray:
    """Scores ``I_{p_nu}(f)`` for rows of ``freqs`` (``(..., n_outcomes)``) against every fact.

    ``cond_probs`` is ``(n_outcomes, n_facts)``; the result is ``(..., n_facts)``.
    """
    f = np.asarray(freqs, dtype=float)[..., :, None]
    q = np.asarray(cond_probs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(f > 0, f * (np.log(f) - np.log(q)), 0.0)
    terms = np.where((f > 0) & (q <= 0), np.inf, terms)
    return np.maximum(terms.sum(axis=-2), 0.0)


def argmin_facts(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lowest-index minimizer per row and whether another fact ties within ``1e-12``."""
    best = scores.min(axis=-1)
    if np.any(np.isinf(best)):
        raise FactsUnidentifiable("every fact has infinite relative entropy")
    near = scores <= best[..., None] + TIE_TOL
    return near.argmax(axis=-1), near.sum(axis=-1) > 1


@dataclass(frozen=True)
class EstimatorResult:
    nu_hat: object
    scores: dict
    tie: bool


def estimate_fact(freq, model: NonDemolitionModel) -> EstimatorResult:
    """Fact minimizing ``I_{p_nu}`` of the empirical distribution.

    ``freq`` is a :class:`FrequencyTable` or an array of frequencies in the
    model's alphabet order.
    """
    f = freq.as_array(model.alphabet) if isinstance(freq, FrequencyTable) else np.asarray(freq, float)
    scores = entropy_scores(f, model.cond_probs)
    idx, tie = argmin_facts(scores)
    return EstimatorResult(model.labels[int(idx)],
                           {nu: float(s) for nu, s in zip(model.labels, scores)}, bool(tie))


def estimate_windows(outcomes: np.ndarray, model: NonDemolitionModel, l: int, k: int):
    """Vectorized estimator over the window ``(l, k]`` of each row of ``outcomes``."""
    win = np.asarray(outcomes)[..., l:k]
    counts = np.stack([(win == i).sum(axis=-1) for i in range(len(model.alphabet))], axis=-1)
    return argmin_facts(entropy_scores(counts / (k - l), model.cond_probs))


def kappa(model: NonDemolitionModel) -> float:
    """Smallest sup-norm gap ``max_xi |p(xi|nu) - p(xi|nu')|`` between two facts."""
    p = model.cond_probs
    gaps = [np.max(np.abs(p[:, i] - p[:, j]))
            for i, j in itertools.combinations(range(model.n_facts), 2)]
    return float(min(gaps)) if gaps else math.inf


def level_sets_disjoint(model: NonDemolitionModel, eps: float) -> bool:
    """True when no frequency vector lies within ``eps`` (sup norm) of two facts."""
    return eps < kappa(model) / 2


@dataclass(frozen=True)
class ErrorProbabilityReport:
    """Misassignment probabilities ``eps^(k,k+r)(nu)`` per fact."""

    k: int
    r: int
    eps: dict
    method: str
    mc_stderr: dict | None = None
    n_samples: int | None = None
    total_stderr: float | None = None
    bound: dict | None = None

    @property
    def total(self) -> float:
        return float(sum(self.eps.values()))


def _misassignment(states: np.ndarray, proj: np.ndarray, nu_idx: np.ndarray) -> np.ndarray:
    """``Tr((1 - P_nu) rho)`` with ``nu`` chosen per row."""
    w = np.real(np.einsum("fij,nji->nf", proj, states))
    return 1.0 - w[np.arange(len(nu_idx)), nu_idx]


def error_probability(dyn: StepDynamics, rho0, k: int, r: int, method: str = "exact",
                      n_samples: int = 100_000, seed: int | None = None,
                      model: NonDemolitionModel | None = None) -> ErrorProbabilityReport:
    """Probability that the window estimator disagrees with a direct fact readout.

    For each fact ``nu`` this sums ``Tr((1 - P_nu) rho^(k+r)) mu(xi)`` over
    protocols whose window ``(k, k+r]`` is estimated as ``nu``.  ``"exact"``
    enumerates every protocol of length ``k + r``; ``"montecarlo"`` averages
    over sampled trajectories and reports standard errors.
    """
    model = model if model is not None else dyn.reference
    if model is None:
        raise NoReference("error probability needs a reference model")
    if r < 1 or k < 0:
        raise ValueError("need k >= 0 and r >= 1")
    proj = model.projectors.stack()
    nf = model.n_facts
    if method == "exact":
        if len(dyn.alphabet) ** (k + r) > ENUM_BUDGET:
            raise TooLarge(f"{len(dyn.alphabet)}^{k + r} protocols exceed the budget")
        outcomes, logp, states = enumerate_protocols(dyn, rho0, k + r)
        mu = np.exp(logp)
        nu_idx, _ = estimate_windows(outcomes, model, k, k + r)
        miss = _misassignment(states, proj, nu_idx) * mu
        eps = {model.labels[j]: float(np.clip(miss[nu_idx == j].sum(), 0.0, 1.0)) for j in range(nf)}
        return ErrorProbabilityReport(k, r, eps, "exact")
    if method in ("montecarlo", "mc"):
        if seed is None:
            raise ValueError("Monte-Carlo mode needs a seed")
        batch = sample_batch(dyn, rho0, k + r, check_seed(seed), n_traj=n_samples,
                             record_steps=[k + r])
        nu_idx, _ = estimate_windows(batch.outcomes, model, k, k + r)
        miss = _misassignment(batch.states[k + r], proj, nu_idx)
        eps, se = {}, {}
        for j in range(nf):
            x = np.where(nu_idx == j, miss, 0.0)
            eps[model.labels[j]] = float(x.mean())
            se[model.labels[j]] = float(x.std(ddof=1) / math.sqrt(n_samples))
        total_se = float(miss.std(ddof=1) / math.sqrt(n_samples))
        return ErrorProbabilityReport(k, r, eps, "montecarlo", se, n_samples, total_se)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class LemmaBounds:
    """Right-hand sides of the four estimation-fidelity bounds.

    ``nd_mass`` and ``nd_error`` bound the non-demolition dynamics;
    ``mass`` and ``error`` add the perturbation term ``d1 d^(-r-1) / (1/d - 1)``.
    """

    nd_mass: float
    mass: float
    nd_error: float
    error: float
    sanov_term: float
    perturbation_term: float


def perturbation_term(d1: float, d: float, r: int) -> float:
    if d1 == 0:
        return 0.0
    if not 0 < d < 1:
        raise DegenerateD(f"perturbation term undefined for d = {d!r} with d1 = {d1!r}")
    return d1 * d ** (-r - 1) / (1.0 / d - 1.0)


def lemma42_bounds(constants: AssumptionConstants, C: float, a: float, k: int, r: int) -> LemmaBounds:
    """Evaluate the bounds for window length ``r``; they hold uniformly in ``k``."""
    if not 0 < a < 1:
        raise ValueError("a must lie in (0, 1)")
    if C <= 0:
        raise ValueError("C must be positive")
    s = C * a ** r
    p = perturbation_term(constants.d1, constants.d, r)
    return LemmaBounds(2 * s, 2 * s + p, s, s + p, s, p)


def _binary_kl(x: float, y: float) -> float:
    out = 0.0
    for a, b in ((x, y), (1 - x, 1 - y)):
        if a > 0:
            out += a * math.log(a / b)
    return out


def rate_outside_ball(p: np.ndarray, radius: float) -> float:
    """``inf {I_p(q) : TV(q, p) >= radius}``.

    On the sphere ``TV = radius`` the optimum moves mass ``radius`` into some
    outcome set ``S``; by the log-sum inequality the cost is the binary
    relative entropy ``kl(p(S) + radius || p(S))``, minimized over ``S``.
    """
    n = len(p)
    best = math.inf
    for size in range(1, n):
        for s in itertools.combinations(range(n), size):
            ps = float(sum(p[i] for i in s))
            if ps + radius <= 1.0 + 1e-15 and ps > 0:
                best = min(best, _binary_kl(min(ps + radius, 1.0), ps))
    return best


@dataclass(frozen=True, eq=False)
class SanovFit:
    nu: object
    r_grid: np.ndarray
    exceedance: np.ndarray
    hits: np.ndarray
    fit_mask: np.ndarray
    C: float | None
    a: float | None
    rate: float | None
    rate_se: float | None
    target_rate: float
    passed: bool


@dataclass(frozen=True, eq=False)
class SanovCertificate:
    """Empirical large-deviation decay of the window frequencies per fact."""

    radius: float
    fits: dict
    min_pairwise_entropy: float
    n_samples: int

    @property
    def C(self) -> float:
        return max(f.C for f in self.fits.values() if f.C is not None)

    @property
    def a(self) -> float:
        return max(f.a for f in self.fits.values() if f.a is not None)

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.fits.values())


def _fit_decay(r, exceed, hits, n):
    mask = (exceed > 0) & (exceed <= 0.5) & (hits >= 5)
    if mask.sum() < 2:
        return mask, None, None, None, None
    x = r[mask].astype(float)
    y = np.log(exceed[mask])
    sd = np.sqrt((1 - exceed[mask]) / hits[mask])
    coef, cov = np.polyfit(x, y, 1, w=1 / sd, cov="unscaled") if mask.sum() > 2 else (
        np.polyfit(x, y, 1, w=1 / sd), None)
    slope, icpt = coef
    if cov is None:
        se = float(math.hypot(sd[0], sd[1]) / abs(x[1] - x[0]))
    else:
        se = float(math.sqrt(cov[0, 0]))
    return mask, float(math.exp(icpt)), float(math.exp(slope)), float(-slope), se


def sanov_certificate(model: NonDemolitionModel, nu=None, r_grid=(1, 5, 10, 20, 40, 80),
                      n_samples: int = 100_000, seed: int = 0,
                      radius: float | None = None) -> SanovCertificate:
    """Estimate ``P(TV(f^(r), p_nu) >= radius | nu)`` on a grid of ``r`` and fit ``C a^r``.

    Samples are i.i.d. draws from ``p_nu``.  The fit uses grid points whose
    exceedance lies in ``(0, 0.5]`` with at least five hits.  A fact passes
    when the fitted rate is at least half the relative-entropy cost of
    leaving the ball, minus two standard errors.  The default radius is a
    third of the smallest pairwise total-variation gap.
    """
    kappa_tv = model.min_tv_gap()
    radius = kappa_tv / 3 if radius is None else float(radius)
    if 2 * radius >= kappa_tv:
        raise NeighborhoodsOverlap(f"radius {radius} does not separate facts (TV gap {kappa_tv})")
    facts = model.labels if nu is None else (nu,)
    r_grid = np.asarray(sorted(set(int(x) for x in r_grid)))
    fits = {}
    for nu_ in facts:
        j = model.fact_index(nu_)
        p = model.cond_probs[:, j]
        gen = stream_generator(seed, j)
        exceed, hits = [], []
        for r in r_grid:
            counts = gen.multinomial(r, p, size=n_samples)
            tv = 0.5 * np.abs(counts / r - p).sum(axis=1)
            h = int(np.count_nonzero(tv >= radius - 1e-12))
            hits.append(h)
            exceed.append(h / n_samples)
        exceed, hits = np.array(exceed), np.array(hits)
        mask, C, a, rate, se = _fit_decay(r_grid, exceed, hits, n_samples)
        target = rate_outside_ball(p, radius)
        passed = rate is not None and a < 1 and rate >= target / 2 - 2 * se
        fits[nu_] = SanovFit(nu_, r_grid, exceed, hits, mask, C, a, rate, se, target, bool(passed))
    ents = [relative_entropy(model.cond_probs[:, j], model.cond_probs[:, i])
            for i in range(model.n_facts) for j in range(model.n_facts) if i != j]
    return SanovCertificate(radius, fits, float(min(ents)) if ents else math.inf, n_samples)


@dataclass(frozen=True, eq=False)
class DeFinettiDecomposition:
    """Mixture of i.i.d. outcome laws, one per fact, with Born weights."""

    alphabet: tuple
    weights: dict
    components: dict

    def log_probability(self, protocol: Sequence) -> float:
        idx = [self.alphabet.index(x) for x in protocol]
        total = 0.0
        for nu, w in self.weights.items():
            total += w * math.prod(self.components[nu].probs[i] for i in idx)
        return math.log(total) if total > 0 else -math.inf


def definetti_decompose(model: NonDemolitionModel, rho0) -> DeFinettiDecomposition:
    rho = _as_state(rho0)
    w = model.projectors.weights(rho)
    weights = {nu: float(x) for nu, x in zip(model.labels, w)}
    comps = {nu: OutcomeDistribution(model.alphabet, model.cond_probs[:, j].copy())
             for j, nu in enumerate(model.labels)}
    return DeFinettiDecomposition(model.alphabet, weights, comps)


def definetti_residual(model: NonDemolitionModel, rho0, k_max: int, dyn: StepDynamics | None = None) -> float:
    """Largest gap between the mixture and the exact protocol measure up to length ``k_max``."""
    from qfacts.channels import nd_dynamics

    dyn = nd_dynamics(model) if dyn is None else dyn
    dec = definetti_decompose(model, rho0)
    w = np.array([dec.weights[nu] for nu in model.labels])
    worst = 0.0
    for j, outcomes, logp, _ in enumerate_levels(dyn, rho0, k_max):
        if j == 0:
            continue
        comp = np.prod(model.cond_probs[outcomes], axis=1)  # (P, n_facts)
        worst = max(worst, float(np.max(np.abs(comp @ w - np.exp(logp)))))
    return worst


@dataclass(frozen=True, eq=False)
class PurificationReport:
    """Coherence decay and fact assignment along one trajectory.

    ``offdiag[(nu, nu2)]`` holds trace norms of ``P_nu rho P_nu2`` at
    ``steps``; ``theta`` is the fact carrying at least ``threshold`` of the
    final weight, or ``None`` when unresolved.
    """

    steps: np.ndarray
    offdiag: dict
    theta: object
    final_weights: dict
    final_distance: float | None
    distances: np.ndarray | None
    delta: dict


def assign_theta(weights: np.ndarray, threshold: float = 0.99) -> np.ndarray:
    """Index of the dominant fact per row, or ``-1`` when below ``threshold``."""
    best = weights.argmax(axis=-1)
    top = np.take_along_axis(weights, best[..., None], axis=-1)[..., 0]
    return np.where(top >= threshold, best, -1)


def projected_initial(model: NonDemolitionModel, rho0, j: int) -> np.ndarray | None:
    p = model.projectors.projectors[j]
    r = _as_state(rho0)
    blk = p @ r @ p
    tr = np.real(np.trace(blk))
    return blk / tr if tr > 1e-14 else None


def purification_analysis(record: TrajectoryRecord, model: NonDemolitionModel,
                          threshold: float = 0.99) -> PurificationReport:
    if not record.states:
        raise NoStates("trajectory carries no states; sample with store_states or record_steps")
    steps = np.asarray(record.state_steps)
    states = np.stack([s.matrix for s in record.states])
    proj = model.projectors.stack()
    offdiag = {}
    for i, j in itertools.combinations(range(model.n_facts), 2):
        blocks = proj[i][None] @ states @ proj[j][None]
        offdiag[(model.labels[i], model.labels[j])] = trace_norms(blocks)
    final_w = np.real(np.einsum("fij,ji->f", proj, states[-1]))
    th = int(assign_theta(final_w, threshold))
    theta = model.labels[th] if th >= 0 else None
    distances = final = None
    if theta is not None and steps[0] == 0:
        target = projected_initial(model, states[0], th)
        if target is not None:
            distances = trace_norms(states - target[None])
            final = float(distances[-1])
    delta = {(model.labels[i], model.labels[j]): model.bhattacharyya(model.labels[i], model.labels[j])
             for i, j in itertools.combinations(range(model.n_facts), 2)}
    return PurificationReport(steps, offdiag, theta,
                              {nu: float(x) for nu, x in zip(model.labels, final_w)},
                              final, distances, delta)


@dataclass(frozen=True)
class DecayReport:
    """Sample means of coherence norms against their closed-form bound."""

    steps: tuple
    mean: dict
    stderr: dict
    bound: dict
    n_traj: int


def offdiagonal_decay(dyn: StepDynamics, rho0, model: NonDemolitionModel, steps: Sequence[int],
                      n_traj: int, seed: int, pair=None) -> DecayReport:
    """Mean of ``||P_nu rho^(k) P_nu2||_1`` at each ``k`` versus ``||P_nu rho0 P_nu2||_1 delta^k``."""
    steps = tuple(sorted(int(s) for s in steps))
    i, j = (0, 1) if pair is None else (model.fact_index(pair[0]), model.fact_index(pair[1]))
    p, q = model.projectors.projectors[i], model.projectors.projectors[j]
    batch = sample_batch(dyn, rho0, steps[-1], seed, n_traj=n_traj, record_steps=steps)
    r0 = _as_state(rho0)
    start = float(trace_norms((p @ r0 @ q)[None])[0])
    delta = model.bhattacharyya(model.labels[i], model.labels[j])
    mean, se, bound = {}, {}, {}
    for s in steps:
        norms = trace_norms(p[None] @ batch.states[s] @ q[None])
        mean[s] = float(norms.mean())
        se[s] = float(norms.std(ddof=1) / math.sqrt(n_traj)) if n_traj > 1 else math.nan
        bound[s] = start * delta ** s
    return DecayReport(steps, mean, se, bound, n_traj)


@dataclass(frozen=True)
class BornRuleReport:
    n_traj: int
    length: int
    counts: dict
    freqs: dict
    intervals: dict
    expected: dict
    unresolved: int

    @property
    def unresolved_fraction(self) -> float:
        return self.unresolved / self.n_traj if self.n_traj else 0.0


def born_rule_check(dyn: StepDynamics, rho0, model: NonDemolitionModel, n_traj: int, length: int,
                    seed: int, threshold: float = 0.99, confidence: float = 0.9973) -> BornRuleReport:
    """Empirical distribution of the purified fact against ``Tr(P_nu rho0)``.

    Intervals are Wilson score intervals at ``confidence`` (3 sigma by
    default), computed over all trajectories including unresolved ones.
    """
    expected = {nu: float(w) for nu, w in zip(model.labels, model.projectors.weights(_as_state(rho0)))}
    if n_traj == 0:
        return BornRuleReport(0, length, {}, {}, {}, expected, 0)
    batch = sample_batch(dyn, rho0, length, seed, n_traj=n_traj, record_steps=[length])
    w = np.real(np.einsum("fij,nji->nf", model.projectors.stack(), batch.states[length]))
    theta = assign_theta(w, threshold)
    counts, freqs, ci = {}, {}, {}
    for j, nu in enumerate(model.labels):
        c = int(np.count_nonzero(theta == j))
        counts[nu] = c
        freqs[nu] = c / n_traj
        iv = binomtest(c, n_traj).proportion_ci(confidence_level=confidence, method="wilson")
        ci[nu] = (float(iv.low), float(iv.high))
    return BornRuleReport(n_traj, length, counts, freqs, ci, expected,
                          int(np.count_nonzero(theta < 0)))
