"""Slow fact dynamics: measurement cycles, jump trajectories, Markov limit, histories."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from qfacts.channels import CycleConfig, NonDemolitionModel, StepDynamics, build_cycle_dynamics
from qfacts.errors import InsufficientResolvedCycles, NoReference, TooLarge
from qfacts.inference import estimate_windows
from qfacts.qcore import DensityMatrix, ProjectorFamily, dagger, matrix_exponential_unitary, trace_norms
from qfacts.rng import check_seed
from qfacts.trajectories import ENUM_BUDGET, TrajectoryRecord, enumerate_protocols, sample_batch


@dataclass(frozen=True, eq=False)
class JumpTrajectory:
    """Per-cycle fact estimates and closeness of the post-burst state to a fact block.

    ``nu_hat`` holds fact indices; ``max_weight`` is ``max_nu Tr(P_nu rho)`` and
    ``block_distance`` is ``||rho - P_nu rho P_nu||_1`` for the maximizing fact.
    """

    labels: tuple
    cycles: np.ndarray
    nu_hat: np.ndarray
    tie: np.ndarray
    max_weight: np.ndarray
    block_distance: np.ndarray
    resolve_threshold: float = 0.99

    @property
    def resolved(self) -> np.ndarray:
        return ~self.tie & (self.max_weight >= self.resolve_threshold)

    def estimates(self) -> list:
        return [(int(i), self.labels[n], bool(t)) for i, n, t in zip(self.cycles, self.nu_hat, self.tie)]

    def to_tsv(self) -> str:
        lines = ["cycle\tnu_hat\ttie\tmax_weight\tblock_distance"]
        for i in range(len(self.cycles)):
            lines.append(f"{self.cycles[i]}\t{self.labels[self.nu_hat[i]]}\t{int(self.tie[i])}\t"
                         f"{self.max_weight[i]:.17g}\t{self.block_distance[i]:.17g}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class _CycleRun:
    outcomes: np.ndarray     # (N, n_cycles * M)
    post_burst: np.ndarray   # (N, n_cycles, d, d)
    log_prob: np.ndarray
    streams: np.ndarray
    seed: int


def _run_cycle_batch(cfg: CycleConfig, rho0, n_cycles: int, seed: int, streams) -> _CycleRun:
    if n_cycles < 1:
        raise ValueError("n_cycles must be at least 1")
    dyn = build_cycle_dynamics(cfg)
    M = cfg.M
    steps = [M * (c + 1) for c in range(n_cycles)]
    batch = sample_batch(dyn, rho0, M * n_cycles, seed, streams=streams, record_steps=steps)
    post = np.stack([batch.states[s] for s in steps], axis=1)
    return _CycleRun(batch.outcomes, post, batch.log_prob, batch.streams, batch.seed)


def _closeness(post: np.ndarray, proj: np.ndarray):
    w = np.real(np.einsum("fij,ncji->ncf", proj, post))
    best = w.argmax(axis=-1)
    pb = proj[best]
    dist = trace_norms(post - pb @ post @ pb)
    return w.max(axis=-1), best, dist


def _jumps_from_run(run: _CycleRun, cfg: CycleConfig, threshold: float):
    model = cfg.nd_model
    n, total = run.outcomes.shape
    n_cycles = total // cfg.M
    windows = run.outcomes.reshape(n, n_cycles, cfg.M)
    nu_hat, tie = estimate_windows(windows, model, 0, cfg.M)
    maxw, _, dist = _closeness(run.post_burst, model.projectors.stack())
    return [JumpTrajectory(model.labels, np.arange(n_cycles), nu_hat[i], tie[i], maxw[i], dist[i],
                           threshold) for i in range(n)]


def run_cycles(cfg: CycleConfig, rho0, n_cycles: int, seed: int, stream: int = 0,
               threshold: float = 0.99) -> tuple[JumpTrajectory, TrajectoryRecord]:
    """Simulate ``n_cycles`` bursts and estimate the fact from each burst.

    Closeness metrics are evaluated on the state right after each burst.
    The returned record carries those post-burst states.
    """
    run = _run_cycle_batch(cfg, rho0, n_cycles, check_seed(seed), [stream])
    jt = _jumps_from_run(run, cfg, threshold)[0]
    alphabet = cfg.nd_model.alphabet
    steps = tuple(cfg.M * (c + 1) for c in range(n_cycles))
    rec = TrajectoryRecord(tuple(alphabet[i] for i in run.outcomes[0]), float(run.log_prob[0]),
                           run.seed, stream, tuple(DensityMatrix(s) for s in run.post_burst[0]), steps)
    return jt, rec


@dataclass(frozen=True)
class Theorem43Report:
    epsilon: float
    n_cycles: int
    n_runs: int
    pure_fraction: float
    block_fraction: float
    fraction: float
    passed: bool


def theorem43_check(cfg: CycleConfig, rho0, n_cycles: int, epsilon: float, seed: int,
                    n_runs: int = 1) -> Theorem43Report:
    """Fraction of post-burst states that are ``epsilon``-close to a single fact.

    A cycle counts when ``max_nu Tr(P_nu rho) >= 1 - epsilon`` and
    ``||rho - P_nu rho P_nu||_1 <= epsilon`` for that fact.  The check passes
    when the fraction is at least ``1 - epsilon``.
    """
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    run = _run_cycle_batch(cfg, rho0, n_cycles, check_seed(seed), range(n_runs))
    maxw, _, dist = _closeness(run.post_burst, cfg.nd_model.projectors.stack())
    pure = maxw >= 1 - epsilon
    block = dist <= epsilon
    frac = float(np.mean(pure & block))
    return Theorem43Report(epsilon, n_cycles, n_runs, float(pure.mean()), float(block.mean()),
                           frac, frac >= 1 - epsilon)


def theoretical_transition_matrix(projectors: ProjectorFamily, H_P, lambda2: float) -> np.ndarray:
    """Limit transition matrix ``Tr(P_nu U^+ P_nu2 U P_nu) / Tr(P_nu)`` with ``U = exp(-i lambda2 H_P)``.

    Dividing by the rank makes rows sum to one for projectors of any rank;
    for rank-one projectors it is the plain trace.
    """
    u = matrix_exponential_unitary(H_P, lambda2)
    projs = projectors.projectors
    t = np.empty((len(projs), len(projs)))
    for i, p in enumerate(projs):
        rank = np.real(np.trace(p))
        for j, q in enumerate(projs):
            t[i, j] = np.real(np.trace(p @ dagger(u) @ q @ u @ p)) / rank
    return t


@dataclass(frozen=True, eq=False)
class MarkovComparison:
    labels: tuple
    empirical: np.ndarray
    counts: np.ndarray
    theoretical: np.ndarray
    max_abs_deviation: float
    n_transitions: int
    n_censored: int

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "empirical": self.empirical.tolist(),
                "counts": self.counts.tolist(), "theoretical": self.theoretical.tolist(),
                "max_abs_deviation": self.max_abs_deviation,
                "n_transitions": self.n_transitions, "n_censored": self.n_censored}


def markov_limit_comparison(cfg: CycleConfig, rho0, n_cycles: int, seed: int, n_runs: int = 1,
                            threshold: float = 0.99, min_transitions: int = 100) -> MarkovComparison:
    """Empirical cycle-to-cycle fact transitions versus the limiting Markov chain.

    Transitions touching a tied or unresolved cycle are dropped and counted
    as censored.  Rows without any transition are left as NaN.
    """
    run = _run_cycle_batch(cfg, rho0, n_cycles, check_seed(seed), range(n_runs))
    model = cfg.nd_model
    nf = model.n_facts
    counts = np.zeros((nf, nf), dtype=np.int64)
    censored = 0
    for jt in _jumps_from_run(run, cfg, threshold):
        ok = jt.resolved
        for a in range(len(jt.cycles) - 1):
            if ok[a] and ok[a + 1]:
                counts[jt.nu_hat[a], jt.nu_hat[a + 1]] += 1
            else:
                censored += 1
    total = int(counts.sum())
    if total < min_transitions:
        raise InsufficientResolvedCycles(f"only {total} resolved transitions (need {min_transitions})")
    rows = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        emp = np.where(rows > 0, counts / np.maximum(rows, 1), np.nan)
    theo = theoretical_transition_matrix(model.projectors, cfg.H_P, cfg.lambda2)
    dev = float(np.nanmax(np.abs(emp - theo)))
    return MarkovComparison(model.labels, emp, counts, theo, dev, total, censored)


def default_epsilon(r: int) -> float:
    """Window tolerance ``r^(-1/3)``: it vanishes while ``sqrt(r) * eps`` diverges."""
    return r ** (-1.0 / 3.0)


@dataclass(frozen=True, eq=False)
class HistoryReport:
    """Masses of histories of plausible facts over ``p`` windows of length ``r``.

    ``masses`` maps a tuple of fact labels to its probability; ``uncovered``
    is the mass of protocols with at least one window that matches no fact,
    or more than one.
    """

    r: int
    p: int
    epsilon: float
    method: str
    masses: dict
    uncovered: float
    uncovered_stderr: float | None = None

    @property
    def coverage(self) -> float:
        return 1.0 - self.uncovered


def classify_windows(outcomes: np.ndarray, model: NonDemolitionModel, r: int, p: int,
                     epsilon: float) -> np.ndarray:
    """Fact index per window ``(j r - r, j r]``, or ``-1`` when none or several facts match.

    A window matches ``nu`` when ``max_xi |f_xi - p(xi|nu)| < epsilon``.
    """
    n = outcomes.shape[0]
    win = outcomes[:, : r * p].reshape(n, p, r)
    freqs = np.stack([(win == i).sum(axis=-1) / r for i in range(len(model.alphabet))], axis=-1)
    dist = np.abs(freqs[..., :, None] - model.cond_probs[None, None]).max(axis=-2)
    near = dist < epsilon
    one = near.sum(axis=-1) == 1
    return np.where(one, near.argmax(axis=-1), -1)


def history_sets_probability(dyn: StepDynamics, rho0, r: int, p: int, epsilon=None,
                             method: str = "auto", budget: int = 20_000, seed: int = 0,
                             model: NonDemolitionModel | None = None) -> HistoryReport:
    """Probability of each history ``(alpha_1, ..., alpha_p)`` and of the uncovered rest.

    ``epsilon`` is a number or a callable of ``r`` (default ``r^(-1/3)``).
    ``"exact"`` enumerates all protocols of length ``r p``; ``"montecarlo"``
    samples ``budget`` trajectories; ``"auto"`` picks exact when it fits.
    """
    model = model if model is not None else dyn.reference
    if model is None:
        raise NoReference("history classification needs a reference model")
    if r < 1 or p < 1:
        raise ValueError("need r >= 1 and p >= 1")
    eps = default_epsilon(r) if epsilon is None else (epsilon(r) if callable(epsilon) else float(epsilon))
    fits = len(dyn.alphabet) ** (r * p) <= ENUM_BUDGET
    if method == "auto":
        method = "exact" if fits else "montecarlo"
    labels = model.labels
    if method == "exact":
        if not fits:
            raise TooLarge(f"{len(dyn.alphabet)}^{r * p} protocols exceed the budget")
        outcomes, logp, _ = enumerate_protocols(dyn, rho0, r * p)
        weight = np.exp(logp)
    elif method in ("montecarlo", "mc"):
        batch = sample_batch(dyn, rho0, r * p, check_seed(seed), n_traj=budget)
        outcomes = batch.outcomes
        weight = np.full(len(outcomes), 1.0 / budget)
    else:
        raise ValueError(f"unknown method {method!r}")
    cls = classify_windows(outcomes, model, r, p, eps)
    covered = np.all(cls >= 0, axis=1)
    masses: Counter = Counter()
    for row, w in zip(cls[covered], weight[covered]):
        masses[tuple(labels[i] for i in row)] += float(w)
    unc = float(weight[~covered].sum())
    se = None
    if method != "exact":
        frac = float(np.mean(~covered))
        se = math.sqrt(frac * (1 - frac) / budget)
    ordered = dict(sorted(masses.items(), key=lambda kv: tuple(labels.index(x) for x in kv[0])))
    return HistoryReport(r, p, eps, method, ordered, unc, se)
