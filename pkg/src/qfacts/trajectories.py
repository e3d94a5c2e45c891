"""Born-rule sampling of measurement protocols and exact protocol measures.

Conditional states are renormalized after every step and protocol
probabilities are carried as logarithms, so trajectories of many thousand
steps neither underflow nor drift off the state space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from qfacts.channels import StepDynamics
from qfacts.errors import BadWindow, TooLarge, WeightUnderflow
from qfacts.qcore import DensityMatrix, dagger, validate_density
from qfacts.rng import check_seed, stream_uniforms

ENUM_BUDGET = 2**20
UNDERFLOW = 1e-15


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """One sampled protocol with its log-probability and (thinned) states."""

    protocol: tuple
    log_prob: float
    seed: int
    rng_stream: int
    states: tuple | None = None
    state_steps: tuple | None = None

    def __len__(self):
        return len(self.protocol)

    def protocol_string(self) -> str:
        return protocol_string(self.protocol)


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Lock-step sample of many trajectories.

    ``outcomes[n, j]`` is the alphabet index of outcome ``j + 1`` of
    trajectory ``n``; ``states[k]`` stacks the conditional states after step
    ``k`` for every trajectory.
    """

    alphabet: tuple
    outcomes: np.ndarray
    log_prob: np.ndarray
    seed: int
    streams: np.ndarray
    states: dict = field(default_factory=dict)

    def __len__(self):
        return self.outcomes.shape[0]

    def protocol(self, n: int) -> tuple:
        return tuple(self.alphabet[i] for i in self.outcomes[n])

    def record(self, n: int) -> TrajectoryRecord:
        steps = tuple(sorted(self.states))
        states = tuple(DensityMatrix(self.states[k][n].copy()) for k in steps) if steps else None
        return TrajectoryRecord(self.protocol(n), float(self.log_prob[n]), self.seed,
                                int(self.streams[n]), states, steps if steps else None)


def protocol_string(protocol: Sequence) -> str:
    syms = [str(s) for s in protocol]
    return "".join(syms) if all(len(s) == 1 for s in syms) else ",".join(syms)


def _as_state(rho0) -> np.ndarray:
    if isinstance(rho0, DensityMatrix):
        return rho0.matrix
    return validate_density(rho0).matrix


def default_stride(length: int) -> int:
    return max(1, length // 256)


def _record_set(length, store_states, stride, record_steps):
    if record_steps is not None:
        steps = {int(k) for k in record_steps}
        if any(k < 0 or k > length for k in steps):
            raise ValueError("record steps must lie in [0, length]")
        return steps
    if not store_states and stride is None:
        return set()
    stride = default_stride(length) if stride is None else int(stride)
    if stride < 1:
        raise ValueError("stride must be positive")
    return set(range(0, length + 1, stride)) | {length}


def _step(stack: np.ndarray, states: np.ndarray):
    """Images ``(n_outcomes, N, d, d)`` and weights ``(n_outcomes, N)``."""
    left = np.matmul(stack[:, :, None], states[None, None])
    imgs = np.matmul(left, dagger(stack)[:, :, None]).sum(axis=1)
    weights = np.real(np.einsum("xnii->xn", imgs))
    return imgs, weights


def evolve_batch(dyn: StepDynamics, rho0, length: int, uniforms: np.ndarray,
                 record: Iterable[int] = ()):
    """Advance trajectories in lock step using pre-drawn uniforms.

    Returns ``(outcomes, log_prob, states)`` with ``states`` a dict over the
    requested record steps.
    """
    n = uniforms.shape[0]
    d = dyn.dim
    record = set(record)
    states = np.broadcast_to(_as_state(rho0), (n, d, d)).astype(complex)
    outcomes = np.zeros((n, length), dtype=np.int16 if len(dyn.alphabet) > 127 else np.int8)
    logp = np.zeros(n)
    kept = {}
    if 0 in record:
        kept[0] = states.copy()
    rows = np.arange(n)
    for k in range(1, length + 1):
        if dyn.history_dependent:
            imgs = np.empty((len(dyn.alphabet), n, d, d), dtype=complex)
            weights = np.empty((len(dyn.alphabet), n))
            for i in range(n):
                prefix = tuple(dyn.alphabet[j] for j in outcomes[i, :k - 1])
                im, w = _step(dyn.family(k, prefix).stacked(), states[i:i + 1])
                imgs[:, i], weights[:, i] = im[:, 0], w[:, 0]
        else:
            imgs, weights = _step(dyn.family(k).stacked(), states)
        if np.any(np.all(weights < UNDERFLOW, axis=0)):
            raise WeightUnderflow(f"all outcome weights vanish at step {k}")
        cum = np.cumsum(weights, axis=0)
        # the last outcome absorbs rounding slack in the cumulative sum
        choice = np.sum(uniforms[:, k - 1][None, :] >= cum[:-1], axis=0)
        w = weights[choice, rows]
        nxt = imgs[choice, rows] / w[:, None, None]
        states = 0.5 * (nxt + dagger(nxt))
        logp += np.log(w)
        outcomes[:, k - 1] = choice
        if k in record:
            kept[k] = states.copy()
    return outcomes, logp, kept


def sample_batch(dyn: StepDynamics, rho0, length: int, seed: int, streams=None,
                 n_traj: int | None = None, store_states: bool = False,
                 stride: int | None = None, record_steps=None) -> TrajectoryBatch:
    """Sample trajectories on streams ``streams`` (default ``range(n_traj)``)."""
    if length < 1:
        raise ValueError("length must be at least 1")
    seed = check_seed(seed)
    if streams is None:
        if n_traj is None:
            raise ValueError("give streams or n_traj")
        streams = range(n_traj)
    streams = np.asarray(list(streams), dtype=np.int64)
    rec = _record_set(length, store_states, stride, record_steps)
    if len(streams) == 0:
        return TrajectoryBatch(dyn.alphabet, np.zeros((0, length), dtype=np.int8),
                               np.zeros(0), seed, streams, {})
    u = stream_uniforms(seed, streams, length)
    outcomes, logp, kept = evolve_batch(dyn, rho0, length, u, rec)
    return TrajectoryBatch(dyn.alphabet, outcomes, logp, seed, streams, kept)


def sample_trajectory(dyn: StepDynamics, rho0, length: int, seed: int, stream: int = 0,
                      store_states: bool = False, stride: int | None = None,
                      record_steps=None) -> TrajectoryRecord:
    """Sample one protocol by the generalized Born rule.

    At step ``k`` outcome ``xi`` is drawn with probability
    ``Tr Phi^(k)_xi[rho^(k-1)]`` and the state is replaced by the normalized
    image.  The result depends only on ``(seed, stream)``.
    """
    batch = sample_batch(dyn, rho0, length, seed, [stream], store_states=store_states,
                         stride=stride, record_steps=record_steps)
    return batch.record(0)


def _check_budget(n_outcomes: int, k: int):
    if n_outcomes ** k > ENUM_BUDGET:
        raise TooLarge(f"{n_outcomes}^{k} protocols exceed the enumeration budget {ENUM_BUDGET}")


def enumerate_levels(dyn: StepDynamics, rho0, k: int):
    """Yield ``(j, outcomes, log_prob, states)`` for every protocol length ``j = 0..k``.

    Protocols are listed lexicographically in alphabet order.  Zero-probability
    branches carry ``log_prob = -inf`` and a zero state.
    """
    n_out = len(dyn.alphabet)
    _check_budget(n_out, k)
    d = dyn.dim
    states = _as_state(rho0)[None].astype(complex)
    outcomes = np.zeros((1, 0), dtype=np.int16)
    logp = np.zeros(1)
    yield 0, outcomes, logp, states
    for j in range(1, k + 1):
        if dyn.history_dependent:
            imgs = np.empty((n_out, len(states), d, d), dtype=complex)
            weights = np.empty((n_out, len(states)))
            for i in range(len(states)):
                prefix = tuple(dyn.alphabet[t] for t in outcomes[i])
                im, w = _step(dyn.family(j, prefix).stacked(), states[i:i + 1])
                imgs[:, i], weights[:, i] = im[:, 0], w[:, 0]
        else:
            imgs, weights = _step(dyn.family(j).stacked(), states)
        imgs = np.swapaxes(imgs, 0, 1).reshape(-1, d, d)
        weights = weights.T.reshape(-1)
        pos = weights > 0
        safe = np.where(pos, weights, 1.0)
        states = imgs / safe[:, None, None]
        states[~pos] = 0.0
        states = 0.5 * (states + dagger(states))
        with np.errstate(divide="ignore"):
            logp = np.repeat(logp, n_out) + np.where(pos, np.log(safe), -np.inf)
        outcomes = np.concatenate(
            [np.repeat(outcomes, n_out, axis=0),
             np.tile(np.arange(n_out, dtype=np.int16), len(outcomes))[:, None]], axis=1)
        yield j, outcomes, logp, states


def enumerate_protocols(dyn: StepDynamics, rho0, k: int):
    """All ``|alphabet|^k`` protocols of length ``k``: ``(outcomes, log_prob, states)``."""
    for j, outcomes, logp, states in enumerate_levels(dyn, rho0, k):
        if j == k:
            return outcomes, logp, states
    raise AssertionError("unreachable")


def protocol_log_probability(dyn: StepDynamics, rho0, protocol: Sequence) -> float:
    """Natural log of the probability of ``protocol``; ``-inf`` if it is impossible."""
    if len(protocol) == 0:
        raise ValueError("protocol must be non-empty")
    rho = _as_state(rho0)
    total = 0.0
    prefix = []
    for k, xi in enumerate(protocol, start=1):
        img, w = dyn.family(k, tuple(prefix)).apply(xi, rho)
        if w <= 0:
            return -math.inf
        total += math.log(w)
        rho = img / w
        rho = 0.5 * (rho + dagger(rho))
        prefix.append(xi)
    return total


def marginal_consistency_check(dyn: StepDynamics, rho0, k_max: int) -> float:
    """Largest ``|sum_xi mu(prefix, xi) - mu(prefix)|`` over all prefixes up to ``k_max``."""
    n_out = len(dyn.alphabet)
    _check_budget(n_out, k_max)
    worst = 0.0
    prev = None
    for j, _, logp, _ in enumerate_levels(dyn, rho0, k_max):
        mu = np.exp(logp)
        if prev is not None:
            worst = max(worst, float(np.max(np.abs(mu.reshape(-1, n_out).sum(axis=1) - prev))))
        prev = mu
    return worst


def exchangeability_check(dyn: StepDynamics, rho0, k: int) -> float:
    """Largest ``|mu(xi o pi) - mu(xi)|`` over protocols of length ``k`` and permutations."""
    outcomes, logp, _ = enumerate_protocols(dyn, rho0, k)
    mu = np.exp(logp)
    lo, hi = {}, {}
    for row, m in zip(map(tuple, np.sort(outcomes, axis=1)), mu):
        lo[row] = min(lo.get(row, m), m)
        hi[row] = max(hi.get(row, m), m)
    return float(max(hi[key] - lo[key] for key in hi))


@dataclass(frozen=True)
class FrequencyTable:
    """Exact outcome counts and frequencies over the window ``(l, k]``."""

    window: tuple
    counts: dict
    freqs: dict

    def as_array(self, alphabet: Sequence) -> np.ndarray:
        return np.array([float(self.freqs.get(xi, 0)) for xi in alphabet])


def empirical_frequencies(protocol: Sequence, l: int, k: int, alphabet=None) -> FrequencyTable:
    """Frequencies of each symbol among outcomes ``l+1, ..., k``."""
    if not (0 <= l < k <= len(protocol)):
        raise BadWindow(f"window ({l}, {k}) invalid for a protocol of length {len(protocol)}")
    if alphabet is None:
        alphabet = sorted(set(protocol), key=str)
    counts = {xi: 0 for xi in alphabet}
    for xi in protocol[l:k]:
        if xi not in counts:
            raise BadWindow(f"symbol {xi!r} outside the alphabet")
        counts[xi] += 1
    r = k - l
    return FrequencyTable((l, k), counts, {xi: Fraction(c, r) for xi, c in counts.items()})


@dataclass(frozen=True, eq=False)
class FluctuationSeries:
    m_alpha: float
    ks: np.ndarray
    values: np.ndarray


def fluctuation_series(freqs, m_alpha: float, ks=None) -> FluctuationSeries:
    """``sqrt(k) (f^(k) - m_alpha)``; ``freqs[i]`` is ``f^(ks[i])``, ``ks`` defaulting to ``1, 2, ...``."""
    if not 0.0 <= m_alpha <= 1.0:
        raise ValueError("m_alpha must lie in [0, 1]")
    f = np.asarray(freqs, dtype=float)
    ks = np.arange(1, len(f) + 1) if ks is None else np.asarray(ks)
    return FluctuationSeries(float(m_alpha), ks, np.sqrt(ks) * (f - m_alpha))


def running_frequencies(outcomes: np.ndarray, index: int) -> np.ndarray:
    """``f^(k)`` of alphabet entry ``index`` for ``k = 1..L`` along the last axis."""
    hits = (np.asarray(outcomes) == index).cumsum(axis=-1)
    return hits / np.arange(1, hits.shape[-1] + 1)


@dataclass(frozen=True, eq=False)
class CLTDiagnostic:
    """Monte-Carlo cumulant generating function of the fluctuation variable.

    Derivatives at 0 are central differences on the grid; standard errors
    come from batch means over independent sub-samples.
    """

    k: int
    m_alpha: float
    h_grid: np.ndarray
    F: np.ndarray
    F_se: np.ndarray
    d1: float
    d1_se: float
    d2: float
    d2_se: float
    d3: float | None
    d3_se: float | None
    n_samples: int


def _cgf(phi: np.ndarray, h: np.ndarray) -> np.ndarray:
    x = np.outer(phi, h)
    top = x.max(axis=0)
    return top + np.log(np.mean(np.exp(x - top), axis=0))


def _derivs(F: np.ndarray, h: np.ndarray, step: float):
    def at(x):
        return F[int(np.argmin(np.abs(h - x)))]

    d1 = (at(step) - at(-step)) / (2 * step)
    d2 = (at(step) - 2 * at(0.0) + at(-step)) / step ** 2
    has3 = np.any(np.isclose(h, 2 * step)) and np.any(np.isclose(h, -2 * step))
    d3 = ((at(2 * step) - 2 * at(step) + 2 * at(-step) - at(-2 * step)) / (2 * step ** 3)
          if has3 else None)
    return d1, d2, d3


def clt_diagnostic(dyn: StepDynamics, rho0, k: int, h_grid, n_samples: int, seed: int,
                   outcome=None, m_alpha: float | None = None, n_batches: int = 20) -> CLTDiagnostic:
    """Estimate ``F(h) = log E exp(h sqrt(k) (f^(k) - m))`` and its derivatives at 0.

    ``outcome`` defaults to the first alphabet symbol.  ``m_alpha`` defaults to
    the Born-weighted mean ``sum_nu Tr(P_nu rho0) p(outcome|nu)`` of the
    reference model, which is ``p(outcome|nu)`` for a state on a single fact.
    The grid must contain 0 and a symmetric pair ``+-h``; the smallest such
    ``h`` is used for the differences.
    """
    h = np.asarray(h_grid, dtype=float)
    if np.any(np.abs(h) > 1):
        raise ValueError("h_grid must lie in [-1, 1]")
    if not np.any(h == 0):
        raise ValueError("h_grid must contain 0")
    pos = sorted(x for x in h if x > 0 and np.any(np.isclose(h, -x)))
    if not pos:
        raise ValueError("h_grid needs a symmetric pair around 0")
    step = pos[0]
    outcome = dyn.alphabet[0] if outcome is None else outcome
    idx = dyn.alphabet.index(outcome)
    if m_alpha is None:
        ref = dyn.reference
        if ref is None:
            raise ValueError("m_alpha is required without a reference model")
        w = ref.projectors.weights(_as_state(rho0))
        m_alpha = float(w @ ref.cond_probs[ref.outcome_index(outcome)])
    batch = sample_batch(dyn, rho0, k, seed, n_traj=n_samples)
    f = (batch.outcomes == idx).sum(axis=1) / k
    phi = math.sqrt(k) * (f - m_alpha)
    F = _cgf(phi, h)
    d1, d2, d3 = _derivs(F, h, step)
    parts = np.array_split(phi, n_batches)
    sub = [_cgf(p, h) for p in parts]
    sub_d = np.array([[np.nan if v is None else v for v in _derivs(s, h, step)] for s in sub])
    se = sub_d.std(axis=0, ddof=1) / math.sqrt(n_batches)
    F_se = np.std(sub, axis=0, ddof=1) / math.sqrt(n_batches)
    return CLTDiagnostic(k, float(m_alpha), h, F, F_se, float(d1), float(se[0]), float(d2),
                         float(se[1]), None if d3 is None else float(d3),
                         None if d3 is None else float(se[2]), n_samples)


def write_trajectories(path, records: Iterable[TrajectoryRecord]) -> None:
    """One tab-separated line per record: protocol, log_prob, seed, stream."""
    from qfacts.io import atomic_write_text

    lines = ["protocol\tlog_prob\tseed\tstream"]
    for rec in records:
        lines.append(f"{rec.protocol_string()}\t{rec.log_prob:.17g}\t{rec.seed}\t{rec.rng_stream}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_trajectories(path, alphabet: Sequence) -> list[TrajectoryRecord]:
    """Parse a file written by :func:`write_trajectories` (states are not stored there)."""
    by_name = {str(a): a for a in alphabet}
    out = []
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("protocol"):
            raise ValueError("missing trajectory header")
        for line in fh:
            proto, lp, seed, stream = line.rstrip("\n").split("\t")
            syms = proto.split(",") if "," in proto else list(proto)
            out.append(TrajectoryRecord(tuple(by_name[s] for s in syms), float(lp),
                                        int(seed), int(stream)))
    return out
