"""Dense complex linear algebra and validated quantum-state types.

Every matrix here is a plain ``numpy.ndarray`` of complex dtype; dimensions
stay small (a few dozen at most), so nothing is sparse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from qfacts.errors import InvalidProjectors, NotHermitian, NotPositive, ZeroTrace

HERM_TOL = 1e-10
HERM_REJECT_TOL = 1e-8
POS_TOL = 1e-10
TRACE_TOL = 1e-14
GROUP_TOL = 1e-8
PROJ_TOL = 1e-10


def as_matrix(a) -> np.ndarray:
    """Return ``a`` as a finite square complex matrix or raise ``ValueError``."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def hermiticity_defect(a: np.ndarray) -> float:
    return float(np.max(np.abs(a - dagger(a)))) if a.size else 0.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, positive semidefinite, unit-trace matrix.

    Build instances through :func:`validate_density`; the constructor itself
    does not check anything.
    """

    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def expect(self, op) -> float:
        return float(np.real(np.trace(np.asarray(op) @ self.matrix)))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)


def validate_density(matrix) -> DensityMatrix:
    """Hermitize, clamp tiny negative eigenvalues and renormalize.

    Raises
    ------
    NotHermitian
        If the entrywise asymmetry exceeds ``1e-8``.
    ZeroTrace
        If the trace is not positive.
    NotPositive
        If an eigenvalue of the trace-normalized matrix is below ``-1e-10``.
    """
    a = as_matrix(matrix)
    if hermiticity_defect(a) > HERM_REJECT_TOL:
        raise NotHermitian("matrix is not Hermitian")
    a = 0.5 * (a + dagger(a))
    tr = float(np.real(np.trace(a)))
    if tr <= TRACE_TOL:
        raise ZeroTrace(f"trace {tr:.3g} is not positive")
    a = a / tr
    w, v = np.linalg.eigh(a)
    if w[0] < -POS_TOL:
        raise NotPositive(f"minimum eigenvalue {w[0]:.3g}")
    if w[0] < 0:
        w = np.clip(w, 0.0, None)
        a = (v * w) @ dagger(v)
        a = 0.5 * (a + dagger(a))
        a = a / np.real(np.trace(a))
    return DensityMatrix(_frozen(a))


def pure_state(psi) -> DensityMatrix:
    psi = np.asarray(psi, dtype=complex).ravel()
    return validate_density(np.outer(psi, psi.conj()))


def maximally_mixed(dim: int) -> DensityMatrix:
    return DensityMatrix(_frozen(np.eye(dim) / dim))


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenprojectors: tuple

    def reconstruct(self) -> np.ndarray:
        return sum(lam * p for lam, p in zip(self.eigenvalues, self.eigenprojectors))


def herm_eigendecompose(a, group_tol: float = GROUP_TOL) -> SpectralDecomposition:
    """Spectral decomposition with degenerate eigenvalues merged.

    Eigenvalues come out ascending; neighbours closer than ``group_tol`` share
    one eigenprojector.
    """
    a = as_matrix(a)
    if hermiticity_defect(a) > HERM_REJECT_TOL:
        raise NotHermitian("matrix is not Hermitian")
    a = 0.5 * (a + dagger(a))
    w, v = np.linalg.eigh(a)
    groups = [[0]]
    for i in range(1, len(w)):
        if w[i] - w[groups[-1][-1]] <= group_tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    vals, projs = [], []
    for g in groups:
        vg = v[:, g]
        vals.append(float(np.mean(w[g])))
        projs.append(_frozen(vg @ dagger(vg)))
    return SpectralDecomposition(np.array(vals), tuple(projs))


def trace_norm(a) -> float:
    """Sum of singular values."""
    a = np.asarray(a, dtype=complex)
    return float(np.sum(np.linalg.svd(a, compute_uv=False)))


def op_norm(a) -> float:
    """Largest singular value."""
    a = np.asarray(a, dtype=complex)
    return float(np.linalg.svd(a, compute_uv=False)[0])


def trace_norms(stack: np.ndarray) -> np.ndarray:
    """Trace norms of a stack of matrices with shape ``(..., d, d)``."""
    return np.sum(np.linalg.svd(stack, compute_uv=False), axis=-1)


def matrix_exponential_unitary(h, t: float = 1.0) -> np.ndarray:
    """``exp(-i t H)`` for Hermitian ``H``, computed by diagonalization."""
    h = as_matrix(h)
    if hermiticity_defect(h) > HERM_REJECT_TOL:
        raise NotHermitian("Hamiltonian is not Hermitian")
    w, v = np.linalg.eigh(0.5 * (h + dagger(h)))
    return (v * np.exp(-1j * t * w)) @ dagger(v)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a complex Ginibre matrix."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


@dataclass(frozen=True, eq=False)
class ProjectorFamily:
    """Orthogonal resolution of the identity, one projector per fact label."""

    labels: tuple
    projectors: tuple

    def __post_init__(self):
        if len(self.labels) != len(self.projectors) or not self.labels:
            raise InvalidProjectors("need one projector per label")
        if len(set(self.labels)) != len(self.labels):
            raise InvalidProjectors("fact labels must be distinct")
        projs = tuple(_frozen(as_matrix(p)) for p in self.projectors)
        dim = projs[0].shape[0]
        if any(p.shape != (dim, dim) for p in projs):
            raise InvalidProjectors("projectors have mismatched shapes")
        for lab, p in zip(self.labels, projs):
            if hermiticity_defect(p) > PROJ_TOL:
                raise InvalidProjectors(f"projector {lab!r} is not Hermitian")
            if op_norm(p @ p - p) > PROJ_TOL:
                raise InvalidProjectors(f"projector {lab!r} is not idempotent")
        for i in range(len(projs)):
            for j in range(i + 1, len(projs)):
                if op_norm(projs[i] @ projs[j]) > PROJ_TOL:
                    raise InvalidProjectors(
                        f"projectors {self.labels[i]!r} and {self.labels[j]!r} overlap")
        if op_norm(sum(projs) - np.eye(dim)) > PROJ_TOL:
            raise InvalidProjectors("projectors do not sum to the identity")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "projectors", projs)

    @property
    def dim(self) -> int:
        return self.projectors[0].shape[0]

    def __len__(self) -> int:
        return len(self.labels)

    def ranks(self) -> np.ndarray:
        return np.array([int(round(np.real(np.trace(p)))) for p in self.projectors])

    def weights(self, rho) -> np.ndarray:
        """Born weights ``Tr(P_nu rho)`` for every fact."""
        r = np.asarray(rho)
        return np.array([np.real(np.trace(p @ r)) for p in self.projectors])

    def stack(self) -> np.ndarray:
        return np.stack(self.projectors)


def diagonal_projectors(dim: int, blocks: Sequence[Sequence[int]], labels=None) -> ProjectorFamily:
    """Projectors onto coordinate subspaces, one per block of basis indices."""
    projs = []
    for b in blocks:
        p = np.zeros((dim, dim), dtype=complex)
        p[list(b), list(b)] = 1.0
        projs.append(p)
    labels = tuple(range(len(blocks))) if labels is None else tuple(labels)
    return ProjectorFamily(labels, tuple(projs))
