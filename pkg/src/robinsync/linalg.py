"""Tolerance-aware dense linear algebra.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Subspaces are
carried by :class:`SubspaceBasis`, which stores an orthonormal basis as the
columns of an ``(ambient_dim, dim)`` array. A zero-dimensional subspace is an
ordinary value with an ``(ambient_dim, 0)`` basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import InputError, NumericError

__all__ = [
    "Tolerances",
    "SubspaceBasis",
    "as_matrix",
    "rank_of",
    "right_kernel",
    "column_space",
    "orth_complement",
    "intersect",
    "is_similar_to_symmetric",
    "principal_angles",
    "same_subspace",
]

# Eigenvector matrices worse conditioned than this are treated as defective.
_EIGVEC_COND_MAX = 1e6


@dataclass(frozen=True)
class Tolerances:
    """Numerical thresholds used by every rank or residual decision.

    Attributes
    ----------
    rank_rel : float
        Singular values at or below ``rank_rel * s_max`` count as zero.
    residual_abs : float
        Absolute bound on residuals such as ``||M v||`` for a kernel vector.
    """

    rank_rel: float = 1e-10
    residual_abs: float = 1e-9

    def __post_init__(self):
        for name in ("rank_rel", "residual_abs"):
            value = getattr(self, name)
            if not (0.0 < value < 1.0):
                raise InputError(f"{name} must lie in (0, 1), got {value!r}")


DEFAULT_TOL = Tolerances()


def as_matrix(m, name="matrix", *, allow_empty=False) -> np.ndarray:
    """Convert ``m`` to a finite 2-D float64 array or raise :class:`InputError`."""
    a = np.asarray(m, dtype=float)
    if a.ndim == 1 and not allow_empty:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise InputError(f"{name} must be two-dimensional, got shape {a.shape}")
    if not allow_empty and (a.shape[0] < 1 or a.shape[1] < 1):
        raise InputError(f"{name} must have at least one row and one column")
    if not np.all(np.isfinite(a)):
        raise InputError(f"{name} has non-finite entries")
    return a


def _canonical_signs(q: np.ndarray) -> np.ndarray:
    # first clearly nonzero component of every column made nonnegative
    q = np.array(q, dtype=float, copy=True)
    for k in range(q.shape[1]):
        col = q[:, k]
        big = np.flatnonzero(np.abs(col) > 1e-12 * max(np.abs(col).max(), 1e-300))
        if big.size and col[big[0]] < 0:
            q[:, k] = -col
    return q


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis of a subspace of R^n.

    Use :meth:`from_vectors` to build one from arbitrary spanning vectors;
    the constructor itself assumes the columns are already orthonormal.
    """

    ambient_dim: int
    basis: np.ndarray = field(repr=False)

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.ndim == 1:
            b = b.reshape(-1, 1)
        if b.size == 0:
            b = np.zeros((self.ambient_dim, 0))
        if b.shape[0] != self.ambient_dim:
            raise InputError(
                f"basis has {b.shape[0]} rows, expected ambient_dim={self.ambient_dim}"
            )
        if b.shape[1] > self.ambient_dim:
            raise InputError("more basis vectors than the ambient dimension")
        gram = b.T @ b
        if b.shape[1] and np.max(np.abs(gram - np.eye(b.shape[1]))) > 1e-10:
            raise InputError("basis vectors are not orthonormal")
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @classmethod
    def zero(cls, n: int) -> "SubspaceBasis":
        return cls(n, np.zeros((n, 0)))

    @classmethod
    def full(cls, n: int) -> "SubspaceBasis":
        return cls(n, np.eye(n))

    @classmethod
    def from_vectors(cls, vectors, ambient_dim=None, tol: Tolerances = DEFAULT_TOL):
        """Orthonormal basis of the span of ``vectors``.

        ``vectors`` is either a list of length-n vectors or an ``(n, k)``
        array whose columns span the subspace.
        """
        if isinstance(vectors, (list, tuple)):
            if len(vectors) == 0:
                if ambient_dim is None:
                    raise InputError("ambient_dim required for an empty vector list")
                return cls.zero(ambient_dim)
            cols = np.column_stack([np.asarray(v, dtype=float).ravel() for v in vectors])
        else:
            cols = np.asarray(vectors, dtype=float)
            if cols.ndim == 1:
                cols = cols.reshape(-1, 1)
        if ambient_dim is not None and cols.shape[0] != ambient_dim:
            raise InputError("vector length does not match ambient_dim")
        return column_space(cols, tol)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def vectors(self) -> list:
        return [self.basis[:, k].copy() for k in range(self.dim)]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.basis @ (self.basis.T @ x)

    def residual(self, x) -> float:
        """Norm of the component of ``x`` (vector or columns) outside the subspace."""
        x = np.asarray(x, dtype=float)
        return float(np.linalg.norm(x - self.project(x)))

    def contains(self, other: "SubspaceBasis", tol: float = 1e-8) -> bool:
        if other.ambient_dim != self.ambient_dim:
            raise InputError("ambient dimension mismatch")
        if other.dim == 0:
            return True
        return self.residual(other.basis) <= tol * max(1.0, np.sqrt(other.dim))


def _svd(m: np.ndarray):
    try:
        return np.linalg.svd(m, full_matrices=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericError(f"SVD failed: {exc}") from exc


def _numerical_rank(s: np.ndarray, tol: Tolerances) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol.rank_rel * s[0]))


def rank_of(m, tol: Tolerances = DEFAULT_TOL) -> int:
    """Numerical rank: singular values above ``rank_rel`` times the largest.

    >>> rank_of([[1.0, 2.0], [2.0, 4.0]])
    1
    """
    a = as_matrix(m)
    return _numerical_rank(np.linalg.svd(a, compute_uv=False), tol)


def right_kernel(m, tol: Tolerances = DEFAULT_TOL) -> SubspaceBasis:
    """Orthonormal basis of ``{x : m x = 0}``."""
    a = as_matrix(m)
    _, s, vt = _svd(a)
    r = _numerical_rank(s, tol)
    return SubspaceBasis(a.shape[1], _canonical_signs(vt[r:].T))


def column_space(m, tol: Tolerances = DEFAULT_TOL) -> SubspaceBasis:
    """Orthonormal basis of the column span of ``m`` (may be empty)."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise InputError("column_space expects a 2-D array")
    n = a.shape[0]
    if a.shape[1] == 0:
        return SubspaceBasis.zero(n)
    a = as_matrix(a)
    u, s, _ = _svd(a)
    r = _numerical_rank(s, tol)
    return SubspaceBasis(n, _canonical_signs(u[:, :r]))


def orth_complement(b: SubspaceBasis, tol: Tolerances = DEFAULT_TOL) -> SubspaceBasis:
    """Orthonormal basis of the orthogonal complement of ``b``."""
    n = b.ambient_dim
    if b.dim == 0:
        return SubspaceBasis.full(n)
    if b.dim == n:
        return SubspaceBasis.zero(n)
    u, _, _ = _svd(b.basis)
    return SubspaceBasis(n, _canonical_signs(u[:, b.dim:]))


def intersect(a: SubspaceBasis, b: SubspaceBasis, tol: Tolerances = DEFAULT_TOL) -> SubspaceBasis:
    """Intersection of two subspaces.

    Computed as the kernel of the stacked projections onto the two
    orthogonal complements, ``[I - P_a; I - P_b]``.
    """
    if a.ambient_dim != b.ambient_dim:
        raise InputError(
            f"ambient dimension mismatch: {a.ambient_dim} vs {b.ambient_dim}"
        )
    n = a.ambient_dim
    if a.dim == 0 or b.dim == 0:
        return SubspaceBasis.zero(n)
    eye = np.eye(n)
    stacked = np.vstack([eye - a.projector(), eye - b.projector()])
    _, s, vt = _svd(stacked)
    # singular values of complement projectors are 0 or ~1, so cut absolutely
    r = int(np.count_nonzero(s > tol.rank_rel * max(1.0, s[0] if s.size else 0.0)))
    return SubspaceBasis(n, _canonical_signs(vt[r:].T))


def is_similar_to_symmetric(m, tol: Tolerances = DEFAULT_TOL) -> bool:
    """Whether ``m`` has a real spectrum and is diagonalizable.

    Eigenvalues are clustered with gap ``residual_abs * ||m||``; every
    cluster must have geometric multiplicity equal to its size. An
    eigenvector matrix with condition number above 1e6 is also rejected
    (numerically defective).
    """
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise InputError("is_similar_to_symmetric needs a square matrix")
    n = a.shape[0]
    norm = np.linalg.norm(a, 2)
    if norm == 0.0:
        return True
    thresh = tol.residual_abs * norm
    try:
        w, vecs = np.linalg.eig(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericError(f"eigen-solver failed: {exc}") from exc
    if np.any(np.abs(w.imag) > thresh):
        return False
    for mean, size in _clusters(np.sort(w.real), thresh):
        s = np.linalg.svd(a - mean * np.eye(n), compute_uv=False)
        geo = int(np.count_nonzero(s <= max(thresh, 10 * size * thresh)))
        if geo < size:
            return False
    return bool(np.linalg.cond(vecs) <= _EIGVEC_COND_MAX)


def _clusters(sorted_vals: np.ndarray, gap: float):
    """Group sorted reals whose consecutive spacing is at most ``gap``."""
    groups = []
    start = 0
    for i in range(1, len(sorted_vals) + 1):
        if i == len(sorted_vals) or sorted_vals[i] - sorted_vals[i - 1] > gap:
            chunk = sorted_vals[start:i]
            groups.append((float(chunk.mean()), len(chunk)))
            start = i
    return groups


def principal_angles(a: SubspaceBasis, b: SubspaceBasis) -> np.ndarray:
    """Principal angles between two subspaces of equal dimension (radians)."""
    if a.ambient_dim != b.ambient_dim:
        raise InputError("ambient dimension mismatch")
    if a.dim == 0 and b.dim == 0:
        return np.zeros(0)
    if a.dim == 0 or b.dim == 0:
        return np.full(max(a.dim, b.dim), np.pi / 2)
    return scipy.linalg.subspace_angles(a.basis, b.basis)


def same_subspace(a: SubspaceBasis, b: SubspaceBasis, angle_tol: float = 1e-8) -> bool:
    """Equal dimension and largest principal angle at most ``angle_tol``."""
    if a.dim != b.dim:
        return False
    angles = principal_angles(a, b)
    return bool(angles.size == 0 or angles.max() <= angle_tol)
