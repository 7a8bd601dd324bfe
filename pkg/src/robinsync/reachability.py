"""Reachable subspace of the pair (A, B) from Im(D).

The enlarged matrix ``R`` collects every word ``A^p B^q ... A^r B^s D``. Its
column span is the smallest subspace containing Im(D) and invariant under
both A and B, and Ker(R^T) is the largest subspace of Ker(D^T) invariant
under A^T and B^T. ``R`` itself is never formed: the span is grown one
multiplication at a time, which has polynomial cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, NumericError
from .linalg import (
    DEFAULT_TOL,
    SubspaceBasis,
    Tolerances,
    as_matrix,
    column_space,
    orth_complement,
)

__all__ = [
    "ReachabilityReport",
    "word_span",
    "largest_invariant_in_kernel",
    "classical_kalman",
    "mu_common_eigen",
]


@dataclass(frozen=True)
class ReachabilityReport:
    rank_R: int
    ker_RT: SubspaceBasis
    im_R: SubspaceBasis
    word_depth_used: int

    @property
    def dim_ker_RT(self) -> int:
        return self.ker_RT.dim


def _check_square(m: np.ndarray, n: int, name: str):
    if m.shape != (n, n):
        raise InputError(f"{name} must be {n}x{n}, got {m.shape}")


def _normalized(m: np.ndarray) -> np.ndarray:
    # invariant subspaces do not depend on scaling
    norm = np.linalg.norm(m, 2)
    return m / norm if norm > 0 else m


def word_span(A, B, D, tol: Tolerances = DEFAULT_TOL) -> ReachabilityReport:
    """Column span of the enlarged matrix R and the kernel of R^T.

    Iterates ``S_{k+1} = orth(S_k, A S_k, B S_k)`` from ``S_0 = Im(D)`` until
    the dimension stops growing; at most N growth steps are possible.
    ``word_depth_used`` counts the steps that enlarged the span, i.e. the
    longest word needed.
    """
    A = as_matrix(A, "A")
    n = A.shape[0]
    _check_square(A, n, "A")
    B = as_matrix(B, "B")
    _check_square(B, n, "B")
    D = np.asarray(D, dtype=float)
    if D.ndim == 1:
        D = D.reshape(-1, 1)
    if D.ndim != 2 or D.shape[0] != n:
        raise InputError(f"D must have {n} rows, got shape {D.shape}")
    if not np.all(np.isfinite(D)):
        raise InputError("D has non-finite entries")

    An, Bn = _normalized(A), _normalized(B)
    span = column_space(D, tol) if D.shape[1] else SubspaceBasis.zero(n)
    depth = 0
    while 0 < span.dim < n:
        S = span.basis
        grown = column_space(np.hstack([S, An @ S, Bn @ S]), tol)
        if grown.dim <= span.dim:
            break
        span = grown
        depth += 1
        if depth > n:  # pragma: no cover - dimension grows at most n times
            raise NumericError("span growth did not stabilise")
    ker = orth_complement(span, tol)
    return ReachabilityReport(rank_R=span.dim, ker_RT=ker, im_R=span, word_depth_used=depth)


def largest_invariant_in_kernel(At, Bt, K: SubspaceBasis, tol: Tolerances = DEFAULT_TOL) -> SubspaceBasis:
    """Largest subspace of ``K`` invariant under ``At`` and ``Bt``.

    Fixed point of ``V_{k+1} = V_k ∩ At^{-1} V_k ∩ Bt^{-1} V_k`` with
    ``V_0 = K``; the dimension strictly drops until it stabilises, so at
    most ``dim K`` rounds run. Each round solves for the ``y`` with
    ``x = Q y`` and ``(I - Q Q^T) At x = (I - Q Q^T) Bt x = 0``.

    This is the independent route used to cross-check :func:`word_span`.
    """
    At = as_matrix(At, "At")
    n = At.shape[0]
    _check_square(At, n, "At")
    Bt = as_matrix(Bt, "Bt")
    _check_square(Bt, n, "Bt")
    if K.ambient_dim != n:
        raise InputError("K lives in the wrong ambient space")
    An, Bn = _normalized(At), _normalized(Bt)
    V = K
    for _ in range(n + 1):
        if V.dim == 0:
            return V
        Q = V.basis
        leak = np.eye(n) - Q @ Q.T
        stacked = np.vstack([leak @ An @ Q, leak @ Bn @ Q])
        _, s, vt = np.linalg.svd(stacked)
        # the stacked matrix has norm <= sqrt(2); cut against an absolute floor
        r = int(np.count_nonzero(s > tol.rank_rel))
        if r == 0:
            return V
        if r == Q.shape[1]:
            return SubspaceBasis.zero(n)
        V = column_space(Q @ vt[r:].T, tol)
    raise NumericError("invariant-subspace iteration did not stabilise")  # pragma: no cover


def classical_kalman(A, D) -> np.ndarray:
    """The Kalman matrix ``(D, AD, ..., A^{N-1} D)``."""
    A = as_matrix(A, "A")
    n = A.shape[0]
    _check_square(A, n, "A")
    D = as_matrix(D, "D")
    if D.shape[0] != n:
        raise InputError(f"D must have {n} rows, got {D.shape[0]}")
    blocks = [D]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def mu_common_eigen(A, B, tol: Tolerances = DEFAULT_TOL) -> int:
    """Largest common eigenspace dimension of A^T and B^T (complex).

    ``max over (alpha, beta) of dim Ker [A^T - alpha I; B^T - beta I]``; a
    nonzero kernel forces alpha and beta to be eigenvalues, so sweeping the
    two spectra is exhaustive. Returns 0 when no common eigenvector exists.
    """
    A = as_matrix(A, "A")
    n = A.shape[0]
    _check_square(A, n, "A")
    B = as_matrix(B, "B")
    _check_square(B, n, "B")
    At, Bt = _normalized(A).T, _normalized(B).T
    try:
        alphas = np.linalg.eigvals(At)
        betas = np.linalg.eigvals(Bt)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericError(f"eigen-solver failed: {exc}") from exc
    # computed eigenvalues of defective blocks are only sqrt(eps)-accurate
    cutoff = 1e-7
    eye = np.eye(n)
    best = 0
    for a in alphas:
        for b in betas:
            stacked = np.vstack([At - a * eye, Bt - b * eye])
            s = np.linalg.svd(stacked, compute_uv=False)
            best = max(best, int(np.count_nonzero(s <= cutoff)))
    return best
