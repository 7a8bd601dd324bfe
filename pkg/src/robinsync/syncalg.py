"""Synchronization algebra for p groups of state variables.

The N state components are cut into p consecutive groups by
``0 = n_0 < n_1 < ... < n_p = N``. ``C_p`` is the ``(N-p) x N`` matrix whose
kernel is spanned by the group indicator vectors ``e_r``; a coupling matrix is
C_p-compatible when it maps that kernel into itself, in which case it has a
reduced matrix acting on ``W = C_p U``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import (
    CompatibilityError,
    InputError,
    NotBiorthonormalizableError,
    UnsupportedError,
)
from .linalg import (
    DEFAULT_TOL,
    SubspaceBasis,
    Tolerances,
    as_matrix,
    is_similar_to_symmetric,
    orth_complement,
    rank_of,
)
from .reachability import ReachabilityReport, word_span

__all__ = [
    "GroupPartition",
    "SyncProblem",
    "SyncAnalysis",
    "build_Cp",
    "ker_Cp_vectors",
    "is_cp_compatible",
    "reduced_matrix",
    "check_biorthonormal",
    "normalize_biorthonormal",
    "synthesize_D",
    "project_eigenvectors",
    "project_root_vectors_exact",
    "analyze",
]


@dataclass(frozen=True)
class GroupPartition:
    """Cut points ``0 = n_0 < n_1 < ... < n_p = N``."""

    cut_points: tuple

    def __post_init__(self):
        cuts = tuple(int(c) for c in self.cut_points)
        if len(cuts) < 2 or cuts[0] != 0:
            raise InputError("partition must start at 0 and contain at least one group")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise InputError(f"cut points must be strictly increasing: {cuts}")
        object.__setattr__(self, "cut_points", cuts)

    @classmethod
    def single(cls, n: int) -> "GroupPartition":
        """One group holding every component (the C_1 case)."""
        return cls((0, n))

    @property
    def N(self) -> int:
        return self.cut_points[-1]

    @property
    def p(self) -> int:
        return len(self.cut_points) - 1

    def groups(self) -> list:
        """Index ranges of the groups, 0-based."""
        c = self.cut_points
        return [range(c[r], c[r + 1]) for r in range(self.p)]


def build_Cp(partition: GroupPartition) -> np.ndarray:
    """Block-diagonal ``(N-p) x N`` synchronization matrix.

    >>> build_Cp(GroupPartition((0, 3))).astype(int).tolist()
    [[1, -1, 0], [0, 1, -1]]
    """
    n, p = partition.N, partition.p
    C = np.zeros((n - p, n))
    row = 0
    for grp in partition.groups():
        for j in list(grp)[:-1]:
            C[row, j] = 1.0
            C[row, j + 1] = -1.0
            row += 1
    return C


def ker_Cp_vectors(partition: GroupPartition):
    """Indicator vectors of the groups and an orthonormal basis of Ker(C_p).

    Returns ``(e, basis)`` where ``e`` is the ``N x p`` matrix whose column
    ``r`` is the indicator ``e_r`` of group ``r``.
    """
    n = partition.N
    e = np.zeros((n, partition.p))
    for r, grp in enumerate(partition.groups()):
        e[list(grp), r] = 1.0
    basis = SubspaceBasis(n, e / np.sqrt(e.sum(axis=0)))
    return e, basis


def _square(M, n: Optional[int] = None, name="M") -> np.ndarray:
    M = as_matrix(M, name)
    if M.shape[0] != M.shape[1] or (n is not None and M.shape[0] != n):
        raise InputError(f"{name} must be square of order {n}, got {M.shape}")
    return M


def _compat_residual(M: np.ndarray, partition: GroupPartition) -> float:
    C = build_Cp(partition)
    if C.shape[0] == 0:
        return 0.0
    e, _ = ker_Cp_vectors(partition)
    return float(np.abs(C @ M @ e).max())


def is_cp_compatible(M, partition: GroupPartition, tol: Tolerances = DEFAULT_TOL) -> bool:
    """Whether ``M Ker(C_p) ⊆ Ker(C_p)``, i.e. ``C_p M e_r ≈ 0`` for every group.

    For a single group this is the equal-row-sum condition.
    """
    M = _square(M, partition.N)
    return bool(_compat_residual(M, partition) <= tol.residual_abs * max(np.linalg.norm(M, 2), 1e-300))


def reduced_matrix(M, partition: GroupPartition, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Reduced matrix ``C_p M C_p^T (C_p C_p^T)^{-1}`` of a compatible ``M``."""
    M = _square(M, partition.N)
    if not is_cp_compatible(M, partition, tol):
        raise CompatibilityError(
            "matrix is not C_p-compatible; the reduced matrix is not defined"
        )
    C = build_Cp(partition)
    if C.shape[0] == 0:
        return np.zeros((0, 0))
    # (C C^T) is SPD; solve instead of inverting
    return np.linalg.solve(C @ C.T, (C @ M @ C.T).T).T


def _as_columns(vectors, name: str) -> np.ndarray:
    if isinstance(vectors, np.ndarray) and vectors.ndim == 2:
        return vectors.astype(float)
    vecs = [np.asarray(v, dtype=float).ravel() for v in vectors]
    if not vecs:
        raise InputError(f"{name} is empty")
    if len({v.size for v in vecs}) != 1:
        raise InputError(f"{name} vectors have different lengths")
    return np.column_stack(vecs)


def check_biorthonormal(E, e, tol: Tolerances = DEFAULT_TOL) -> bool:
    """Whether ``(E_r, e_s) = δ_rs`` within ``residual_abs``.

    Both arguments are lists of vectors (or arrays with vectors as columns).
    """
    Em, em = _as_columns(E, "E"), _as_columns(e, "e")
    if Em.shape != em.shape:
        raise InputError(f"count/dimension mismatch: {Em.shape} vs {em.shape}")
    gram = Em.T @ em
    return bool(np.abs(gram - np.eye(gram.shape[0])).max() <= tol.residual_abs)


def normalize_biorthonormal(E_basis: SubspaceBasis, e, tol: Tolerances = DEFAULT_TOL) -> list:
    """Vectors ``E_r`` spanning ``E_basis`` with ``(E_r, e_s) = δ_rs``.

    Raises :class:`NotBiorthonormalizableError` when the Gram matrix
    ``Q^T e`` is singular, which happens exactly when the subspace meets
    the orthogonal complement of ``span{e}``.
    """
    em = _as_columns(e, "e")
    if em.shape[0] != E_basis.ambient_dim:
        raise InputError("ambient dimension mismatch")
    if E_basis.dim != em.shape[1]:
        raise InputError(f"dim(E_basis)={E_basis.dim} but {em.shape[1]} vectors e given")
    Q = E_basis.basis
    gram = Q.T @ em
    s = np.linalg.svd(gram, compute_uv=False)
    scale = max(np.linalg.norm(em, 2), 1.0)
    if s.size == 0 or s[-1] <= tol.residual_abs * scale:
        raise NotBiorthonormalizableError(
            "Gram matrix is singular: the subspace intersects span{e}^⊥"
        )
    X = np.linalg.inv(gram).T
    E = Q @ X
    return [E[:, k].copy() for k in range(E.shape[1])]


def synthesize_D(V: SubspaceBasis, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Control matrix with ``Im(D) = V^⊥``; shape ``N x (N - dim V)``."""
    if V.dim == V.ambient_dim:
        raise InputError("V is the whole space: no boundary control column is left")
    return orth_complement(V, tol).basis.copy()


def _unit_max(x: np.ndarray) -> np.ndarray:
    # scale so the first largest-magnitude component equals 1
    k = int(np.argmax(np.abs(x) > (1 - 1e-9) * np.abs(x).max()))
    return x / x[k]


def _clustered_eigenvalues(w: np.ndarray, gap: float) -> list:
    reps = []
    for lam in sorted(w, key=lambda z: (z.real, z.imag)):
        if not any(abs(lam - r) <= gap for r in reps):
            reps.append(lam)
    return reps


def project_eigenvectors(A, partition: GroupPartition, tol: Tolerances = DEFAULT_TOL) -> list:
    """Eigenpairs of the reduced matrix obtained by projecting those of ``A``.

    For each eigenvalue ``λ`` of a compatible, diagonalizable ``A`` the
    eigenspace is split into its part inside Ker(C_p) and a complement; the
    complement's vectors ``x`` are mapped to ``C_p x``, which satisfy
    ``Ā_p (C_p x) = λ C_p x``. Exactly ``N - p`` pairs are returned and the
    reduced vectors span R^{N-p}. Eigenvectors are scaled so their first
    largest entry is 1. Complex pairs come back complex.

    Defective matrices raise :class:`UnsupportedError`; see
    :func:`project_root_vectors_exact` for integer input.
    """
    A = _square(A, partition.N, "A")
    if not is_cp_compatible(A, partition, tol):
        raise CompatibilityError("A is not C_p-compatible")
    n = A.shape[0]
    C = build_Cp(partition)
    norm = max(np.linalg.norm(A, 2), 1e-300)
    w, vecs = np.linalg.eig(A)
    if np.linalg.cond(vecs) > 1e6:
        raise UnsupportedError("A is numerically defective; use project_root_vectors_exact")
    gap = 1e-7 * norm
    out = []
    total = 0
    for lam in _clustered_eigenvalues(w, gap):
        members = np.abs(w - lam) <= gap
        size = int(members.sum())
        lam = complex(w[members].mean())
        shifted = A.astype(complex) - lam * np.eye(n)
        _, s, vh = np.linalg.svd(shifted)
        geo = int(np.count_nonzero(s <= 1e-7 * norm))
        if geo < size:
            raise UnsupportedError(f"eigenvalue {lam} is defective")
        Q = vh[n - geo:].conj().T  # eigenspace basis, n x geo
        if C.shape[0] == 0:
            continue
        CQ = C @ Q
        _, sc, vch = np.linalg.svd(CQ)
        # Q has orthonormal columns and ||C_p|| <= 2, so cut absolutely
        rank = int(np.count_nonzero(sc > 1e-8))
        for y in vch[:rank].conj():
            x = _unit_max(Q @ y)
            xbar = C @ x
            if abs(lam.imag) <= tol.residual_abs * norm:
                lam_out, xbar = lam.real, xbar.real
            else:
                lam_out = lam
            out.append((lam_out, xbar))
            total += 1
    if total != n - partition.p:  # pragma: no cover - guaranteed by compatibility
        raise UnsupportedError("projected eigenvectors do not form a basis")
    return out


def project_root_vectors_exact(A, partition: GroupPartition) -> list:
    """Projected Jordan chains of an integer matrix, in exact arithmetic.

    A Jordan basis of ``A`` is computed with sympy and every chain
    ``x_1, ..., x_r`` (``A x_l = λ x_l + x_{l+1}``, ``x_{r+1} = 0``) is mapped
    through ``C_p``. Since Ker(C_p) is invariant, zeros appear only at the tail
    of a chain; each chain is cut at its first zero. The result is a list of
    ``(λ, [C_p x_1, ..., C_p x_rbar])`` with sympy entries, satisfying
    ``Ā_p x̄_l = λ x̄_l + x̄_{l+1}`` exactly and spanning R^{N-p}.

    Only integer matrices of order at most 6 are accepted.
    """
    import sympy

    arr = np.asarray(A)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] != partition.N:
        raise InputError("A must be square of order N")
    if arr.shape[0] > 6:
        raise UnsupportedError("exact root-vector path limited to order <= 6")
    if not np.all(np.equal(np.mod(arr.astype(float), 1), 0)):
        raise UnsupportedError("exact root-vector path needs integer entries")
    M = sympy.Matrix(arr.astype(int).tolist())
    C = sympy.Matrix(build_Cp(partition).astype(int).tolist()) if partition.p < partition.N else None
    e, _ = ker_Cp_vectors(partition)
    if C is not None and any(v != 0 for v in C * M * sympy.Matrix(e.astype(int).tolist())):
        raise CompatibilityError("A is not C_p-compatible")
    try:
        P, J = M.jordan_form()
    except Exception as exc:  # sympy raises several types here
        raise UnsupportedError(f"sympy could not compute the Jordan form: {exc}") from exc
    n = M.shape[0]
    # split J into blocks: a block ends where the superdiagonal entry is 0
    chains = []
    start = 0
    for i in range(n):
        if i == n - 1 or J[i, i + 1] == 0:
            lam = J[start, start]
            # sympy columns p_start..p_i satisfy A p_k = lam p_k + p_{k-1}
            cols = [P[:, k] for k in range(i, start - 1, -1)]
            chains.append((sympy.nsimplify(lam), cols))
            start = i + 1
    if C is None:
        return []
    out = []
    for lam, cols in chains:
        projected = []
        for x in cols:
            xb = sympy.simplify(C * x)
            if all(v == 0 for v in xb):
                break
            projected.append(xb)
        if projected:
            out.append((lam, projected))
    return out


@dataclass(frozen=True)
class SyncProblem:
    """Coupling data ``(A, B, D)`` plus a grouping of the N components.

    ``D`` must have full column rank and ``B`` must be similar to a symmetric
    matrix; pass ``validate=False`` to skip both checks for exploratory runs.
    """

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    partition: GroupPartition
    validate: bool = field(default=True, compare=False)
    tol: Tolerances = field(default=DEFAULT_TOL, compare=False, repr=False)

    def __post_init__(self):
        A = _square(self.A, None, "A")
        n = A.shape[0]
        B = _square(self.B, n, "B")
        D = as_matrix(self.D, "D")
        if D.shape[0] != n:
            raise InputError(f"D must have {n} rows, got {D.shape[0]}")
        part = self.partition
        if not isinstance(part, GroupPartition):
            part = GroupPartition(tuple(part))
        if part.N != n:
            raise InputError(f"partition covers {part.N} components but N={n}")
        if self.validate:
            if D.shape[1] > n:
                raise InputError("D has more columns than rows")
            if rank_of(D, self.tol) != D.shape[1]:
                raise InputError("D must have full column rank")
            if not is_similar_to_symmetric(B, self.tol):
                raise InputError("B must be similar to a symmetric matrix")
        for name, val in (("A", A), ("B", B), ("D", D), ("partition", part)):
            object.__setattr__(self, name, val)

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def M(self) -> int:
        return self.D.shape[1]

    def transposed(self) -> "SyncProblem":
        """Coupling of the adjoint system: ``A^T``, ``B^T``, same D."""
        return SyncProblem(self.A.T.copy(), self.B.T.copy(), self.D, self.partition, validate=False)

    def with_D(self, D) -> "SyncProblem":
        return SyncProblem(self.A, self.B, D, self.partition, validate=self.validate, tol=self.tol)


@dataclass(frozen=True)
class SyncAnalysis:
    rank_R: int
    dim_ker_RT: int
    cp_compatible_A: bool
    cp_compatible_B: bool
    reduced_A: Optional[np.ndarray]
    reduced_B: Optional[np.ndarray]
    rank_CpR: int
    biorthonormal: bool
    necessary_ok: bool
    N: int
    p: int
    reachability: ReachabilityReport = field(repr=False)
    E_vectors: Optional[list] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        def mat(m):
            return None if m is None else np.asarray(m).tolist()

        return {
            "N": self.N,
            "p": self.p,
            "rank_R": self.rank_R,
            "dim_ker_RT": self.dim_ker_RT,
            "cp_compatible_A": self.cp_compatible_A,
            "cp_compatible_B": self.cp_compatible_B,
            "reduced_A": mat(self.reduced_A),
            "reduced_B": mat(self.reduced_B),
            "rank_CpR": self.rank_CpR,
            "biorthonormal": self.biorthonormal,
            "necessary_ok": self.necessary_ok,
            "ker_RT": self.reachability.ker_RT.basis.T.tolist(),
            "E_vectors": None if self.E_vectors is None else [np.asarray(v).tolist() for v in self.E_vectors],
        }


def analyze(problem: SyncProblem, tol: Tolerances = DEFAULT_TOL) -> SyncAnalysis:
    """Collect every algebraic condition for synchronization by p groups.

    ``rank_CpR`` is computed through the reduced triple ``(Ā_p, B̄_p, C_p D)``
    when both couplings are compatible (the reduced enlarged matrix equals
    ``C_p R``), and directly as ``rank(C_p Q_R)`` otherwise.
    """
    part = problem.partition
    n, p = problem.N, part.p
    rep = word_span(problem.A, problem.B, problem.D, tol)
    C = build_Cp(part)
    ca = is_cp_compatible(problem.A, part, tol)
    cb = is_cp_compatible(problem.B, part, tol)
    red_A = reduced_matrix(problem.A, part, tol) if ca else None
    red_B = reduced_matrix(problem.B, part, tol) if cb else None
    if n - p == 0:
        rank_cpr = 0
    elif ca and cb:
        rank_cpr = word_span(red_A, red_B, C @ problem.D, tol).rank_R
    elif rep.im_R.dim == 0:
        rank_cpr = 0
    else:
        rank_cpr = rank_of(C @ rep.im_R.basis, tol)

    E_vectors = None
    biortho = False
    if rep.ker_RT.dim == p:
        e, _ = ker_Cp_vectors(part)
        try:
            E_vectors = normalize_biorthonormal(rep.ker_RT, e, tol)
            biortho = check_biorthonormal(E_vectors, e, tol)
        except NotBiorthonormalizableError:
            biortho = False
    return SyncAnalysis(
        rank_R=rep.rank_R,
        dim_ker_RT=rep.ker_RT.dim,
        cp_compatible_A=ca,
        cp_compatible_B=cb,
        reduced_A=red_A,
        reduced_B=red_B,
        rank_CpR=rank_cpr,
        biorthonormal=biortho,
        necessary_ok=rep.rank_R >= n - p,
        N=n,
        p=p,
        reachability=rep,
        E_vectors=E_vectors,
    )
