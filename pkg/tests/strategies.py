"""Hypothesis strategies shared by the property tests."""

import numpy as np
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

finite = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False, width=64)


@st.composite
def matrices(draw, rows=None, cols=None, max_dim=6):
    r = rows if rows is not None else draw(st.integers(1, max_dim))
    c = cols if cols is not None else draw(st.integers(1, max_dim))
    return draw(arrays(np.float64, (r, c), elements=finite))


@st.composite
def seeds(draw):
    return draw(st.integers(0, 2**32 - 1))


def random_subspace(rng, n, k):
    from robinsync.linalg import SubspaceBasis

    if k == 0:
        return SubspaceBasis.zero(n)
    q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return SubspaceBasis(n, q)


def well_conditioned(rng, n, cap=1e3):
    while True:
        P = rng.standard_normal((n, n))
        if np.linalg.cond(P) <= cap:
            return P


def random_partition(rng, n):
    from robinsync.syncalg import GroupPartition

    cuts = sorted(rng.choice(np.arange(1, n), size=rng.integers(0, n), replace=False).tolist()) if n > 1 else []
    return GroupPartition(tuple([0] + cuts + [n]))


def compatible_matrix(rng, partition, symmetric_spectrum=False):
    """Random matrix mapping Ker(C_p) into itself.

    Built as ``P diag-blocks P^{-1}`` where the first p columns of P are the
    group indicators, so Ker(C_p) is invariant by construction.
    """
    from robinsync.syncalg import ker_Cp_vectors

    n, p = partition.N, partition.p
    e, _ = ker_Cp_vectors(partition)
    while True:
        comp = rng.standard_normal((n, n - p))
        P = np.hstack([e, comp])
        if np.linalg.cond(P) < 1e3:
            break
    if symmetric_spectrum:
        lam = rng.standard_normal(n)
        inner = np.diag(lam)
        inner[:p, p:] = 0.0
    else:
        inner = rng.standard_normal((n, n))
        inner[p:, :p] = 0.0  # maps span(e) into span(e)
    return P @ inner @ np.linalg.inv(P)


def _invariant_map(rng, P, d):
    """Random matrix that maps span(P[:, :d]) into itself."""
    n = P.shape[0]
    T = rng.standard_normal((n, n))
    T[d:, :d] = 0.0
    return P @ T @ np.linalg.inv(P)


def planted_instance(rng, n=None, max_n=6):
    """Random ``(A, B, D, W)`` with ``W`` inside Ker(D^T) and invariant under A^T, B^T.

    ``dim W`` is drawn from 0..n-1, so the uncontrollable part is usually
    nontrivial; ``D`` has between 1 and ``n - dim W`` columns orthogonal to W.
    """
    n = n if n is not None else int(rng.integers(1, max_n + 1))
    d = int(rng.integers(0, n))
    W = random_subspace(rng, n, d)
    comp = rng.standard_normal((n, n - d))
    P = np.hstack([W.basis, comp])
    while np.linalg.cond(P) > 1e3:
        comp = rng.standard_normal((n, n - d))
        P = np.hstack([W.basis, comp])
    At = _invariant_map(rng, P, d)
    # a second, different complement for B^T
    comp2 = rng.standard_normal((n, n - d))
    P2 = np.hstack([W.basis, comp2])
    while np.linalg.cond(P2) > 1e3:
        comp2 = rng.standard_normal((n, n - d))
        P2 = np.hstack([W.basis, comp2])
    Bt = _invariant_map(rng, P2, d)
    m = int(rng.integers(1, n - d + 1))
    perp = np.eye(n) - W.projector()
    D = perp @ rng.standard_normal((n, m))
    return At.T, Bt.T, D, W


def random_instance(rng, max_n=6):
    """Planted structure half of the time, plain Gaussian data otherwise."""
    if rng.random() < 0.5:
        A, B, D, _ = planted_instance(rng, max_n=max_n)
        return A, B, D
    n = int(rng.integers(1, max_n + 1))
    m = int(rng.integers(1, n + 1))
    return rng.standard_normal((n, n)), rng.standard_normal((n, n)), rng.standard_normal((n, m))


def unimodular(rng, n, ops=None):
    """Integer matrix with determinant 1 and its exact integer inverse."""
    P = np.eye(n, dtype=np.int64)
    Pinv = np.eye(n, dtype=np.int64)
    for _ in range(ops if ops is not None else 2 * n):
        i, j = rng.choice(n, size=2, replace=False) if n > 1 else (0, 0)
        if i == j:
            break
        c = int(rng.choice([-1, 1]))
        E = np.eye(n, dtype=np.int64)
        E[i, j] = c
        Einv = np.eye(n, dtype=np.int64)
        Einv[i, j] = -c
        P, Pinv = P @ E, Einv @ Pinv
    return P, Pinv


def integer_invariant_instance(rng, max_n=6):
    """Integer ``(A, D)`` with ``Im D`` inside an A-invariant subspace of dimension r.

    ``A = P T P^{-1}`` with ``T`` block upper triangular and ``P`` unimodular,
    so the span of the first r columns of P is invariant; r = n gives
    unstructured data. Entries stay small enough to be exact in float64.
    """
    n = int(rng.integers(1, max_n + 1))
    r = int(rng.integers(1, n + 1))
    T = rng.integers(-3, 4, size=(n, n))
    T[r:, :r] = 0
    P, Pinv = unimodular(rng, n)
    A = P @ T @ Pinv
    m = int(rng.integers(1, r + 1))
    D = P[:, :r] @ rng.integers(-2, 3, size=(r, m))
    D[:, np.all(D == 0, axis=0)] = P[:, :1]
    return A, D
