"""Finite-difference simulation of the coupled wave system on (0, 1).

Each of the N components obeys ``u'' - u_xx + (A U) = 0``. The end x=0 is
clamped. At x=1 the Robin condition ``U_x + B U = D H`` is imposed through a
centered ghost node. Time stepping is velocity Verlet, which is the leapfrog
scheme written in (U, V) form.

With trapezoid weights ``w_j`` (``h`` inside, ``h/2`` at x=1), the semi-discrete
operator ``L`` satisfies ``W L = S - W (x) A - e_J e_J^T (x) B`` with ``S``
symmetric. Hence ``L^T = W L_adj W^{-1}``, where ``L_adj`` is the same
discretization with ``A^T`` and ``B^T``. The discrete adjoint of the forward
scheme is therefore the adjoint system run through the same code, and the
discrete pairing below is exact up to round-off.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, InstabilityError
from .syncalg import SyncProblem

__all__ = [
    "CFL_MAX",
    "Grid1D",
    "SimConfig",
    "WaveState",
    "ControlSchedule",
    "WaveTrajectory",
    "WaveOperator",
    "step_forward",
    "simulate",
    "simulate_adjoint",
    "duality_defect",
    "energy",
    "write_trajectory_csv",
    "write_trace_csv",
]

CFL_MAX = 0.9
_GROWTH_MAX = 10.0


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid ``x_j = j h`` on [0, 1] with ``h = 1/J``."""

    J: int

    def __post_init__(self):
        if int(self.J) != self.J or self.J < 8:
            raise InputError(f"grid needs an integer J >= 8, got {self.J!r}")
        object.__setattr__(self, "J", int(self.J))

    @property
    def h(self) -> float:
        return 1.0 / self.J

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.J + 1) / self.J

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights; the node at x=0 carries no mass since it is clamped."""
        w = np.full(self.J + 1, self.h)
        w[0] = 0.0
        w[-1] = 0.5 * self.h
        return w


@dataclass(frozen=True)
class SimConfig:
    """Horizon ``T`` and step ``dt``; ``T/dt`` must be an integer up to rounding."""

    T: float
    dt: float

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise InputError(f"T must be positive, got {self.T!r}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InputError(f"dt must be positive, got {self.dt!r}")
        k = self.T / self.dt
        if abs(k - round(k)) > 1e-8 * max(1.0, k):
            raise InputError(f"T/dt = {k} is not an integer")

    @classmethod
    def from_cfl(cls, T: float, grid: Grid1D, cfl: float = 0.5) -> "SimConfig":
        """Largest step ``dt <= cfl*h`` that divides ``T`` evenly."""
        steps = int(np.ceil(T / (cfl * grid.h) - 1e-9))
        return cls(T, T / steps)

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def cfl(self, grid: Grid1D) -> float:
        return self.dt / grid.h

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass
class WaveState:
    """Displacement ``U`` and velocity ``V`` sampled on the grid, shape ``(N, J+1)``."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.U = np.array(self.U, dtype=float)
        self.V = np.array(self.V, dtype=float)
        if self.U.ndim != 2 or self.U.shape != self.V.shape:
            raise InputError(f"U and V must be equal 2-D shapes, got {self.U.shape}, {self.V.shape}")
        if not (np.all(np.isfinite(self.U)) and np.all(np.isfinite(self.V))):
            raise InputError("state has non-finite entries")
        if np.any(self.U[:, 0] != 0.0) or np.any(self.V[:, 0] != 0.0):
            raise InputError("state must vanish at the clamped end x=0")

    @classmethod
    def zeros(cls, N: int, grid: Grid1D) -> "WaveState":
        return cls(np.zeros((N, grid.J + 1)), np.zeros((N, grid.J + 1)))

    @classmethod
    def from_functions(cls, grid: Grid1D, u0, v0=None) -> "WaveState":
        """Sample callables ``u0(x) -> (N, len(x))`` and ``v0`` on the grid."""
        x = grid.x
        U = np.atleast_2d(np.asarray(u0(x), dtype=float))
        V = np.zeros_like(U) if v0 is None else np.atleast_2d(np.asarray(v0(x), dtype=float))
        U[:, 0] = 0.0
        V[:, 0] = 0.0
        return cls(U, V)

    @property
    def N(self) -> int:
        return self.U.shape[0]

    def copy(self) -> "WaveState":
        return WaveState(self.U.copy(), self.V.copy())


@dataclass
class ControlSchedule:
    """Samples ``H[:, n]`` of the boundary control at ``t_n = n dt``.

    ``window`` is the closed time interval outside of which the samples must
    vanish; it defaults to the whole horizon.
    """

    H: np.ndarray
    dt: float
    window: tuple | None = None

    def __post_init__(self):
        self.H = np.array(self.H, dtype=float)
        if self.H.ndim == 1:
            self.H = self.H.reshape(1, -1)
        if self.H.ndim != 2 or self.H.shape[1] < 2:
            raise InputError(f"H must be M x (steps+1), got shape {self.H.shape}")
        if not np.all(np.isfinite(self.H)):
            raise InputError("control has non-finite samples")
        if self.window is None:
            self.window = (0.0, self.T)
        lo, hi = (float(v) for v in self.window)
        if not (0.0 <= lo <= hi <= self.T + 1e-12):
            raise InputError(f"control window {self.window} not inside [0, {self.T}]")
        self.window = (lo, hi)
        t = self.times()
        outside = (t < lo - 1e-12) | (t > hi + 1e-12)
        if np.any(self.H[:, outside] != 0.0):
            raise InputError("control is nonzero outside its window")

    @classmethod
    def zeros(cls, M: int, cfg: SimConfig) -> "ControlSchedule":
        return cls(np.zeros((M, cfg.steps + 1)), cfg.dt)

    @property
    def M(self) -> int:
        return self.H.shape[0]

    @property
    def steps(self) -> int:
        return self.H.shape[1] - 1

    @property
    def T(self) -> float:
        return self.steps * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass
class WaveTrajectory:
    """Stored states and the boundary trace at x=1.

    ``U`` and ``V`` have shape ``(K, N, J+1)`` at the times ``t``. ``trace``
    has shape ``(steps+1, N)`` at every step, times ``t_trace``.
    """

    t: np.ndarray
    U: np.ndarray
    V: np.ndarray
    t_trace: np.ndarray
    trace: np.ndarray
    T_control: float
    energy: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.U.shape != self.V.shape or self.U.shape[0] != self.t.shape[0]:
            raise InputError("inconsistent trajectory shapes")
        if self.trace.shape != (self.t_trace.shape[0], self.U.shape[1]):
            raise InputError("inconsistent trace shape")

    @property
    def final(self) -> WaveState:
        return WaveState(self.U[-1], self.V[-1])

    def state_at(self, t: float) -> WaveState:
        k = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise InputError(f"time {t} was not stored")
        return WaveState(self.U[k], self.V[k])


class WaveOperator:
    """Spatial operator ``L`` of the coupled system plus its boundary input.

    ``accel(U, h_t)`` returns ``L U + g h_t``: the second difference minus
    ``A U`` at interior nodes, the ghost-node Robin closure at x=1, and zero
    at the clamped node.
    """

    def __init__(self, A, B, D, grid: Grid1D):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.D = np.asarray(D, dtype=float)
        self.grid = grid
        self.J = grid.J
        self.inv_h2 = 1.0 / grid.h ** 2
        self.two_over_h = 2.0 / grid.h
        self._zero_A = not np.any(self.A)

    @classmethod
    def forward(cls, problem: SyncProblem, grid: Grid1D) -> "WaveOperator":
        return cls(problem.A, problem.B, problem.D, grid)

    @classmethod
    def adjoint(cls, problem: SyncProblem, grid: Grid1D) -> "WaveOperator":
        return cls(problem.A.T, problem.B.T, problem.D, grid)

    def accel(self, U: np.ndarray, h_t=None) -> np.ndarray:
        J = self.J
        a = np.empty_like(U)
        a[:, 0] = 0.0
        a[:, 1:J] = (U[:, 2:] - 2.0 * U[:, 1:J] + U[:, : J - 1]) * self.inv_h2
        a[:, J] = 2.0 * (U[:, J - 1] - U[:, J]) * self.inv_h2 - self.two_over_h * (self.B @ U[:, J])
        if h_t is not None:
            a[:, J] += self.two_over_h * (self.D @ h_t)
        if not self._zero_A:
            a[:, 1:] -= self.A @ U[:, 1:]
        return a

    def spectral_bound(self) -> float:
        """Upper bound on the spectral radius of ``L`` (Gershgorin-type)."""
        h = self.grid.h
        return 4.0 / h ** 2 + np.linalg.norm(self.A, 2) + 2.0 * np.linalg.norm(self.B, 2) / h

    def energy(self, U: np.ndarray, V: np.ndarray) -> float:
        """Discrete energy with the symmetric parts of A and B."""
        w = self.grid.weights
        h = self.grid.h
        As = 0.5 * (self.A + self.A.T)
        Bs = 0.5 * (self.B + self.B.T)
        kin = np.sum(w * V * V)
        grad = np.sum((U[:, 1:] - U[:, :-1]) ** 2) / h
        pot = np.sum(w * U * (As @ U))
        UJ = U[:, -1]
        return 0.5 * float(kin + grad + pot + UJ @ Bs @ UJ)

    def plain_energy(self, U: np.ndarray, V: np.ndarray) -> float:
        w = self.grid.weights
        return 0.5 * float(np.sum(w * V * V) + np.sum((U[:, 1:] - U[:, :-1]) ** 2) / self.grid.h)


def _check_stability(op: WaveOperator, cfg: SimConfig):
    grid = op.grid
    if cfg.dt > CFL_MAX * grid.h * (1 + 1e-12):
        raise InstabilityError(
            f"time step dt={cfg.dt:g} exceeds {CFL_MAX}*h={CFL_MAX * grid.h:g} (CFL condition)"
        )
    # leapfrog needs dt^2 rho(L) <= 4; couplings eat into the margin
    if cfg.dt ** 2 * op.spectral_bound() > 4.0:
        raise InstabilityError(
            f"time step dt={cfg.dt:g} too large for the coupling strength on this grid"
        )


def _check_state(state: WaveState, N: int, grid: Grid1D):
    if state.U.shape != (N, grid.J + 1):
        raise InputError(f"state shape {state.U.shape} does not match (N, J+1)=({N}, {grid.J + 1})")


class _Guard:
    """Runtime blow-up detection on control-free steps."""

    def __init__(self, op: WaveOperator):
        self.op = op
        self.prev = None

    def __call__(self, U, V, homogeneous: bool, n: int):
        e = self.op.plain_energy(U, V)
        if not np.isfinite(e):
            raise InstabilityError(f"non-finite state at step {n}")
        if homogeneous and self.prev is not None and self.prev > 0 and e > _GROWTH_MAX * self.prev:
            raise InstabilityError(f"energy grew by {e / self.prev:.3g}x in one step at step {n}")
        self.prev = e


def step_forward(problem: SyncProblem, grid: Grid1D, cfg: SimConfig, state: WaveState,
                 H_t=None, H_next=None) -> WaveState:
    """One Verlet step from ``t`` to ``t + dt``.

    ``H_t`` is the control sample at ``t`` and ``H_next`` the sample at
    ``t + dt`` (defaults to ``H_t``); ``None`` means no control.
    """
    op = WaveOperator.forward(problem, grid)
    _check_stability(op, cfg)
    _check_state(state, problem.N, grid)
    if H_next is None:
        H_next = H_t
    dt = cfg.dt
    U = state.U.copy()
    V = state.V + 0.5 * dt * op.accel(U, None if H_t is None else np.asarray(H_t, float))
    U += dt * V
    V += 0.5 * dt * op.accel(U, None if H_next is None else np.asarray(H_next, float))
    guard = _Guard(op)
    guard(state.U, state.V, True, 0)
    guard(U, V, H_t is None or not np.any(H_t), 1)
    return WaveState(U, V)


def _run(op: WaveOperator, cfg: SimConfig, init: WaveState, H, post_steps: int,
         stride: int, track_energy: bool) -> WaveTrajectory:
    """Shared stepping loop. ``H`` is ``(M, steps+1)`` or None."""
    if stride < 1:
        raise InputError("stride must be >= 1")
    dt = cfg.dt
    K = cfg.steps
    total = K + post_steps
    U = init.U.copy()
    V = init.V.copy()
    N = U.shape[0]

    def sample(n):
        if H is None or n > K:
            return None
        return H[:, n]

    keep = list(range(0, total + 1, stride))
    if keep[-1] != total:
        keep.append(total)
    keep_set = set(keep)
    Us = np.empty((len(keep), N, U.shape[1]))
    Vs = np.empty_like(Us)
    trace = np.empty((total + 1, N))
    energies = np.empty(total + 1) if track_energy else None
    guard = _Guard(op)

    slot = 0
    a = op.accel(U, sample(0))
    for n in range(total + 1):
        if n > 0:
            V += 0.5 * dt * a
            U += dt * V
            a = op.accel(U, sample(n))
            V += 0.5 * dt * a
        h_n = sample(n)
        guard(U, V, h_n is None or not np.any(h_n), n)
        trace[n] = U[:, -1]
        if track_energy:
            energies[n] = op.energy(U, V)
        if n in keep_set:
            Us[slot] = U
            Vs[slot] = V
            slot += 1
    t_all = np.arange(total + 1) * dt
    return WaveTrajectory(
        t=t_all[keep], U=Us, V=Vs, t_trace=t_all, trace=trace, T_control=cfg.T, energy=energies
    )


def _post_steps(cfg: SimConfig, post_window: float) -> int:
    if post_window < 0:
        raise InputError("post_window must be nonnegative")
    k = post_window / cfg.dt
    if abs(k - round(k)) > 1e-8 * max(1.0, k):
        raise InputError("post_window must be a multiple of dt")
    return int(round(k))


def simulate(problem: SyncProblem, grid: Grid1D, cfg: SimConfig, init: WaveState,
             ctrl: ControlSchedule | None = None, post_window: float = 0.0, stride: int = 1,
             track_energy: bool = False) -> WaveTrajectory:
    """Controlled evolution over [0, T], then ``post_window`` more time with no control."""
    op = WaveOperator.forward(problem, grid)
    _check_stability(op, cfg)
    _check_state(init, problem.N, grid)
    H = None
    if ctrl is not None:
        if ctrl.H.shape != (problem.M, cfg.steps + 1):
            raise InputError(
                f"control shape {ctrl.H.shape} does not match (M, steps+1)=({problem.M}, {cfg.steps + 1})"
            )
        if abs(ctrl.dt - cfg.dt) > 1e-12 * cfg.dt:
            raise InputError("control sampled with a different dt")
        H = ctrl.H
    return _run(op, cfg, init, H, _post_steps(cfg, post_window), stride, track_energy)


def simulate_adjoint(problem: SyncProblem, grid: Grid1D, cfg: SimConfig, init: WaveState,
                     post_window: float = 0.0, stride: int = 1,
                     track_energy: bool = False) -> WaveTrajectory:
    """Homogeneous evolution with ``A^T`` and ``B^T`` in place of ``A`` and ``B``."""
    op = WaveOperator.adjoint(problem, grid)
    _check_stability(op, cfg)
    _check_state(init, problem.N, grid)
    return _run(op, cfg, init, None, _post_steps(cfg, post_window), stride, track_energy)


def energy(problem: SyncProblem, grid: Grid1D, state: WaveState) -> float:
    """Energy ``1/2 (|V|^2 + |U_x|^2 + (A_s U, U)) + 1/2 (B_s U(1), U(1))``."""
    return WaveOperator.forward(problem, grid).energy(state.U, state.V)


def _pair(w, X, Y) -> float:
    return float(np.sum(w * X * Y))


def duality_defect(problem: SyncProblem, grid: Grid1D, cfg: SimConfig, init_fwd: WaveState,
                   ctrl: ControlSchedule | None, init_adj: WaveState) -> float:
    """Defect of the forward/adjoint pairing identity at time T.

    With ``P(t) = <V, Phi>_w - <U, Phi'>_w`` the identity reads
    ``P(T) = P(0) + int_0^T (D H(t), Phi(t, 1)) dt``, the time integral taken
    by the trapezoid rule on the step grid. Returns ``|P(T) - RHS|``.
    """
    fwd = simulate(problem, grid, cfg, init_fwd, ctrl)
    adj = simulate_adjoint(problem, grid, cfg, init_adj)
    w = grid.weights
    lhs = _pair(w, fwd.V[-1], adj.U[-1]) - _pair(w, fwd.U[-1], adj.V[-1])
    rhs = _pair(w, init_fwd.V, init_adj.U) - _pair(w, init_fwd.U, init_adj.V)
    if ctrl is not None:
        flux = np.einsum("mn,km,nk->n", ctrl.H, problem.D, adj.trace)
        c = np.full(flux.size, cfg.dt)
        c[0] = c[-1] = 0.5 * cfg.dt
        rhs += float(c @ flux)
    return abs(lhs - rhs)


def write_trajectory_csv(traj: WaveTrajectory, path) -> None:
    """Long-format export with header ``t,k,j,U,V``."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "k", "j", "U", "V"])
        for i, t in enumerate(traj.t):
            for k in range(traj.U.shape[1]):
                for j in range(traj.U.shape[2]):
                    out.writerow([f"{t:.17g}", k, j, f"{traj.U[i, k, j]:.17g}", f"{traj.V[i, k, j]:.17g}"])


def write_trace_csv(traj: WaveTrajectory, path) -> None:
    """Boundary trace at x=1 with header ``t,k,value``."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "k", "value"])
        for n, t in enumerate(traj.t_trace):
            for k in range(traj.trace.shape[1]):
                out.writerow([f"{t:.17g}", k, f"{traj.trace[n, k]:.17g}"])
