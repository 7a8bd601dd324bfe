"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import numpy as np
import pytest
import sympy
from scipy.optimize import brentq

from acceptance_log import record
from robinsync.control import (
    ControlObjective,
    closed_subsystem_floor,
    epsilon_sweep,
    generic_initial_state,
    indicator_controls_scenario,
    is_monotone,
    objective_and_gradient,
    reduced_null_problem,
    sync_metrics,
    time_weights,
)
from robinsync.linalg import (
    SubspaceBasis,
    column_space,
    is_similar_to_symmetric,
    principal_angles,
    right_kernel,
)
from robinsync.reachability import classical_kalman, largest_invariant_in_kernel, word_span
from robinsync.syncalg import (
    GroupPartition,
    SyncProblem,
    analyze,
    build_Cp,
    is_cp_compatible,
    project_eigenvectors,
    reduced_matrix,
)
from robinsync.wavesim import ControlSchedule, Grid1D, SimConfig, WaveState, simulate
from strategies import compatible_matrix, integer_invariant_instance, random_instance, random_partition

ANGLE_TOL = 1e-8
EPS_SWEEP = (1e-1, 1e-2, 1e-3, 1e-4)

A_FIX = np.array([[2.0, -1.0], [-1.0, 2.0]])
D_FIX = np.array([[1.0], [-1.0]]) / np.sqrt(2)
PART = GroupPartition.single(2)

# desk-scale control setting: T = 4, J = 50, dt = h/2
GRID = Grid1D(50)
CFG = SimConfig(4.0, 0.01)


def max_angle(a: SubspaceBasis, b: SubspaceBasis) -> float:
    if a.dim != b.dim:
        return np.inf
    angles = principal_angles(a, b)
    return float(angles.max()) if angles.size else 0.0


@pytest.fixture(scope="module")
def init():
    return generic_initial_state(2, GRID, seed=0)


@pytest.fixture(scope="module")
def sync_sweep(init):
    problem = SyncProblem(A_FIX, np.eye(2), D_FIX, PART)
    return epsilon_sweep(problem, GRID, CFG, init, ControlObjective("sync"), EPS_SWEEP)


@pytest.fixture(scope="module")
def obstructed_scenario(init):
    problem = SyncProblem(A_FIX, np.eye(2), D_FIX, PART)
    return indicator_controls_scenario(problem, GRID, CFG, init, eps_list=EPS_SWEEP)


@pytest.fixture(scope="module")
def augmented_problem():
    return SyncProblem(A_FIX, np.eye(2), np.hstack([D_FIX, np.ones((2, 1))]), PART)


def test_criterion_01_oracle_equivalence():
    rng = np.random.default_rng(101)
    worst, failures, nontrivial = 0.0, 0, 0
    trials = 600
    for _ in range(trials):
        A, B, D = random_instance(rng)
        fast = word_span(A, B, D).ker_RT
        oracle = largest_invariant_in_kernel(A.T, B.T, right_kernel(D.T))
        ang = max_angle(fast, oracle)
        worst = max(worst, ang)
        failures += ang > ANGLE_TOL
        nontrivial += fast.dim > 0
    ok = failures == 0
    record(1, "oracle equivalence", ok,
           f"{trials} triples ({nontrivial} with nontrivial kernel), max angle {worst:.2e}, failures {failures}")
    assert ok


def exact_kalman(A: np.ndarray, D: np.ndarray) -> sympy.Matrix:
    M = sympy.Matrix(A.tolist())
    block = sympy.Matrix(D.tolist())
    blocks = [block]
    for _ in range(A.shape[0] - 1):
        block = M * block
        blocks.append(block)
    return sympy.Matrix.hstack(*blocks)


def test_criterion_02_kalman_collapse():
    # integer data keeps the classical matrix exact, so its rank and left kernel are
    # decided in rational arithmetic rather than by a float cutoff
    rng = np.random.default_rng(202)
    worst, failures, mismatched_entries = 0.0, 0, 0
    trials = 600
    for _ in range(trials):
        A, D = integer_invariant_instance(rng)
        n = A.shape[0]
        K = exact_kalman(A, D)
        mismatched_entries += not np.array_equal(np.array(K.tolist(), dtype=float),
                                                 classical_kalman(A.astype(float), D.astype(float)))
        exact_ker = K.T.nullspace()
        grown = word_span(A.astype(float), np.eye(n), D.astype(float))
        if len(exact_ker) != grown.ker_RT.dim or K.rank() != grown.rank_R:
            failures += 1
            continue
        if exact_ker:
            oracle = column_space(np.array(sympy.Matrix.hstack(*exact_ker).evalf(30).tolist(), dtype=float))
            ang = max_angle(grown.ker_RT, oracle)
            worst = max(worst, ang)
            failures += ang > ANGLE_TOL
    ok = failures == 0 and mismatched_entries == 0
    record(2, "Kalman collapse for B = I", ok,
           f"{trials} integer instances, exact rank agreement, max angle {worst:.2e}, failures {failures}, "
           f"float Kalman mismatches {mismatched_entries}")
    assert ok


def test_criterion_03_compatibility_and_reduction():
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(500):
        part = random_partition(rng, int(rng.integers(2, 7)))
        M = compatible_matrix(rng, part)
        C = build_Cp(part)
        if C.shape[0] == 0:
            continue
        res = np.linalg.norm(C @ M - reduced_matrix(M, part) @ C, 2) / np.linalg.norm(M, 2)
        worst = max(worst, res)
    disagreements = 0
    for k in range(1000):
        n = int(rng.integers(2, 7))
        M = rng.standard_normal((n, n))
        if k % 2:
            M[:, -1] += rng.standard_normal() - M.sum(axis=1)
        rows_equal = np.ptp(M.sum(axis=1)) <= 1e-9 * np.linalg.norm(M, 2)
        e = np.ones(n)
        in_span = SubspaceBasis.from_vectors([e]).residual(M @ e) <= 1e-9 * np.linalg.norm(M, 2)
        flag = is_cp_compatible(M, GroupPartition.single(n))
        disagreements += not (rows_equal == in_span == flag)
    ok = worst <= 1e-9 and disagreements == 0
    record(3, "compatibility and reduction", ok,
           f"max |C M - M_bar C|/|M| = {worst:.2e} over 500 matrices; row-sum disagreements {disagreements}/1000")
    assert ok


def test_criterion_04_projected_eigenvectors():
    rng = np.random.default_rng(404)
    worst_res, worst_eig, not_similar, count = 0.0, 0.0, 0, 0
    while count < 300:
        part = random_partition(rng, int(rng.integers(2, 7)))
        if part.p == part.N:
            continue
        count += 1
        A = compatible_matrix(rng, part, symmetric_spectrum=True)
        Ab = reduced_matrix(A, part)
        reduced_eigs = np.linalg.eigvals(Ab)
        for lam, v in project_eigenvectors(A, part):
            worst_res = max(worst_res, np.linalg.norm(Ab @ v - lam * v) / np.linalg.norm(v))
            worst_eig = max(worst_eig, np.min(np.abs(reduced_eigs - lam)))
        not_similar += not (is_similar_to_symmetric(A) and is_similar_to_symmetric(Ab))
    ok = worst_res <= 1e-8 and worst_eig <= 1e-8 and not_similar == 0
    record(4, "projected eigenvectors", ok,
           f"300 matrices, max residual {worst_res:.2e}, max eigenvalue error {worst_eig:.2e}, "
           f"similarity lost {not_similar}")
    assert ok


def test_criterion_05_simulator_order():
    scalar = SyncProblem([[0.0]], [[0.0]], [[1.0]], GroupPartition.single(1))
    errs = []
    for J in (50, 100, 200):
        g = Grid1D(J)
        init = WaveState.from_functions(g, lambda x: np.sin(np.pi * x / 2)[None])
        traj = simulate(scalar, g, SimConfig(4.0, 0.5 / J), init)
        exact = np.cos(np.pi * traj.t / 2)[:, None] * np.sin(np.pi * g.x / 2)[None, :]
        errs.append(np.max(np.abs(traj.U[:, 0, :] - exact)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    beta = 1.0
    k = brentq(lambda k: k * np.cos(k) + beta * np.sin(k), np.pi / 2, np.pi)
    robin = SyncProblem([[0.0]], [[beta]], [[1.0]], GroupPartition.single(1))
    g = Grid1D(200)
    traj = simulate(robin, g, SimConfig(4.0, 0.0025),
                    WaveState.from_functions(g, lambda x: np.sin(k * x)[None]), track_energy=True)
    drift = float(np.max(np.abs(traj.energy - traj.energy[0])) / traj.energy[0])
    ok = bool(np.all(np.abs(orders - 2.0) <= 0.3)) and drift <= 1e-4
    record(5, "simulator order", ok,
           f"orders {orders.round(3).tolist()}, Robin energy drift {drift:.2e} (J=200, T=4)")
    assert ok


def test_criterion_06_gradient_check():
    rng = np.random.default_rng(606)
    grid = Grid1D(100)
    cfg = SimConfig(4.0, 0.005)
    init = generic_initial_state(2, grid, seed=6)
    w = time_weights(cfg)
    cases = [
        (SyncProblem(A_FIX, np.eye(2), np.eye(2), PART), ControlObjective("null", 1e-3)),
        (SyncProblem(A_FIX, np.eye(2), D_FIX, PART), ControlObjective("sync", 1e-2)),
    ]
    worst, probes = 0.0, 0
    for problem, obj in cases:
        H = 0.1 * rng.standard_normal((problem.M, cfg.steps + 1))
        _, G = objective_and_gradient(problem, grid, cfg, init, ControlSchedule(H, cfg.dt), obj)
        for _ in range(5):
            P = rng.standard_normal(H.shape)
            d = 1e-4
            jp, _ = objective_and_gradient(problem, grid, cfg, init, ControlSchedule(H + d * P, cfg.dt), obj)
            jm, _ = objective_and_gradient(problem, grid, cfg, init, ControlSchedule(H - d * P, cfg.dt), obj)
            pred = float(np.sum(G * P * w))
            worst = max(worst, abs((jp - jm) / (2 * d) - pred) / abs(pred))
            probes += 1
    ok = worst <= 1e-5
    record(6, "gradient check", ok, f"{probes} random directions at J=100, max relative error {worst:.2e}")
    assert ok


@pytest.mark.slow
def test_criterion_07_controllable_case(init):
    problem = SyncProblem(A_FIX, np.eye(2), np.eye(2), PART)
    res = epsilon_sweep(problem, GRID, CFG, init, ControlObjective("null"), EPS_SWEEP)
    ratios = [r.dev_ratio for r in res]
    ok = ratios[-1] <= 0.1 and is_monotone(res, 0.05)
    record(7, "controllable case", ok,
           f"terminal_dev ratios {[f'{x:.2e}' for x in ratios]}, monotone {is_monotone(res, 0.05)}")
    assert ok


@pytest.mark.slow
def test_criterion_08_synchronization(init, sync_sweep):
    problem = SyncProblem(A_FIX, np.eye(2), D_FIX, PART)
    final = sync_sweep[-1]
    E = analyze(problem).E_vectors
    trajs = [simulate(problem, GRID, CFG, init, r.schedule, post_window=1.0) for r in (sync_sweep[1], final)]
    metrics = [sync_metrics(problem, t, E) for t in trajs]
    pa, pb = metrics[0].pinned_state, metrics[1].pinned_state
    pin_diff = float(np.abs(pa - pb).max() / np.abs(pa).max())
    sched_diff = float(np.abs(sync_sweep[1].schedule.H - final.schedule.H).max())
    free = simulate(problem, GRID, CFG, init, post_window=1.0)
    dev_ratio_window = metrics[1].pairwise_dev / sync_metrics(problem, free, pin=False).pairwise_dev
    ok = final.dev_ratio <= 0.1 and pin_diff <= 1e-8 and sched_diff > 1e-3
    record(8, "synchronization", ok,
           f"C_1 deviation ratio {final.dev_ratio:.2e} at eps=1e-4, pinned state difference {pin_diff:.2e} "
           f"between schedules differing by {sched_diff:.2e}, post-window deviation ratio {dev_ratio_window:.2e}")
    assert ok


@pytest.mark.slow
def test_criterion_09_obstruction(init, obstructed_scenario):
    problem = SyncProblem(A_FIX, np.eye(2), D_FIX, PART)
    floor = closed_subsystem_floor(problem, GRID, CFG, init)
    plateau = obstructed_scenario.results[-1].full_energy
    rel = abs(plateau - floor) / floor
    ok = floor > 0 and rel <= 0.05
    record(9, "obstruction", ok,
           f"full-energy plateau {plateau:.6e} vs closed-subsystem floor {floor:.6e} (rel. gap {rel:.2e})")
    assert ok


@pytest.mark.slow
def test_criterion_10_indicator_in_controls(init, obstructed_scenario, augmented_problem):
    rep = indicator_controls_scenario(augmented_problem, GRID, CFG, init, eps_list=EPS_SWEEP)
    before = obstructed_scenario.full_energy_ratio
    ok = rep.precondition_ok and before > 0.1 and rep.full_energy_ratio <= 0.1
    record(10, "group indicator added to controls", ok,
           f"full-energy ratio {before:.3f} -> {rep.full_energy_ratio:.2e} (precondition {rep.precondition_ok})")
    assert ok


@pytest.mark.slow
def test_criterion_11_reduced_equivalence(init, sync_sweep, augmented_problem):
    fixtures = [
        ("obstructed pair", SyncProblem(A_FIX, np.eye(2), D_FIX, PART), sync_sweep),
        ("indicator added", augmented_problem, None),
    ]
    worst, details = 0.0, []
    for name, problem, full in fixtures:
        if full is None:
            full = epsilon_sweep(problem, GRID, CFG, init, ControlObjective("sync"), EPS_SWEEP)
        red, red_init = reduced_null_problem(problem, init)
        reduced = epsilon_sweep(red, GRID, CFG, red_init, ControlObjective("null"), EPS_SWEEP)
        a, b = full[-1].terminal_dev, reduced[-1].terminal_dev
        gap = abs(a - b) / max(a, b)
        worst = max(worst, gap)
        details.append(f"{name}: {a:.4e} vs {b:.4e}")
    ok = worst <= 0.05
    record(11, "reduced-system equivalence", ok, "; ".join(details) + f" (max rel. gap {worst:.2e})")
    assert ok
