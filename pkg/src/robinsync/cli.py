"""Command-line front end.

Subcommands ``analyze``, ``simulate``, ``synchronize`` and ``synthesize-d``
read a JSON problem file. Exit status is 0 on success, 2 when a mathematical
condition fails, and 1 on any operational error (bad input, unstable step,
usage error).

Set ``ROBINSYNC_THREADS`` to pin the BLAS thread count; results are then
byte-for-byte reproducible for fixed inputs and flags.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .control import (
    Budget,
    ControlObjective,
    epsilon_sweep,
    generic_initial_state,
    is_monotone,
    write_schedule_csv,
    write_sweep_csv,
)
from .exceptions import RobinSyncError
from .linalg import SubspaceBasis
from .syncalg import GroupPartition, SyncProblem, analyze, synthesize_D
from .wavesim import (
    ControlSchedule,
    Grid1D,
    SimConfig,
    WaveState,
    simulate,
    write_trace_csv,
    write_trajectory_csv,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONDITION = 2

THREADS_ENV = "ROBINSYNC_THREADS"


class CliError(Exception):
    """Operational failure reported on stderr with exit status 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for failed conditions here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _dump(data, path=None):
    text = json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def load_problem_file(path) -> dict:
    """Read a problem file, reporting JSON syntax errors with line and column."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise CliError(f"{path}: top level must be a JSON object")
    return data


def _field(data: dict, name: str, required=True, default=None):
    if name not in data:
        if required:
            raise CliError(f"missing field '{name}'")
        return default
    return data[name]


def _matrix(data: dict, name: str, shape) -> np.ndarray:
    raw = _field(data, name)
    try:
        m = np.array(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise CliError(f"field '{name}': not a numeric array") from exc
    if m.ndim == 1 and shape[1] == 1:
        m = m.reshape(-1, 1)
    if m.shape != tuple(shape):
        raise CliError(f"field '{name}': expected shape {tuple(shape)}, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise CliError(f"field '{name}': non-finite entries")
    return m


def _int_field(data: dict, name: str, required=True, default=None) -> int:
    v = _field(data, name, required, default)
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise CliError(f"field '{name}': expected a positive integer, got {v!r}")
    return v


def parse_problem(data: dict, validate: bool = True) -> SyncProblem:
    """Build a :class:`SyncProblem` from a decoded problem file."""
    N = _int_field(data, "N")
    M = _int_field(data, "M")
    A = _matrix(data, "A", (N, N))
    B = _matrix(data, "B", (N, N))
    D = _matrix(data, "D", (N, M))
    cuts = _field(data, "partition", required=False, default=[0, N])
    if not isinstance(cuts, list) or not all(isinstance(c, int) and not isinstance(c, bool) for c in cuts):
        raise CliError("field 'partition': expected a list of integer cut points")
    try:
        return SyncProblem(A, B, D, GroupPartition(tuple(cuts)), validate=validate)
    except RobinSyncError as exc:
        raise CliError(f"invalid problem: {exc}") from exc


def _grid_and_config(data: dict, args) -> tuple:
    g = _field(data, "grid", required=False, default={}) or {}
    c = _field(data, "config", required=False, default={}) or {}
    J = args.J if args.J is not None else g.get("J", 50)
    T = args.T if args.T is not None else c.get("T", 4.0)
    grid = Grid1D(J)
    dt = args.dt if args.dt is not None else c.get("dt")
    if dt is None:
        return grid, SimConfig.from_cfl(T, grid, c.get("cfl", 0.5))
    return grid, SimConfig(T, dt)


def _initial_state(data: dict, N: int, grid: Grid1D, seed) -> WaveState:
    desc = _field(data, "initial", required=False, default={"preset": "generic"})
    if not isinstance(desc, dict):
        raise CliError("field 'initial': expected an object")
    if "U0" in desc or "V0" in desc:
        shape = (N, grid.J + 1)
        U = _matrix(desc, "U0", shape) if "U0" in desc else np.zeros(shape)
        V = _matrix(desc, "V0", shape) if "V0" in desc else np.zeros(shape)
        try:
            return WaveState(U, V)
        except RobinSyncError as exc:
            raise CliError(f"field 'initial': {exc}") from exc
    preset = desc.get("preset", "generic")
    if preset == "zero":
        return WaveState.zeros(N, grid)
    if preset == "generic":
        s = seed if seed is not None else desc.get("seed", 0)
        return generic_initial_state(N, grid, int(s), int(desc.get("modes", 3)))
    raise CliError(f"field 'initial': unknown preset {preset!r}")


def read_schedule_csv(path, M: int, cfg: SimConfig) -> ControlSchedule:
    """Read a ``t,control_index,value`` file; missing samples are zero."""
    H = np.zeros((M, cfg.steps + 1))
    try:
        with open(path, newline="") as fh:
            rows = csv.reader(fh)
            header = next(rows, None)
            if header != ["t", "control_index", "value"]:
                raise CliError(f"{path}: header must be t,control_index,value")
            for lineno, row in enumerate(rows, start=2):
                try:
                    t, m, v = float(row[0]), int(row[1]), float(row[2])
                except (ValueError, IndexError) as exc:
                    raise CliError(f"{path}: line {lineno}: malformed row") from exc
                n = int(round(t / cfg.dt))
                if not (0 <= m < M) or not (0 <= n <= cfg.steps) or abs(n * cfg.dt - t) > 1e-9:
                    raise CliError(f"{path}: line {lineno}: sample outside the step grid")
                H[m, n] = v
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from exc
    return ControlSchedule(H, cfg.dt)


def _summary(report: dict) -> str:
    keys = ("N", "p", "rank_R", "dim_ker_RT", "cp_compatible_A", "cp_compatible_B",
            "rank_CpR", "biorthonormal", "necessary_ok")
    return "\n".join(f"{k:>16}: {report[k]}" for k in keys)


def cmd_analyze(args) -> int:
    data = load_problem_file(args.path)
    problem = parse_problem(data, validate=not args.no_validate)
    report = analyze(problem).to_dict()
    _dump(report, args.out)
    print(_summary(report), file=sys.stderr if args.out is None else sys.stdout)
    return EXIT_OK if conditions_hold(report) else EXIT_CONDITION


def conditions_hold(report: dict) -> bool:
    """Rank condition, plus compatibility of both couplings when the rank is minimal.

    Compatibility is only known to be necessary when ``rank_R = N - p``;
    above that rank an incompatible coupling is reported but not failed.
    """
    if not report["necessary_ok"]:
        return False
    minimal = report["rank_R"] == report["N"] - report["p"]
    return not minimal or (report["cp_compatible_A"] and report["cp_compatible_B"])


def cmd_simulate(args) -> int:
    data = load_problem_file(args.path)
    problem = parse_problem(data, validate=not args.no_validate)
    grid, cfg = _grid_and_config(data, args)
    init = _initial_state(data, problem.N, grid, args.seed)
    ctrl = None if args.ctrl == "zero" else read_schedule_csv(args.ctrl, problem.M, cfg)
    traj = simulate(problem, grid, cfg, init, ctrl, post_window=args.post_window,
                    stride=args.stride, track_energy=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj, out / "trajectory.csv")
    write_trace_csv(traj, out / "trace.csv")
    with open(out / "energy.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "energy"])
        for t, e in zip(traj.t_trace, traj.energy):
            w.writerow([f"{t:.17g}", f"{e:.17g}"])
    return EXIT_OK


def _eps_list(text: str) -> list:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if not parts:
        raise CliError("--eps needs at least one value")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise CliError(f"--eps: cannot parse {text!r}") from exc


def cmd_synchronize(args) -> int:
    eps = _eps_list(args.eps)
    data = load_problem_file(args.path)
    problem = parse_problem(data, validate=not args.no_validate)
    grid, cfg = _grid_and_config(data, args)
    init = _initial_state(data, problem.N, grid, args.seed)
    budget = Budget(max_iters=args.max_iters)
    results = epsilon_sweep(problem, grid, cfg, init, ControlObjective(args.target), eps, budget)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(results, out / "sweep.csv")
    for i, r in enumerate(results):
        write_schedule_csv(r.schedule, out / f"schedule_{i}.csv")
    for r in results:
        print(f"eps={r.eps:.3g} iterations={r.iterations} dev_ratio={r.dev_ratio:.3e} "
              f"full_energy_ratio={r.full_energy_ratio:.3e}")
    return EXIT_OK if is_monotone(results) else EXIT_CONDITION


def cmd_synthesize_d(args) -> int:
    data = load_problem_file(args.path)
    N = _int_field(data, "N")
    raw = _field(data, "V")
    try:
        vecs = [np.asarray(v, dtype=float).ravel() for v in raw]
    except (TypeError, ValueError) as exc:
        raise CliError("field 'V': expected a list of numeric vectors") from exc
    if any(v.shape != (N,) or not np.all(np.isfinite(v)) for v in vecs):
        raise CliError(f"field 'V': every vector needs {N} finite entries")
    V = SubspaceBasis.from_vectors(vecs, ambient_dim=N)
    if V.dim == N:
        print("V is the whole space: no control column is left", file=sys.stderr)
        return EXIT_CONDITION
    D = synthesize_D(V)
    result = {k: v for k, v in data.items() if k != "V"}
    result["N"] = N
    result["M"] = D.shape[1]
    result["D"] = D.tolist()
    _dump(result, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robinsync", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None,
                        help="seed of the generic initial-data preset")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, grid=True):
        p.add_argument("path", help="JSON problem file")
        p.add_argument("--no-validate", action="store_true",
                       help="accept rank-deficient D or B not similar to symmetric")
        if grid:
            p.add_argument("--T", type=float, default=None, help="horizon (default 4)")
            p.add_argument("--J", type=int, default=None, help="grid intervals (default 50)")
            p.add_argument("--dt", type=float, default=None, help="time step (default h/2)")

    p = sub.add_parser("analyze", help="algebraic synchronization report")
    common(p, grid=False)
    p.add_argument("--out", default=None, help="JSON report path (stdout if omitted)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="simulate and export CSV")
    common(p)
    p.add_argument("--ctrl", default="zero", help="'zero' or a schedule CSV")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--post-window", type=float, default=0.0, help="extra uncontrolled time after T")
    p.add_argument("--stride", type=int, default=1, help="store every k-th state")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synchronize", help="penalty sweep of control synthesis")
    common(p)
    p.add_argument("--target", choices=("null", "sync"), default="sync")
    p.add_argument("--eps", required=True, help="comma-separated decreasing penalties")
    p.add_argument("--max-iters", type=int, default=400)
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=cmd_synchronize)

    p = sub.add_parser("synthesize-d", help="control matrix with Im(D) orthogonal to V")
    p.add_argument("path", help="JSON file with N and V (list of vectors)")
    p.add_argument("--out", default=None, help="output problem file (stdout if omitted)")
    p.set_defaults(func=cmd_synthesize_d)
    return parser


@contextlib.contextmanager
def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        yield
        return
    try:
        n = int(value)
    except ValueError as exc:
        raise CliError(f"{THREADS_ENV} must be an integer, got {value!r}") from exc
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except (CliError, RobinSyncError, ValueError, ArithmeticError) as exc:
        print(f"robinsync {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
