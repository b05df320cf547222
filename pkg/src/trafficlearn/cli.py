"""Command-line front end.

Exit codes::

    0  success
    2  malformed input (game file, config, flags)
    3  solver pathology (root finder or enumeration failed)
    4  game is not in the three-equilibrium case (heteroclinic only)

Every command takes ``--config FILE.json`` whose keys are the long flag names
(with ``_`` for ``-``); flags given on the command line override the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .game import GameError, TrafficGame
from .mean_field import find_rest_points, initial_profiles, integrate
from .stability import NotARestPointError, RootFindingError, analyze_rest_point
from .stochastic import (AmbiguousLimitError, StepSchedule, default_radius,
                         empirical_limit_classification, simulate)
from .two_by_two import (NotCaseCError, SolverPathologyError, analyze, heteroclinic_trace, reduce,
                         rest_points_2x2, symmetric_analysis, symmetric_boundary, symmetric_game)

log = logging.getLogger("trafficlearn")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_NOT_CASE_C = 4

DEFAULTS = {
    "seed": 0,
    "tol": None,
    "out": None,
    "starts": 200,
    "steps": 100_000,
    "schedule": "harmonic:1,1",
    "replications": 1,
    "x0": None,
    "random_x0": False,
    "snapshots": None,
    "radius": None,
    "t_max": 1e4,
    "step": 0.01,
    "stride": 10,
    "epsilon": 1e-4,
    "mode": "fig1",
    "grid": None,
    "mu_range": "2:12",
    "q_range": "-1.5:1.5",
}
GRID_DEFAULT = {"fig1": "101x101", "fig4": "51x61"}


class InputError(ValueError):
    pass


def _parse_range(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in str(text).split(":"))
    except ValueError:
        raise InputError(f"bad range {text!r}; expected a:b") from None
    if not a < b:
        raise InputError(f"empty range {text!r}")
    return a, b


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        n, m = (int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise InputError(f"bad grid {text!r}; expected NxM") from None
    if n < 2 or m < 2:
        raise InputError("grid resolution must be at least 2 in each direction")
    return n, m


def _parse_vector(text, size: int) -> np.ndarray:
    if isinstance(text, str):
        try:
            values = [float(v) for v in text.split(",")]
        except ValueError:
            raise InputError(f"bad vector {text!r}") from None
    else:
        values = list(np.ravel(np.asarray(text, dtype=float)))
    if len(values) != size:
        raise InputError(f"expected {size} values, got {len(values)}")
    return np.array(values)


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _require_game(cfg) -> TrafficGame:
    if not cfg.get("game"):
        raise InputError("--game is required")
    return io.load_game(cfg["game"])


def _positive(cfg, key):
    v = cfg.get(key)
    if v is not None and not float(v) > 0:
        raise InputError(f"--{key.replace('_', '-')} must be positive")
    return v


# commands


def cmd_analyze(cfg) -> int:
    game = _require_game(cfg)
    tol = _positive(cfg, "tol")
    if game.shape == (2, 2):
        report = analyze(game)
        out = {**report.to_dict(), "num_equilibria": report.count}
    else:
        points = find_rest_points(game, int(cfg["starts"]), int(cfg["seed"]),
                                  **({"tol": float(tol)} if tol else {}))
        out = {"num_equilibria": len(points), "points": [analyze_rest_point(game, p) for p in points]}
    _emit(io.dumps(out), cfg.get("out"))
    return EXIT_OK


def _reference_points(game: TrafficGame, cfg):
    if game.shape == (2, 2):
        return rest_points_2x2(game)
    return find_rest_points(game, int(cfg["starts"]), int(cfg["seed"]))


def cmd_simulate(cfg) -> int:
    game = _require_game(cfg)
    try:
        schedule = StepSchedule.parse(str(cfg["schedule"]))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    steps, reps = int(cfg["steps"]), int(cfg["replications"])
    if steps < 1 or reps < 1:
        raise InputError("--steps and --replications must be >= 1")
    x0 = np.zeros(game.shape) if cfg.get("x0") is None else _parse_vector(cfg["x0"], game.num_players * game.num_routes)
    x0 = x0.reshape(game.shape)
    points = _reference_points(game, cfg)
    radius = float(cfg["radius"]) if cfg.get("radius") is not None else default_radius(points)
    seeds = [int(cfg["seed"]) + k for k in range(reps)]
    runs = []
    for s in seeds:
        run = simulate(game, x0, schedule, steps, s, snapshots=bool(cfg.get("snapshots")))
        try:
            limit = empirical_limit_classification(run, points, radius)
        except AmbiguousLimitError as exc:
            raise InputError(str(exc)) from None
        runs.append(run.to_dict(limit))
        if cfg.get("snapshots"):
            path = Path(cfg["snapshots"])
            if reps > 1:
                path = path.with_name(f"{path.stem}_seed{s}{path.suffix}")
            path.write_text(io.trajectory_csv(run.snapshot_steps, run.snapshots), encoding="utf-8")
    out = {
        "schedule": str(schedule),
        "x0": x0,
        "radius": radius,
        "rest_points": io.rest_points_to_json(points),
        "runs": runs,
    }
    _emit(io.dumps(out), cfg.get("out"))
    return EXIT_OK


def cmd_ode(cfg) -> int:
    game = _require_game(cfg)
    dim = game.num_players * game.num_routes
    if cfg.get("x0") is not None and cfg.get("random_x0"):
        raise InputError("--x0 and --random-x0 are mutually exclusive")
    if cfg.get("random_x0"):
        x0 = initial_profiles(game, 1, int(cfg["seed"]))[0]
    elif cfg.get("x0") is not None:
        x0 = _parse_vector(cfg["x0"], dim).reshape(game.shape)
    else:
        raise InputError("one of --x0 or --random-x0 is required")
    for key in ("t_max", "step"):
        _positive(cfg, key)
    tol = _positive(cfg, "tol")
    traj = integrate(game, x0, float(cfg["step"]), float(cfg["t_max"]),
                     float(tol) if tol else 1e-10, int(cfg["stride"]))
    summary = {"terminal_flag": traj.terminal_flag.value, "t_final": float(traj.times[-1]),
               "final_state": traj.final_state, "x0": x0}
    if game.shape == (2, 2) and traj.terminal_flag.value == "converged":
        report = analyze(game)
        dist = [float(np.max(np.abs(traj.final_state - p))) for p in report.rest_points]
        k = int(np.argmin(dist))
        summary.update(limit_index=k, limit_label=report.stabilities[k], limit_distance=dist[k])
    out = cfg.get("out")
    if out is None:
        sys.stdout.write(io.trajectory_csv(traj.times, traj.states))
        sys.stderr.write(io.dumps(summary))
    else:
        io.write_trajectory(out, traj)
        io.write_json(Path(out).with_suffix(".json"), summary)
    return EXIT_OK


def _fig1_rows(game: TrafficGame, n: int, m: int):
    red = reduce(game)
    bound = red.nu * red.delta ** 2
    for x in np.linspace(0.0, 1.0, n):
        for y in np.linspace(0.0, 1.0, m):
            f = x * (1.0 - x) * y * (1.0 - y)
            yield float(x), float(y), float(f), bool(f * bound < 1.0)


def _fig4_rows(n: int, m: int, mu_range, q_range):
    for mu in np.linspace(*mu_range, n):
        h = symmetric_boundary(mu) if mu > 4.0 else float("nan")
        for q in np.linspace(*q_range, m):
            rep = symmetric_analysis(reduce(symmetric_game(float(mu), float(q))))
            yield float(mu), float(q), rep.num_equilibria, rep.psi_prime_bar, h


def cmd_region(cfg) -> int:
    mode = cfg["mode"]
    grid = _parse_grid(cfg.get("grid") or GRID_DEFAULT.get(mode, "101x101"))
    if mode == "fig1":
        game = _require_game(cfg)
        if game.shape != (2, 2):
            raise InputError("fig1 needs a 2x2 game")
        text = io.region_csv(["pi_1a", "pi_2a", "f", "stable"], _fig1_rows(game, *grid))
    elif mode == "fig4":
        mu_range, q_range = _parse_range(cfg["mu_range"]), _parse_range(cfg["q_range"])
        if mu_range[0] <= 0:
            raise InputError("mu must be positive")
        text = io.region_csv(["mu", "q", "num_equilibria", "psi_prime_at_symmetric", "boundary_h"],
                             _fig4_rows(*grid, mu_range, q_range))
    else:
        raise InputError(f"unknown region mode {mode!r}")
    _emit(text, cfg.get("out"))
    return EXIT_OK


def cmd_heteroclinic(cfg) -> int:
    game = _require_game(cfg)
    if game.shape != (2, 2):
        raise InputError("heteroclinic orbits are implemented for 2x2 games")
    if cfg.get("out") is None:
        raise InputError("--out DIR is required")
    tol = _positive(cfg, "tol")
    _positive(cfg, "epsilon")
    res = heteroclinic_trace(game, epsilon=float(cfg["epsilon"]), step=float(cfg["step"]),
                             t_max=float(cfg["t_max"]), tol=float(tol) if tol else 1e-10,
                             stride=int(cfg["stride"]))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_trajectory(out / "plus.csv", res.plus)
    io.write_trajectory(out / "minus.csv", res.minus)
    io.write_json(out / "audit.json", res.audit())
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "ode": cmd_ode,
    "region": cmd_region,
    "heteroclinic": cmd_heteroclinic,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trafficlearn", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        # default=None everywhere so config values survive unless a flag is given
        sp.add_argument("--config", help="JSON file of option values; flags override it")
        sp.add_argument("--game", help="game JSON file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None, help="output path (stdout when omitted)")
        sp.add_argument("--tol", type=float, default=None, help="solver tolerance override")
        return sp

    a = common(sub.add_parser("analyze", help="enumerate rest points and their stability"))
    a.add_argument("--starts", type=int, default=None, help="multi-start count for general games")

    s = common(sub.add_parser("simulate", help="run the stochastic learning process"))
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--schedule", default=None, help="harmonic:a,b or power:a,b,p")
    s.add_argument("--replications", type=int, default=None, help="seeds seed .. seed+K-1")
    s.add_argument("--x0", default=None, help="comma-separated initial estimates, player-major")
    s.add_argument("--snapshots", default=None, help="CSV path for thinned snapshots")
    s.add_argument("--radius", type=float, default=None, help="limit classification radius")
    s.add_argument("--starts", type=int, default=None)

    o = common(sub.add_parser("ode", help="integrate the mean-field ODE"))
    o.add_argument("--x0", default=None, help="comma-separated initial estimates, player-major")
    o.add_argument("--random-x0", action="store_const", const=True, default=None)
    o.add_argument("--t-max", type=float, default=None)
    o.add_argument("--step", type=float, default=None)
    o.add_argument("--stride", type=int, default=None, help="record every k-th step")

    r = common(sub.add_parser("region", help="stability-region scans"))
    r.add_argument("--mode", choices=["fig1", "fig4"], default=None)
    r.add_argument("--grid", default=None, help="NxM resolution")
    r.add_argument("--mu-range", default=None, help="a:b")
    r.add_argument("--q-range", default=None, help="a:b (write --q-range=-1:1 for a negative start)")

    h = common(sub.add_parser("heteroclinic", help="trace the saddle's two unstable branches"))
    h.add_argument("--epsilon", type=float, default=None)
    h.add_argument("--t-max", type=float, default=None)
    h.add_argument("--step", type=float, default=None)
    h.add_argument("--stride", type=int, default=None)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise InputError("config must be a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in data.items()})
    for k, v in vars(args).items():
        if v is not None and k != "config":
            cfg[k] = v
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except NotCaseCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CASE_C
    except (SolverPathologyError, RootFindingError, NotARestPointError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (GameError, InputError, ValueError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
