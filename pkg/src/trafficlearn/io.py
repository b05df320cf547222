"""Flat-file formats: game JSON, trajectory CSV, result JSON, region CSV.

Floats are written with ``repr`` (shortest round-trip form), so every file
reads back to bit-identical arrays and repeated runs produce identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .game import GameError, TrafficGame
from .mean_field import RestPoint, Termination, Trajectory


def _clean(obj):
    """Recursively convert numpy containers and scalars to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValueError(f"non-finite value {v} cannot be written as JSON")
        return v
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def load_game(path) -> TrafficGame:
    """Read a game file; unreadable or malformed files raise ``GameError``."""
    try:
        data = read_json(path)
    except FileNotFoundError:
        raise GameError(f"game file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise GameError(f"cannot read game file {path}: {exc}") from None
    return TrafficGame.from_dict(data)


def save_game(path, game: TrafficGame) -> None:
    write_json(path, game.to_dict())


def rest_points_to_json(points) -> list:
    return [p.to_dict() for p in points]


def rest_points_from_json(data) -> list[RestPoint]:
    return [RestPoint.from_dict(d) for d in data]


# trajectory CSV


def trajectory_header(n: int, m: int) -> list[str]:
    """``t, x_1_1, ..., x_N_M``: player index then route index, both starting at 1."""
    return ["t"] + [f"x_{i + 1}_{r + 1}" for i in range(n) for r in range(m)]


def trajectory_csv(times, states) -> str:
    states = np.asarray(states, dtype=float)
    if states.ndim != 3 or len(times) != len(states):
        raise ValueError("states must be (T, N, M) and match times")
    _, n, m = states.shape
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trajectory_header(n, m))
    for t, x in zip(times, states):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in x.ravel()])
    return buf.getvalue()


def write_trajectory(path, traj: Trajectory) -> None:
    Path(path).write_text(trajectory_csv(traj.times, traj.states), encoding="utf-8")


def parse_trajectory_csv(text: str):
    """Inverse of :func:`trajectory_csv`; returns ``(times, states)``."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:1] != ["t"]:
        raise ValueError("missing trajectory header")
    labels = rows[0][1:]
    try:
        pairs = [tuple(int(v) for v in lab.split("_")[1:]) for lab in labels]
    except ValueError:
        raise ValueError(f"bad column labels {labels}") from None
    n = max(p[0] for p in pairs)
    m = max(p[1] for p in pairs)
    if rows[0] != trajectory_header(n, m):
        raise ValueError("columns are not in player-major order")
    data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float).reshape(-1, 1 + n * m)
    return data[:, 0], data[:, 1:].reshape(-1, n, m)


def read_trajectory(path, terminal_flag=Termination.MAX_TIME) -> Trajectory:
    times, states = parse_trajectory_csv(Path(path).read_text(encoding="utf-8"))
    return Trajectory(times, states, Termination(terminal_flag))


# region CSV


def region_csv(columns: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def parse_region_csv(text: str) -> dict[str, np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty region file")
    cols = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(cols))
    return {c: data[:, k] for k, c in enumerate(cols)}
