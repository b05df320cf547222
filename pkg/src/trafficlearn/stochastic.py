"""Discrete-time learning process (a Robbins-Monro scheme).

Each day every player draws a route from her Logit probabilities, observes
the congested travel time ``C^r_{u^r}`` of that route only, and moves that one
estimate toward it by the step ``alpha_n``; the other estimates are kept.

Randomness: seed ``s`` keys a Philox (counter-based) stream; draw number
``n * N + i`` is the uniform used by player ``i`` on day ``n``. Replications
for different seeds can therefore be advanced together in one batch and give
the same bits as running each seed alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .game import TrafficGame, logit_probabilities
from .mean_field import RestPoint

_BLOCK = 1 << 16


@dataclass(frozen=True)
class StepSchedule:
    """``alpha_n = a / (n + b)^p``; ``harmonic`` is the ``p = 1`` case."""

    kind: str = "harmonic"
    a: float = 1.0
    b: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if self.kind not in ("harmonic", "power"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "harmonic" and self.p != 1.0:
            raise ValueError("harmonic schedule has p = 1")
        if not 0.5 < self.p <= 1.0:
            raise ValueError("p must lie in (1/2, 1] for sum alpha = inf, sum alpha^2 < inf")
        if self.a <= 0 or self.b < 1:
            raise ValueError("need a > 0 and b >= 1")
        if self.a > self.b ** self.p:
            raise ValueError("alpha_0 = a / b^p must not exceed 1")

    @classmethod
    def parse(cls, text: str) -> "StepSchedule":
        """Parse ``harmonic:a,b`` or ``power:a,b,p``."""
        kind, _, args = text.partition(":")
        values = [float(v) for v in args.split(",")] if args else []
        if kind == "harmonic" and len(values) in (0, 2):
            return cls("harmonic", *values)
        if kind == "power" and len(values) == 3:
            return cls("power", *values)
        raise ValueError(f"bad schedule {text!r}; expected harmonic:a,b or power:a,b,p")

    def __str__(self) -> str:
        if self.kind == "harmonic":
            return f"harmonic:{self.a:g},{self.b:g}"
        return f"power:{self.a:g},{self.b:g},{self.p:g}"

    def alpha(self, n):
        return self.a / (np.asarray(n, dtype=float) + self.b) ** self.p


@dataclass
class SimulationRun:
    seed: int
    steps: int
    final_state: np.ndarray
    route_counts: np.ndarray
    snapshot_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    snapshots: np.ndarray | None = None

    def to_dict(self, classified_limit=None) -> dict:
        return {
            "seed": self.seed,
            "steps": self.steps,
            "final_state": self.final_state.tolist(),
            "classified_limit": classified_limit,
            "route_counts": self.route_counts.tolist(),
        }


def learning_step(game: TrafficGame, x, u, alpha):
    """One day of the process for a batch of states.

    ``x`` has shape ``(..., N, M)`` and ``u`` holds one uniform per player,
    ``(..., N)``. Returns the new states and the chosen routes ``(..., N)``.
    """
    x = np.asarray(x, dtype=float)
    m = game.num_routes
    cdf = np.cumsum(logit_probabilities(game, x), axis=-1)
    routes = np.minimum(np.sum(u[..., None] >= cdf[..., :-1], axis=-1), m - 1)
    chosen = routes[..., None] == np.arange(m)
    loads = chosen.sum(axis=-2)  # (..., M)
    own_load = np.take_along_axis(loads, routes, axis=-1)
    observed = game.costs[routes, own_load - 1]
    alpha = np.asarray(alpha, dtype=float)[..., None, None]
    updated = (1.0 - alpha) * x + alpha * observed[..., None]
    return np.where(chosen, updated, x), routes


def _snapshot_steps(steps: int) -> np.ndarray:
    marks = [0]
    k = 1
    while k < steps:
        marks.append(k)
        k *= 2
    marks.append(steps)
    return np.array(sorted(set(marks)))


@numba.njit(cache=True)
def _run_days(costs, betas, x, uniforms, alphas, counts, marks, snaps, day0, next_mark):
    """Advance one replication over a block of days, in place; returns the next mark index."""
    n, m = x.shape
    routes = np.empty(n, dtype=np.int64)
    loads = np.empty(m, dtype=np.int64)
    weights = np.empty(m)
    for t in range(uniforms.shape[0]):
        for i in range(n):
            top = -betas[i] * x[i, 0]
            for r in range(1, m):
                top = max(top, -betas[i] * x[i, r])
            total = 0.0
            for r in range(m):
                weights[r] = np.exp(-betas[i] * x[i, r] - top)
                total += weights[r]
            u = uniforms[t, i]
            acc = 0.0
            choice = m - 1
            for r in range(m - 1):
                acc += weights[r] / total
                if u < acc:
                    choice = r
                    break
            routes[i] = choice
        loads[:] = 0
        for i in range(n):
            loads[routes[i]] += 1
        a = alphas[t]
        for i in range(n):
            r = routes[i]
            x[i, r] = (1.0 - a) * x[i, r] + a * costs[r, loads[r] - 1]
            counts[i, r] += 1
        day = day0 + t + 1
        if next_mark < marks.shape[0] and marks[next_mark] == day:
            snaps[next_mark] = x
            next_mark += 1
    return next_mark


def simulate(game: TrafficGame, x0, schedule: StepSchedule | None = None, steps: int = 100_000,
             seed: int = 0, snapshots: bool = False) -> SimulationRun:
    """Single replication of the learning process.

    Snapshots, when requested, are taken after days ``0, 1, 2, 4, ...`` and at the end.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    schedule = schedule or StepSchedule()
    n, m = game.shape
    x = np.array(x0, dtype=float).reshape(n, m)
    counts = np.zeros((n, m), dtype=np.int64)
    marks = _snapshot_steps(steps) if snapshots else np.zeros(0, dtype=np.int64)
    snaps = np.empty((len(marks), n, m))
    next_mark = 0
    if snapshots:
        snaps[0] = x
        next_mark = 1
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    costs, betas = np.ascontiguousarray(game.costs), np.ascontiguousarray(game.betas)
    for start in range(0, steps, _BLOCK):
        stop = min(start + _BLOCK, steps)
        uniforms = gen.random((stop - start, n))
        alphas = schedule.alpha(np.arange(start, stop))
        next_mark = _run_days(costs, betas, x, uniforms, alphas, counts, marks, snaps,
                              start, next_mark)
    return SimulationRun(int(seed), steps, x, counts, marks, snaps if snapshots else None)


def simulate_many(game: TrafficGame, x0, schedule: StepSchedule, steps: int, seeds,
                  snapshots: bool = False) -> list[SimulationRun]:
    """Independent replications, one per seed."""
    return [simulate(game, x0, schedule, steps, s, snapshots) for s in seeds]


class AmbiguousLimitError(ValueError):
    """Two rest points lie within the classification radius of the final state."""


def empirical_limit_classification(run: SimulationRun | np.ndarray, rest_points, radius: float):
    """Index of the one rest point within sup-distance ``radius`` of the final state, or None."""
    if not rest_points:
        raise ValueError("rest_points must be non-empty")
    final = run.final_state if isinstance(run, SimulationRun) else np.asarray(run, dtype=float)
    hits = []
    for k, p in enumerate(rest_points):
        xp = p.x if isinstance(p, RestPoint) else np.asarray(p, dtype=float)
        if np.max(np.abs(final - xp)) <= radius:
            hits.append(k)
    if len(hits) > 1:
        raise AmbiguousLimitError(f"rest points {hits} all within radius {radius}")
    return hits[0] if hits else None


def default_radius(rest_points) -> float:
    """Classification radius: a third of the smallest rest-point separation, capped at 0.25."""
    xs = [p.x if isinstance(p, RestPoint) else np.asarray(p) for p in rest_points]
    gaps = [np.max(np.abs(a - b)) for i, a in enumerate(xs) for b in xs[i + 1:]]
    return min([0.25] + [g / 3.0 for g in gaps])
