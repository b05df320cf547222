"""Mean-field ODE of the learning process and its rest points.

The vector field is ``G^{ir}(x) = pi^{ir}(x^i) (C^{ir}(x^{-i}) - x^{ir})``.
Integration is fixed-step classical RK4. Rest points solve ``x = C(x)``; for
general games they are located by a best-effort multi-start search (the
2x2 module has a complete enumeration).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .game import TrafficGame, conditional_cost_jacobian, conditional_costs, logit_probabilities

log = logging.getLogger(__name__)

REST_POINT_TOL = 1e-10
DIVERGENCE_BOUND = 1e12
ORDER_TOL = 1e-12

#: Orthant sign pattern making the 2x2 mean-field flow order preserving
#: (coordinates flattened player-major: x^{1a}, x^{1b}, x^{2a}, x^{2b}).
SIGN_2X2 = np.array([1.0, -1.0, -1.0, 1.0])


def vector_field(game: TrafficGame, x) -> np.ndarray:
    """Mean-field vector field at ``x`` (shape ``(..., N, M)``)."""
    x = np.asarray(x, dtype=float)
    pi = logit_probabilities(game, x)
    return pi * (conditional_costs(game, pi) - x)


def _sup(a) -> float:
    return float(np.max(np.abs(a)))


class Termination(str, Enum):
    CONVERGED = "converged"
    MAX_TIME = "max_time"
    DIVERGED = "diverged"


@dataclass
class Trajectory:
    times: np.ndarray  # (T,)
    states: np.ndarray  # (T, N, M)
    terminal_flag: Termination

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _rk4_step(game, x, h, k1):
    k2 = vector_field(game, x + 0.5 * h * k1)
    k3 = vector_field(game, x + 0.5 * h * k2)
    k4 = vector_field(game, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _step_grid(step: float, t_max: float):
    if step <= 0 or t_max <= 0:
        raise ValueError("step and t_max must be positive")
    n_steps = int(np.ceil(t_max / step - 1e-9))
    times = np.minimum(np.arange(n_steps + 1) * step, t_max)
    times[-1] = t_max
    return times


def integrate(game: TrafficGame, x0, step: float = 0.01, t_max: float = 1e4,
              tol: float = REST_POINT_TOL, stride: int = 1) -> Trajectory:
    """Integrate the mean-field ODE from ``x0`` with fixed-step RK4.

    Stops early once ``||G(x)||_inf < tol`` (pass ``tol=0`` to always run to
    ``t_max``). Every ``stride``-th step is recorded, plus the terminal state.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    x = np.array(x0, dtype=float).reshape(game.shape)
    grid = _step_grid(step, t_max)
    times, states = [0.0], [x.copy()]
    g = vector_field(game, x)
    if _sup(g) < tol:
        return Trajectory(np.array(times), np.array(states), Termination.CONVERGED)
    flag = Termination.MAX_TIME
    last = len(grid) - 1
    for k in range(1, last + 1):
        x = _rk4_step(game, x, grid[k] - grid[k - 1], g)
        if not np.all(np.isfinite(x)) or _sup(x) > DIVERGENCE_BOUND:
            flag = Termination.DIVERGED
        else:
            g = vector_field(game, x)
            if _sup(g) < tol:
                flag = Termination.CONVERGED
        if flag is not Termination.MAX_TIME or k % stride == 0 or k == last:
            times.append(float(grid[k]))
            states.append(x.copy())
        if flag is not Termination.MAX_TIME:
            break
    return Trajectory(np.array(times), np.array(states), flag)


def integrate_many(game: TrafficGame, x0s, step: float = 0.01, t_max: float = 10.0,
                   stride: int = 1):
    """Integrate a batch of initial profiles on a common time grid (no early stop).

    Returns ``(times, states)`` with ``states`` of shape ``(T, K, N, M)``.
    """
    x = np.array(x0s, dtype=float).reshape((-1,) + game.shape)
    grid = _step_grid(step, t_max)
    last = len(grid) - 1
    keep = [0] + [k for k in range(1, last + 1) if k % stride == 0 or k == last]
    out = np.empty((len(keep),) + x.shape)
    out[0] = x
    slot = 1
    for k in range(1, last + 1):
        x = _rk4_step(game, x, grid[k] - grid[k - 1], vector_field(game, x))
        if slot < len(keep) and keep[slot] == k:
            out[slot] = x
            slot += 1
    return grid[keep], out


# ---------------------------------------------------------------------------
# rest points


@dataclass
class RestPoint:
    x: np.ndarray
    residual: float

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "residual": self.residual}

    @classmethod
    def from_dict(cls, data: dict) -> "RestPoint":
        return cls(np.array(data["x"], dtype=float), float(data["residual"]))


def rest_point(game: TrafficGame, x) -> RestPoint:
    x = np.array(x, dtype=float).reshape(game.shape)
    return RestPoint(x, _sup(vector_field(game, x)))


def initial_profiles(game: TrafficGame, num_starts: int, seed: int) -> np.ndarray:
    """Random starts, uniform per coordinate on ``[C^r_1 - 1, C^r_N + 1]``.

    Start ``k`` uses its own stream keyed by ``(seed, k)``, so any subset of
    starts can be regenerated independently.
    """
    lo = game.costs[:, 0] - 1.0
    hi = game.costs[:, -1] + 1.0
    out = np.empty((num_starts,) + game.shape)
    for k in range(num_starts):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, k])))
        out[k] = lo + (hi - lo) * rng.random(game.shape)
    return out


def _fixed_point_residual(game, x):
    """``||x - C(x)||_inf`` per profile of a batch ``(K, N, M)``."""
    c = conditional_costs(game, logit_probabilities(game, x))
    return np.max(np.abs(x - c), axis=(-2, -1)), c


def _damped_iteration(game, x, gamma, tol, max_iter, window=1000, min_gain=0.9):
    """Damped fixed-point iteration on a batch; returns ``(x, converged)``.

    A start whose residual has not shrunk by ``min_gain`` over the last
    ``window`` iterations is abandoned: at that rate it cannot reach ``tol``
    within ``max_iter`` from a residual of order one.
    """
    x = x.copy()
    done = np.zeros(len(x), dtype=bool)
    active = np.arange(len(x))
    checkpoint = np.full(len(x), np.inf)
    for it in range(max_iter):
        res, c = _fixed_point_residual(game, x[active])
        hit = res < tol
        if it % window == 0:
            stalled = res > min_gain * checkpoint[active]
            checkpoint[active] = res
            hit_or_stalled = hit | stalled
        else:
            hit_or_stalled = hit
        done[active[hit]] = True
        keep = ~hit_or_stalled
        active, c = active[keep], c[keep]
        if active.size == 0:
            break
        x[active] = (1.0 - gamma) * x[active] + gamma * c
    return x, done


def _newton(game, x, tol, max_iter, roots=()):
    """Batched Newton on ``F(x) = x - C(x)``, optionally deflating known ``roots``.

    Deflation multiplies ``F`` by ``prod_j (||x - r_j||^-2 + 1)``; the deflated
    step is the plain Newton step rescaled by a Sherman-Morrison factor.
    """
    k = len(x)
    dim = x[0].size
    x = x.reshape(k, dim).copy()
    shape = (k,) + game.shape
    roots = [np.ravel(r) for r in roots]
    done = np.zeros(k, dtype=bool)
    alive = np.ones(k, dtype=bool)
    eye = np.eye(dim)
    for _ in range(max_iter):
        idx = np.flatnonzero(alive & ~done)
        if idx.size == 0:
            break
        xs = x[idx]
        res, c = _fixed_point_residual(game, xs.reshape((-1,) + game.shape))
        hit = res < tol
        done[idx[hit]] = True
        idx, xs, c = idx[~hit], xs[~hit], c[~hit]
        if idx.size == 0:
            break
        f = xs - c.reshape(len(idx), dim)
        jac = eye - conditional_cost_jacobian(game, xs.reshape((-1,) + game.shape)).reshape(-1, dim, dim)
        try:
            d = -np.linalg.solve(jac, f[..., None])[..., 0]
        except np.linalg.LinAlgError:
            d = np.stack([-np.linalg.lstsq(j, ff, rcond=None)[0] for j, ff in zip(jac, f)])
        if roots:
            grad_log = np.zeros_like(xs)
            for r in roots:
                diff = xs - r
                sq = np.sum(diff * diff, axis=1, keepdims=True)
                grad_log += (-2.0 * diff / sq**2) / (1.0 / sq + 1.0)
            denom = 1.0 - np.sum(grad_log * d, axis=1, keepdims=True)
            d = d / denom
        xs = xs + d
        ok = np.all(np.isfinite(xs), axis=1) & (np.max(np.abs(xs), axis=1) < DIVERGENCE_BOUND)
        x[idx] = np.where(ok[:, None], xs, x[idx])
        alive[idx[~ok]] = False
    return x.reshape(shape), done


def _dedup(points, threshold):
    reps = []
    for p in points:
        if all(_sup(p - q) >= threshold for q in reps):
            reps.append(p)
    return reps


def find_rest_points(game: TrafficGame, num_starts: int = 200, seed: int = 0, *,
                     gamma: float = 0.5, tol: float = 1e-12, max_iter: int = 100_000,
                     dedup_tol: float = 1e-6, newton: bool = True,
                     deflation_rounds: int = 4, deflation_starts: int = 32) -> list[RestPoint]:
    """Best-effort multi-start search for rest points.

    Damped fixed-point iteration ``x <- (1 - gamma) x + gamma C(x)`` from every
    start finds the points that attract it; unstable rest points repel that
    iteration, so Newton's method on ``x - C(x)`` is also run from every start,
    followed by deflated Newton rounds (from the first ``deflation_starts``
    starts) that push away from points already found.
    Starts that fail are discarded. Results are deduplicated in the sup norm and
    returned sorted lexicographically.
    """
    if num_starts < 1:
        raise ValueError("num_starts must be >= 1")
    starts = initial_profiles(game, num_starts, seed)
    found = []
    x, ok = _damped_iteration(game, starts, gamma, tol, max_iter)
    found.extend(x[ok])
    if newton:
        x, ok = _newton(game, starts, tol, 60)
        found.extend(x[ok])
        reps = _dedup(found, dedup_tol)
        subset = starts[:deflation_starts]
        for _ in range(deflation_rounds):
            x, ok = _newton(game, subset, tol, 60, roots=reps)
            new = _dedup(reps + list(x[ok]), dedup_tol)[len(reps):]
            if not new:
                break
            reps.extend(new)
        found = reps
    reps = sorted(_dedup(found, dedup_tol), key=lambda p: tuple(np.ravel(p)))
    points = [rest_point(game, p) for p in reps]
    if not points:
        log.warning("no start converged to a rest point")
    return points


# ---------------------------------------------------------------------------
# orthant order


def order_leq_s(x, y, s, tol: float = ORDER_TOL) -> bool:
    """``x <=_s y``: ``s_i (y_i - x_i) >= 0`` for every flattened coordinate."""
    x, y, s = np.ravel(x), np.ravel(y), np.ravel(s)
    if not (x.size == y.size == s.size):
        raise ValueError(f"dimension mismatch: {x.size}, {y.size}, {s.size}")
    return bool(np.all(s * (y - x) >= -tol))


def order_violation(states, s) -> float:
    """Largest violation of ``states[t1] <=_s states[t2]`` over all ``t1 < t2``.

    Zero (or negative) means the sequence is ``<=_s``-increasing in time.
    """
    y = np.asarray(states, dtype=float).reshape(len(states), -1) * np.ravel(s)
    running_max = np.maximum.accumulate(y, axis=0)
    if len(y) < 2:
        return 0.0
    return float(np.max(running_max[:-1] - y[1:]))
