"""Traffic game primitives: Logit route choice and expected conditional costs.

Players and routes are 0-indexed. A game stores its cost ladders as an
``(M, N)`` array whose row ``r`` is ``C^r_1 <= ... <= C^r_N``: column ``u - 1``
holds the travel time of route ``r`` when ``u`` players use it.

Estimate profiles ``x`` and choice profiles ``pi`` are ``(N, M)`` arrays
(player-major). The vectorised helpers also accept leading batch axes,
``(..., N, M)``, which the ODE and multi-start solvers rely on.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

BRUTE_FORCE_MAX_PLAYERS = 20


class GameError(ValueError):
    """Malformed game definition."""


@dataclass(frozen=True, eq=False)
class TrafficGame:
    """Parallel-route congestion game with Logit-choosing players.

    Parameters
    ----------
    costs : array_like, shape (M, N)
        Non-decreasing cost ladder per route.
    betas : array_like, shape (N,)
        Positive Logit sensitivities, one per player.
    """

    costs: np.ndarray
    betas: np.ndarray

    def __post_init__(self):
        try:
            costs = np.array(self.costs, dtype=float)
            betas = np.array(self.betas, dtype=float)
        except (TypeError, ValueError) as exc:
            raise GameError(f"non-numeric game data: {exc}") from None
        if betas.ndim != 1 or betas.size < 2:
            raise GameError("betas must be a vector with at least 2 players")
        n = betas.size
        if costs.ndim != 2 or costs.shape[0] < 2 or costs.shape[1] != n:
            raise GameError(
                f"costs must have shape (M >= 2, N={n}), got {costs.shape}")
        if not (np.all(np.isfinite(costs)) and np.all(np.isfinite(betas))):
            raise GameError("costs and betas must be finite")
        if np.any(betas <= 0):
            raise GameError("betas must be positive")
        if np.any(np.diff(costs, axis=1) < 0):
            raise GameError("cost ladders must be non-decreasing in the load")
        costs.setflags(write=False)
        betas.setflags(write=False)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "betas", betas)

    @property
    def num_players(self) -> int:
        return self.betas.size

    @property
    def num_routes(self) -> int:
        return self.costs.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        """Shape ``(N, M)`` of an estimate profile."""
        return self.num_players, self.num_routes

    @classmethod
    def from_dict(cls, data: dict) -> "TrafficGame":
        """Build a game from the JSON mapping ``{num_players, num_routes, costs, betas}``."""
        if not isinstance(data, dict):
            raise GameError("game must be a JSON object")
        missing = {"costs", "betas"} - data.keys()
        if missing:
            raise GameError(f"game is missing keys: {sorted(missing)}")
        game = cls(costs=data["costs"], betas=data["betas"])
        n, m = game.shape
        if data.get("num_players", n) != n or data.get("num_routes", m) != m:
            raise GameError("num_players/num_routes disagree with costs/betas")
        return game

    def to_dict(self) -> dict:
        return {
            "num_players": self.num_players,
            "num_routes": self.num_routes,
            "costs": self.costs.tolist(),
            "betas": self.betas.tolist(),
        }

    def permute_players(self, order) -> "TrafficGame":
        """Relabel players; player ``j`` of the result is player ``order[j]`` here."""
        return TrafficGame(costs=self.costs, betas=self.betas[list(order)])


def logit_probabilities(game: TrafficGame, x) -> np.ndarray:
    """Logit choice probabilities ``pi^{ir}`` for estimates ``x`` of shape ``(..., N, M)``."""
    x = np.asarray(x, dtype=float)
    z = -game.betas[:, None] * x
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def load_distribution(probs) -> np.ndarray:
    """Poisson-binomial pmf ``P(K = u)``, ``u = 0..len(probs)``.

    Players are folded in one at a time, O(n^2) overall.
    """
    probs = np.asarray(probs, dtype=float)
    pmf = np.zeros(probs.size + 1)
    pmf[0] = 1.0
    for k, p in enumerate(probs):
        head = pmf[: k + 2].copy()
        pmf[: k + 2] = head * (1.0 - p)
        pmf[1: k + 2] += head[: k + 1] * p
    return pmf


def _loads_excluding(pi: np.ndarray, excluded: np.ndarray) -> np.ndarray:
    """Route-load pmfs of the players not flagged in each row of ``excluded``.

    ``pi`` has shape ``(..., N, M)`` and ``excluded`` is boolean ``(E, N)``.
    Returns ``(..., E, M, N)``; the last axis is the load ``0..N-1``.
    """
    n, m = pi.shape[-2:]
    pmf = np.zeros(pi.shape[:-2] + (excluded.shape[0], m, n))
    pmf[..., 0] = 1.0
    keep = (~excluded).astype(float)[:, :, None]  # (E, N, 1)
    for j in range(n):
        p = (pi[..., None, j, :] * keep[:, j])[..., None]  # (..., E, M, 1)
        shifted = np.zeros_like(pmf)
        shifted[..., 1:] = pmf[..., :-1]
        pmf = pmf * (1.0 - p) + shifted * p
    return pmf


def conditional_costs(game: TrafficGame, pi) -> np.ndarray:
    """All expected conditional costs ``C^{ir}`` for choice profile(s) ``pi``."""
    pi = np.asarray(pi, dtype=float)
    n = game.num_players
    pmf = _loads_excluding(pi, np.eye(n, dtype=bool))
    return np.einsum("...irk,rk->...ir", pmf, game.costs)


def conditional_expected_cost(game: TrafficGame, pi, i: int, r: int) -> float:
    """Expected cost of route ``r`` for player ``i``, given that ``i`` takes it."""
    pi = np.asarray(pi, dtype=float)
    others = np.delete(pi[:, r], i)
    return float(game.costs[r] @ load_distribution(others))


def brute_force_conditional_cost(game: TrafficGame, pi, i: int, r: int) -> float:
    """Subset-enumeration evaluation of ``C^{ir}`` (test oracle, N <= 20)."""
    n = game.num_players
    if n > BRUTE_FORCE_MAX_PLAYERS:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX_PLAYERS} players")
    pi = np.asarray(pi, dtype=float)
    others = [j for j in range(n) if j != i]
    total = 0.0
    for chosen in itertools.product((False, True), repeat=len(others)):
        weight = 1.0
        for j, on in zip(others, chosen):
            weight *= pi[j, r] if on else 1.0 - pi[j, r]
        total += weight * game.costs[r, sum(chosen)]
    return total


def cost_increments(game: TrafficGame, pi) -> np.ndarray:
    """Expected cost jumps ``Lambda^r_{ik}`` as an array of shape ``(..., N, N, M)``.

    ``Lambda^r_{ik} = E[C^r_{2+u} - C^r_{1+u}]`` with ``u`` the load of route
    ``r`` among players other than ``i`` and ``k``; zero on the diagonal.
    """
    pi = np.asarray(pi, dtype=float)
    n = game.num_players
    eye = np.eye(n, dtype=bool)
    excluded = (eye[:, None, :] | eye[None, :, :]).reshape(n * n, n)
    pmf = _loads_excluding(pi, excluded)  # (..., N*N, M, N)
    jumps = np.diff(game.costs, axis=1)  # (M, N-1), jumps[r, u] = C^r_{u+2} - C^r_{u+1}
    lam = np.einsum("...erk,rk->...er", pmf[..., : n - 1], jumps)
    lam = lam.reshape(pi.shape[:-2] + (n, n, game.num_routes))
    lam[..., eye, :] = 0.0
    return lam


def cost_increment(game: TrafficGame, pi, i: int, k: int, r: int) -> float:
    """``Lambda^r_{ik}`` for one pair of players and one route (0 when ``i == k``)."""
    if i == k:
        return 0.0
    pi = np.asarray(pi, dtype=float)
    others = np.delete(pi[:, r], sorted((i, k)))
    pmf = load_distribution(others)
    return float(np.diff(game.costs[r]) @ pmf)


def brute_force_cost_increment(game: TrafficGame, pi, i: int, k: int, r: int) -> float:
    if i == k:
        return 0.0
    n = game.num_players
    if n > BRUTE_FORCE_MAX_PLAYERS:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX_PLAYERS} players")
    pi = np.asarray(pi, dtype=float)
    others = [j for j in range(n) if j not in (i, k)]
    c = game.costs[r]
    total = 0.0
    for chosen in itertools.product((False, True), repeat=len(others)):
        weight = 1.0
        for j, on in zip(others, chosen):
            weight *= pi[j, r] if on else 1.0 - pi[j, r]
        u = sum(chosen)
        total += weight * (c[u + 1] - c[u])
    return total


def logit_jacobian(game: TrafficGame, pi) -> np.ndarray:
    """``d pi_k^r / d x^{ks} = beta_k pi_k^r (pi_k^s - delta_rs)``, shape ``(..., N, M, M)``."""
    pi = np.asarray(pi, dtype=float)
    m = pi.shape[-1]
    return (game.betas[:, None, None] * pi[..., :, :, None]
            * (pi[..., :, None, :] - np.eye(m)))


def conditional_cost_jacobian(game: TrafficGame, x) -> np.ndarray:
    """Jacobian ``dC^{ir}/dx^{ks}`` at any profile, shape ``(..., N, M, N, M)``.

    ``C^{ir}`` is affine in each ``pi_k^r`` with slope ``Lambda^r_{ik}``, so the
    chain rule through the Logit map is exact everywhere, not just at rest points.
    """
    pi = logit_probabilities(game, x)
    lam = cost_increments(game, pi)  # (..., i, k, r)
    lam_irk = np.swapaxes(lam, -1, -2)  # (..., i, r, k)
    dpi = logit_jacobian(game, pi)  # (..., k, r, s)
    dpi_rks = np.swapaxes(dpi, -3, -2)  # (..., r, k, s)
    return lam_irk[..., None] * dpi_rks[..., None, :, :, :]


class UniquenessBound(NamedTuple):
    omega: float
    delta_jump: float
    product: float
    unique_guaranteed: bool


def uniqueness_bound(game: TrafficGame) -> UniquenessBound:
    """Sufficient condition ``omega * Delta < 2`` for a unique, globally attracting rest point."""
    omega = float(np.max(game.betas.sum() - game.betas))
    delta_jump = float(np.max(np.diff(game.costs, axis=1)))
    product = omega * delta_jump
    return UniquenessBound(omega, delta_jump, product, product < 2.0)
