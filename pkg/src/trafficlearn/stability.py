"""Linear stability of rest points.

Chain: analytic Jacobian at a rest point -> characteristic polynomial
(Faddeev-LeVerrier) -> Hurwitz matrix and its leading minors. Two independent
oracles back the chain up: central finite differences for the Jacobian and
Durand-Kerner roots for the verdict.

Characteristic polynomials are plain coefficient arrays ``a[0..n]`` of
``det(lambda I - J) = a_0 lambda^n + a_1 lambda^(n-1) + ... + a_n``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .game import TrafficGame, conditional_cost_jacobian, logit_probabilities
from .mean_field import RestPoint, vector_field

JACOBIAN_RESIDUAL_TOL = 1e-8
MARGINAL_BAND = 1e-12
MAX_CHARPOLY_DEGREE = 64


class NotARestPointError(ValueError):
    """The analytic Jacobian formula was applied away from a rest point."""


class RootFindingError(RuntimeError):
    pass


def jacobian_at_rest_point(game: TrafficGame, x, residual_tol: float = JACOBIAN_RESIDUAL_TOL) -> np.ndarray:
    """Jacobian of the mean-field field at a rest point, ``(N*M, N*M)`` player-major.

    Uses ``dG^{ir}/dx^{ks} = pi^{ir} (dC^{ir}/dx^{ks} - delta_ik delta_rs)``,
    which drops the ``(C - x) dpi`` term and is therefore only valid on rest
    points; inputs with a larger residual are rejected.
    """
    if isinstance(x, RestPoint):
        x = x.x
    x = np.array(x, dtype=float).reshape(game.shape)
    residual = float(np.max(np.abs(vector_field(game, x))))
    if residual > residual_tol:
        raise NotARestPointError(f"|G(x)|_inf = {residual:.3e} exceeds {residual_tol:.1e}")
    dim = x.size
    pi = logit_probabilities(game, x).reshape(dim, 1)
    dc = conditional_cost_jacobian(game, x).reshape(dim, dim)
    return pi * (dc - np.eye(dim))


def finite_difference_jacobian(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of ``f`` (flat vector in, flat vector out) at ``x``."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.ravel(np.asarray(x, dtype=float))
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.ravel(f(x + e)) - np.ravel(f(x - e))) / (2.0 * h))
    return np.column_stack(cols)


def numerical_jacobian(game: TrafficGame, x, h: float = 1e-5) -> np.ndarray:
    """Finite-difference Jacobian of the mean-field field, valid at any ``x``."""
    return finite_difference_jacobian(lambda v: vector_field(game, v.reshape(game.shape)), x, h)


def characteristic_polynomial(J) -> np.ndarray:
    """Coefficients ``a_0..a_n`` of ``det(lambda I - J)`` by Faddeev-LeVerrier."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError("J must be a square matrix")
    n = J.shape[0]
    if n > MAX_CHARPOLY_DEGREE:
        raise ValueError(f"degree {n} > {MAX_CHARPOLY_DEGREE}: recurrence too ill-conditioned")
    a = np.zeros(n + 1)
    a[0] = 1.0
    m = np.eye(n)
    for k in range(1, n + 1):
        jm = J @ m
        a[k] = -np.trace(jm) / k
        m = jm + a[k] * np.eye(n)
    return a


def hurwitz_matrix(a) -> np.ndarray:
    """``n x n`` Hurwitz matrix; entry ``(i, j)`` (1-based) is ``a_{2j - i}``."""
    a = np.asarray(a, dtype=float)
    n = a.size - 1
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            k = 2 * (j + 1) - (i + 1)
            if 0 <= k <= n:
                H[i, j] = a[k]
    return H


def hurwitz_minors(a) -> np.ndarray:
    """Leading principal minors ``Delta_1..Delta_n`` of the Hurwitz matrix (LU determinants)."""
    a = np.asarray(a, dtype=float)
    if a[0] <= 0:
        raise ValueError("leading coefficient must be positive")
    H = hurwitz_matrix(a)
    return np.array([np.linalg.det(H[:k, :k]) for k in range(1, H.shape[0] + 1)])


@dataclass
class StabilityVerdict:
    stable: bool
    marginal: bool
    minors: np.ndarray
    coefficients: np.ndarray
    method: str = "routh_hurwitz"
    max_real_part: float | None = None
    roots: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "stable": self.stable,
            "marginal": self.marginal,
            "minors": [float(v) for v in self.minors],
            "coefficients": [float(v) for v in self.coefficients],
            "max_real_part": None if self.max_real_part is None else float(self.max_real_part),
        }


def routh_hurwitz_stable(a, band: float = MARGINAL_BAND, with_roots: bool = False) -> StabilityVerdict:
    """All roots in the open left half-plane iff every Hurwitz minor is positive.

    Minors within ``band`` of zero make the verdict ``marginal`` (and not stable).
    ``with_roots`` attaches the Durand-Kerner max real part for cross-checks.
    """
    a = np.asarray(a, dtype=float)
    minors = hurwitz_minors(a)
    marginal = bool(np.any(np.abs(minors) < band))
    stable = bool(not marginal and np.all(minors > 0))
    verdict = StabilityVerdict(stable, marginal, minors, a)
    if with_roots:
        roots = polynomial_roots(a)
        verdict.roots = roots
        verdict.max_real_part = float(np.max(roots.real))
    return verdict


def _dimitrov_pena_root() -> float:
    """Real root of ``z^3 - 5 z^2 + 4 z - 1``, bracketed in ``[4, 5]``."""
    f = lambda z: ((z - 5.0) * z + 4.0) * z - 1.0
    lo, hi = 4.0, 5.0
    while hi - lo > 1e-14:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


DIMITROV_PENA_Z = _dimitrov_pena_root()


def dimitrov_pena_sufficient(a) -> bool:
    """Sufficient stability test: ``a_k > 0`` and ``a_k a_{k+1} >= z a_{k-1} a_{k+2}``."""
    a = np.asarray(a, dtype=float)
    n = a.size - 1
    if np.any(a <= 0):
        return False
    return all(a[k] * a[k + 1] >= DIMITROV_PENA_Z * a[k - 1] * a[k + 2] for k in range(1, n - 1))


def _durand_kerner(c, tol, max_iter):
    n = c.size - 1
    # Fujiwara bound on root moduli gives a starting circle enclosing all roots.
    radius = 2.0 * max(abs(c[k]) ** (1.0 / k) for k in range(1, n + 1))
    radius = max(radius, 1e-3)
    z = radius * np.exp(1j * (2.0 * np.pi * np.arange(n) / n + 0.4))
    absc = np.abs(c)
    reached = None
    last_step = np.inf
    for it in range(max_iter):
        p = np.polyval(c, z)
        diff = z[:, None] - z[None, :]
        np.fill_diagonal(diff, 1.0)
        delta = p / np.prod(diff, axis=1)
        step = np.max(np.abs(delta) / np.maximum(1.0, np.abs(z)))
        if reached is not None and (step >= last_step or step < 1e-15 or it - reached > 200):
            # Refinement past the residual target stalls at rounding level
            # (clustered roots converge only linearly); keep the last iterate.
            return z, residual, it
        z = z - delta
        last_step = step
        scale = np.polyval(absc, np.abs(z))
        residual = np.max(np.abs(np.polyval(c, z)) / scale)
        if reached is None and residual < tol:
            reached = it
    raise RootFindingError(f"Durand-Kerner did not converge in {max_iter} iterations "
                           f"(residual {residual:.2e})")


def polynomial_roots(a, tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """All complex roots by Durand-Kerner simultaneous iteration.

    Convergence is declared when every approximant has relative residual
    ``|p(z)| / sum_k |a_k| |z|^(n-k)`` below ``tol`` (then two more polishing
    sweeps). On failure the polynomial is rescaled to unit root modulus and
    retried once.
    """
    a = np.asarray(a, dtype=float)
    nz = np.flatnonzero(a)
    if nz.size == 0:
        raise ValueError("zero polynomial")
    a = a[nz[0]:]
    n = a.size - 1
    if n < 1:
        raise ValueError("degree must be >= 1")
    trailing = n - np.flatnonzero(a)[-1]
    c = a[: a.size - trailing] / a[0]
    zeros = np.zeros(trailing, dtype=complex)
    if c.size == 1:
        return zeros
    try:
        z, _, _ = _durand_kerner(c, tol, max_iter)
    except RootFindingError:
        m = c.size - 1
        s = abs(c[-1]) ** (1.0 / m)
        scaled = c / s ** np.arange(m + 1)
        z, _, _ = _durand_kerner(scaled, tol, max_iter)
        z = z * s
    return np.concatenate([z, zeros])


def max_real_part(a) -> float:
    return float(np.max(polynomial_roots(a).real))


def analyze_rest_point(game: TrafficGame, x) -> dict:
    """Jacobian, coefficients and both verdicts for one rest point (general N, M)."""
    rp = x if isinstance(x, RestPoint) else None
    J = jacobian_at_rest_point(game, x)
    a = characteristic_polynomial(J)
    verdict = routh_hurwitz_stable(a, with_roots=True)
    out = verdict.to_dict()
    if rp is not None:
        out = {"x": rp.x.tolist(), "residual": rp.residual, **out}
    out["trace"] = float(np.trace(J))
    out["dimitrov_pena"] = dimitrov_pena_sufficient(a)
    return out
