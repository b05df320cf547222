"""Complete equilibrium theory of the 2-player, 2-route game.

Route index 0 is ``a`` and 1 is ``b``. With ``w^i = beta_i (x^{ia} - x^{ib})``
the rest-point system collapses to fixed points of the increasing scalar map
``psi(w) = beta_1 phi(beta_2 phi(w))``, ``phi(w) = kappa + delta rho(w)``,
``rho(w) = 1 / (1 + e^w)``. Since ``psi`` is convex then concave (a single
inflection), ``psi(w) - w`` has at most three zeros and they can be bracketed
exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .game import GameError, TrafficGame
from .mean_field import (SIGN_2X2, REST_POINT_TOL, RestPoint, Trajectory, integrate,
                         order_leq_s, order_violation, rest_point)
from .stability import jacobian_at_rest_point

GRID_POINTS = 4096
ROOT_TOL = 1e-13
TANGENCY_TOL = 1e-9
TANGENT_GAP = 1e-10
A4_BAND = 1e-12


class SolverPathologyError(RuntimeError):
    """Enumeration produced a result the theory rules out (e.g. four roots)."""


class NotCaseCError(ValueError):
    """Operation requires three rest points (case (c))."""


def rho(w):
    """Logit probability of route ``a`` as a function of ``w``, ``1 / (1 + e^w)``."""
    return 0.5 * (1.0 - np.tanh(0.5 * np.asarray(w, dtype=float)))


def _rho_slope(w):
    """``rho(w) (1 - rho(w))``, evaluated without cancellation."""
    return rho(w) * rho(-np.asarray(w, dtype=float))


def _bisect(f, lo, hi, ftol=0.0, max_iter=400):
    """Bisection for a sign change of ``f`` on ``[lo, hi]``."""
    flo = f(lo)
    if flo == 0:
        return lo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= ftol or mid in (lo, hi):
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ReducedGame2x2:
    """Derived constants of a 2x2 game and the scalar maps of the reduction."""

    ca: tuple[float, float]
    cb: tuple[float, float]
    beta1: float
    beta2: float

    @property
    def delta_a(self) -> float:
        return self.ca[1] - self.ca[0]

    @property
    def delta_b(self) -> float:
        return self.cb[1] - self.cb[0]

    @property
    def delta(self) -> float:
        return self.delta_a + self.delta_b

    @property
    def nu(self) -> float:
        return self.beta1 * self.beta2

    @property
    def kappa(self) -> float:
        return self.ca[0] - self.cb[1]

    @property
    def c(self) -> float:
        return (self.ca[0] + self.ca[1]) - (self.cb[0] + self.cb[1])

    @property
    def q(self) -> float:
        """``1 + 2 kappa / delta``; equals ``c / delta``. Undefined when ``delta == 0``."""
        if self.delta <= 0:
            raise ValueError("q is undefined for delta = 0")
        return 1.0 + 2.0 * self.kappa / self.delta

    @property
    def symmetric(self) -> bool:
        return self.beta1 == self.beta2

    @property
    def mu(self) -> float:
        if not self.symmetric:
            raise ValueError("mu is defined for identical players only")
        return self.beta1 * self.delta

    def game(self) -> TrafficGame:
        return TrafficGame(costs=[self.ca, self.cb], betas=[self.beta1, self.beta2])

    def phi(self, w):
        return self.kappa + self.delta * rho(w)

    def phi_prime(self, w):
        return -self.delta * _rho_slope(w)

    def psi(self, w):
        return self.beta1 * self.phi(self.beta2 * self.phi(w))

    def psi_prime(self, w):
        return self.nu * self.phi_prime(self.beta2 * self.phi(w)) * self.phi_prime(w)

    def theta(self, w):
        """``beta phi(w)`` for identical players."""
        return self.beta1 * self.phi(w)

    def curvature_sign(self, w) -> float:
        """Bracketed factor of ``psi''``; same sign as ``psi''`` and strictly decreasing."""
        bd = self.beta2 * self.delta
        return bd - 2.0 * bd * rho(self.beta2 * self.phi(w)) - 2.0 * math.sinh(w)

    def partner(self, w1):
        """Second coordinate ``w^2 = beta_2 phi(w^1)`` of a solution."""
        return self.beta2 * self.phi(w1)


def reduce(game: TrafficGame) -> ReducedGame2x2:
    if game.shape != (2, 2):
        raise GameError(f"reduction requires a 2x2 game, got shape {game.shape}")
    (a1, a2), (b1, b2) = game.costs
    return ReducedGame2x2((float(a1), float(a2)), (float(b1), float(b2)),
                          float(game.betas[0]), float(game.betas[1]))


def lift(red: ReducedGame2x2, w1: float) -> np.ndarray:
    """Rest point (2x2 estimate profile) corresponding to a fixed point ``w1`` of ``psi``."""
    w2 = red.partner(w1)
    p1a, p2a = float(rho(w1)), float(rho(w2))
    (ca1, _), (cb1, cb2) = red.ca, red.cb
    return np.array([
        [ca1 + red.delta_a * p2a, cb2 + (cb1 - cb2) * p2a],
        [ca1 + red.delta_a * p1a, cb2 + (cb1 - cb2) * p1a],
    ])


@dataclass
class Verdict2x2:
    stable: bool
    marginal: bool
    a2: float
    a3: float
    a4: float
    Z: float
    S: float
    Y: float
    P: float

    @property
    def label(self) -> str:
        return "marginal" if self.marginal else ("stable" if self.stable else "unstable")


def characteristic_coefficients(red: ReducedGame2x2, x) -> Verdict2x2:
    """Closed-form ``a_2, a_3, a_4`` of the 4x4 Jacobian at a rest point and the verdict.

    Stable iff ``a_4 = Z (1 - nu delta^2 Z) > 0``. The marginal band is applied
    to ``1 - nu delta^2 Z`` (``a_4 / Z``) so equilibria with tiny choice
    probabilities are not mislabelled as marginal just because ``Z`` is small.
    """
    if isinstance(x, RestPoint):
        x = x.x
    x = np.asarray(x, dtype=float).reshape(2, 2)
    betas = np.array([red.beta1, red.beta2])
    w = betas * (x[:, 0] - x[:, 1])
    pa, pb = rho(w), rho(-w)
    z = pa * pb
    y = pa * red.delta_a + pb * red.delta_b
    Z, S = z[0] * z[1], z[0] + z[1]
    Y, P = y[0] * y[1], z[0] * y[1] + z[1] * y[0]
    nu, d = red.nu, red.delta
    a2 = 1.0 + S - nu * Z * Y
    a3 = S - nu * d * Z * P
    gap = 1.0 - nu * d * d * Z
    a4 = Z * gap
    marginal = abs(gap) <= A4_BAND
    return Verdict2x2(bool(gap > 0 and not marginal), bool(marginal),
                      float(a2), float(a3), float(a4), float(Z), float(S), float(Y), float(P))


stability_2x2 = characteristic_coefficients


@dataclass
class FixedPointReport:
    case: str
    w_values: np.ndarray
    psi_derivatives: np.ndarray
    rest_points: list[np.ndarray]
    verdicts: list[Verdict2x2]
    reduced: ReducedGame2x2 = field(repr=False)

    @property
    def count(self) -> int:
        return len(self.w_values)

    @property
    def stabilities(self) -> list[str]:
        out = []
        for v, d in zip(self.verdicts, self.psi_derivatives):
            out.append("marginal" if abs(d - 1.0) <= TANGENCY_TOL else v.label)
        return out

    def to_dict(self) -> dict:
        points = []
        for w1, d, x, v, lab in zip(self.w_values, self.psi_derivatives, self.rest_points,
                                    self.verdicts, self.stabilities):
            points.append({
                "w1": float(w1), "w2": float(self.reduced.partner(w1)), "psi_prime": float(d),
                "x": x.tolist(), "a2": v.a2, "a3": v.a3, "a4": v.a4,
                "stable": lab == "stable", "marginal": lab == "marginal",
            })
        return {"case": self.case, "points": points}


def _psi_prime_one_crossings(red, w0):
    """Points left and right of the inflection ``w0`` where ``psi' = 1``."""
    out = []
    f = lambda w: red.psi_prime(w) - 1.0
    for direction in (-1.0, 1.0):
        span = 1.0
        while f(w0 + direction * span) > 0:
            span *= 2.0
            if span > 1e6:
                raise SolverPathologyError("psi' does not decay away from its peak")
        lo, hi = sorted((w0, w0 + direction * span))
        out.append(_bisect(f, lo, hi))
    return out


def enumerate_fixed_points(red: ReducedGame2x2) -> FixedPointReport:
    """All fixed points of ``psi`` with their case label (a, b or c).

    ``g(w) = psi(w) - w`` is scanned on a uniform grid over
    ``[beta_1 kappa - 1, beta_1 (kappa + delta) + 1]`` augmented with the
    inflection ``w0`` of ``psi`` and the two points where ``psi' = 1``. Between
    consecutive breakpoints ``g`` is then monotone, so every transversal root
    is bracketed and bisected. A tangential (double) root sits at a
    ``psi' = 1`` point with ``|g| <= 1e-10``; any bisected roots within the
    splitting distance ``sqrt(4e-10 / |psi''|)`` of it are absorbed into it.
    """
    if red.delta == 0:
        w = red.beta1 * red.kappa
        return _report(red, [w])
    g = lambda w: red.psi(w) - w
    lo = red.beta1 * red.kappa - 1.0
    hi = red.beta1 * (red.kappa + red.delta) + 1.0
    halfwidth = math.asinh(red.beta2 * red.delta) + 1.0
    w0 = _bisect(red.curvature_sign, -halfwidth, halfwidth)
    critical = [w0]
    tangent = []  # (w, merge radius)
    if red.psi_prime(w0) > 1.0:
        for wc in _psi_prime_one_crossings(red, w0):
            critical.append(wc)
            gc = abs(g(wc))
            if gc <= TANGENT_GAP:
                # roots closer than the double-root splitting belong to the tangency
                h = 1e-5
                curv = abs(red.psi_prime(wc + h) - red.psi_prime(wc - h)) / (2 * h)
                tangent.append((wc, math.sqrt(4.0 * TANGENT_GAP / max(curv, 1e-300))))
    grid = np.union1d(np.linspace(lo, hi, GRID_POINTS), [c for c in critical if lo < c < hi])
    values = g(grid)
    roots = [wc for wc, _ in tangent]
    for k in range(len(grid) - 1):
        ga, gb = values[k], values[k + 1]
        if ga == 0.0:
            cand = grid[k]
        elif (ga > 0) != (gb > 0) and gb != 0.0:
            cand = _bisect(g, grid[k], grid[k + 1], ftol=ROOT_TOL)
        else:
            continue
        if any(abs(cand - wc) <= rad for wc, rad in tangent):
            continue
        if all(abs(cand - r) > 1e-7 for r in roots):
            roots.append(cand)
    roots.sort()
    if len(roots) > 3:
        raise SolverPathologyError(f"{len(roots)} fixed points found; at most 3 can exist")
    return _report(red, roots)


def _report(red, roots) -> FixedPointReport:
    w = np.array(roots, dtype=float)
    d = np.array([red.psi_prime(v) for v in w])
    xs = [lift(red, v) for v in w]
    verdicts = [characteristic_coefficients(red, x) for x in xs]
    case = {1: "a", 2: "b", 3: "c"}[len(w)]
    if case == "c" and not (d[0] < 1.0 < d[1] and d[2] < 1.0):
        raise SolverPathologyError(f"three fixed points with psi' = {d.tolist()}")
    if case == "b" and not np.any(np.abs(d - 1.0) <= TANGENCY_TOL):
        raise SolverPathologyError(f"two transversal fixed points, psi' = {d.tolist()}")
    return FixedPointReport(case, w, d, xs, verdicts, red)


def analyze(game: TrafficGame) -> FixedPointReport:
    return enumerate_fixed_points(reduce(game))


def order_chain(report: FixedPointReport) -> bool:
    """``x_- <=_s xbar <=_s x_+`` for the three rest points of case (c)."""
    if report.case != "c":
        raise NotCaseCError(f"order chain needs case (c), got case ({report.case})")
    lo, mid, hi = report.rest_points
    return order_leq_s(lo, mid, SIGN_2X2) and order_leq_s(mid, hi, SIGN_2X2)


@dataclass
class HeteroclinicResult:
    eigenvalue: float
    eigenvector: np.ndarray
    plus: Trajectory
    minus: Trajectory
    plus_target: np.ndarray
    minus_target: np.ndarray

    @property
    def plus_distance(self) -> float:
        return float(np.max(np.abs(self.plus.final_state - self.plus_target)))

    @property
    def minus_distance(self) -> float:
        return float(np.max(np.abs(self.minus.final_state - self.minus_target)))

    @property
    def plus_violation(self) -> float:
        return order_violation(self.plus.states, SIGN_2X2)

    @property
    def minus_violation(self) -> float:
        """Order violation of the minus orbit, which must be ``<=_s``-decreasing."""
        return order_violation(self.minus.states, -SIGN_2X2)

    def audit(self) -> dict:
        return {
            "eigenvalue": self.eigenvalue,
            "eigenvector": self.eigenvector.tolist(),
            "plus": {"terminal_flag": self.plus.terminal_flag.value,
                     "distance_to_target": self.plus_distance,
                     "max_order_violation": self.plus_violation,
                     "samples": len(self.plus.times)},
            "minus": {"terminal_flag": self.minus.terminal_flag.value,
                      "distance_to_target": self.minus_distance,
                      "max_order_violation": self.minus_violation,
                      "samples": len(self.minus.times)},
        }


def perron_direction(J, s, tol: float = 1e-14, max_iter: int = 100_000):
    """Dominant eigenpair of ``J`` through power iteration on ``P_s J P_s + alpha I``.

    ``P_s J P_s`` has non-negative off-diagonal entries, so the shifted matrix is
    non-negative and its Perron vector ``v >= 0`` gives ``J``'s eigenvector
    ``P_s v`` for the eigenvalue of largest real part.
    """
    s = np.ravel(s).astype(float)
    A = s[:, None] * J * s[None, :]
    alpha = max(0.0, -float(np.min(np.diag(A)))) + 1.0
    B = A + alpha * np.eye(len(s))
    if np.any(B < -1e-12):
        raise ValueError("P_s J P_s has negative off-diagonal entries")
    v = np.ones(len(s)) / len(s)
    for _ in range(max_iter):
        u = B @ v
        u /= np.max(np.abs(u))
        if np.max(np.abs(u - v)) < tol:
            v = u
            break
        v = u
    else:
        raise RuntimeError("power iteration did not converge")
    eigenvalue = float(v @ (B @ v) / (v @ v)) - alpha
    return eigenvalue, s * v


def heteroclinic_trace(game: TrafficGame, report: FixedPointReport | None = None,
                       epsilon: float = 1e-4, step: float = 0.01, t_max: float = 1e4,
                       tol: float = REST_POINT_TOL, stride: int = 10) -> HeteroclinicResult:
    """Trace both unstable-manifold branches of the saddle ``xbar`` in case (c)."""
    if not 0 < epsilon <= 1e-3:
        raise ValueError("epsilon must lie in (0, 1e-3]")
    report = report or analyze(game)
    if report.case != "c":
        raise NotCaseCError(f"heteroclinic orbits need case (c), got case ({report.case})")
    lo, mid, hi = report.rest_points
    J = jacobian_at_rest_point(game, mid)
    eigenvalue, v = perron_direction(J, SIGN_2X2)
    v = v.reshape(2, 2)
    plus = integrate(game, mid + epsilon * v, step, t_max, tol, stride)
    minus = integrate(game, mid - epsilon * v, step, t_max, tol, stride)
    return HeteroclinicResult(eigenvalue, v.ravel(), plus, minus, hi, lo)


# ---------------------------------------------------------------------------
# identical players


def symmetric_game(mu: float, q: float, delta: float = 1.0) -> TrafficGame:
    """Identical-player game realising ``mu = beta delta`` and ``q`` (``delta = 1`` wlog)."""
    kappa = 0.5 * (q - 1.0) * delta
    half = 0.5 * delta
    beta = mu / delta
    return TrafficGame(costs=[[kappa + half, kappa + delta], [0.0, half]], betas=[beta, beta])


@dataclass
class SymmetricReport:
    w_bar: float
    psi_prime_bar: float
    num_equilibria: int
    symmetric_stable: str
    report: FixedPointReport
    swap_error: float | None = None

    def to_dict(self) -> dict:
        return {"w_bar": self.w_bar, "psi_prime_bar": self.psi_prime_bar,
                "num_equilibria": self.num_equilibria, "symmetric_point": self.symmetric_stable,
                "swap_error": self.swap_error, **self.report.to_dict()}


def symmetric_fixed_point(red: ReducedGame2x2) -> float:
    """Unique fixed point of the decreasing map ``theta``."""
    if not red.symmetric:
        raise ValueError("identical players required (beta_1 == beta_2)")
    beta = red.beta1
    lo = beta * red.kappa - 1.0
    hi = beta * (red.kappa + red.delta) + 1.0
    return _bisect(lambda w: red.theta(w) - w, lo, hi)


def symmetric_analysis(red: ReducedGame2x2) -> SymmetricReport:
    """Symmetric rest point, its stability, and the two side equilibria when it is a saddle."""
    w_bar = symmetric_fixed_point(red)
    d_bar = float(red.psi_prime(w_bar))
    report = enumerate_fixed_points(red)
    if report.count not in (1, 3):
        raise SolverPathologyError(f"identical players gave {report.count} fixed points")
    if abs(d_bar - 1.0) <= TANGENCY_TOL:
        label = "marginal"
    else:
        label = "stable" if d_bar < 1.0 else "unstable"
    swap = None
    if report.count == 3:
        w_lo, w_mid, w_hi = report.w_values
        if abs(w_mid - w_bar) > 1e-8 or d_bar <= 1.0:
            raise SolverPathologyError("symmetric fixed point is not the unstable middle root")
        if not (report.psi_derivatives[0] < 1.0 and report.psi_derivatives[2] < 1.0):
            raise SolverPathologyError("side equilibria are not stable")
        x_lo, x_hi = report.rest_points[0], report.rest_points[2]
        swap = float(np.max(np.abs(x_lo[::-1] - x_hi)))
    return SymmetricReport(float(w_bar), d_bar, report.count, label, report, swap)


def boundary_function(x: float) -> float:
    """``h(x) = x artanh(sqrt(1 - x)) + sqrt(1 - x)`` on ``(0, 1]``."""
    r = math.sqrt(1.0 - x)
    return x * math.atanh(r) + r


def symmetric_boundary(mu: float) -> float:
    """Critical ``|q|`` for identical players: three equilibria iff ``|q| < h(4 / mu)``."""
    if mu <= 4.0:
        raise ValueError("symmetric boundary exists only for mu > 4")
    return boundary_function(4.0 / mu)


def critical_q(mu: float, tol: float = 1e-8) -> float:
    """``q > 0`` at which ``psi'(wbar)`` crosses 1, located numerically (no closed form used)."""
    f = lambda q: symmetric_psi_prime(mu, q) - 1.0
    if f(0.0) <= 0:
        raise ValueError("psi'(wbar) <= 1 already at q = 0; no crossing")
    hi = 1.0
    while f(hi) > 0:
        hi *= 2.0
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def symmetric_psi_prime(mu: float, q: float) -> float:
    red = reduce(symmetric_game(mu, q))
    return float(red.psi_prime(symmetric_fixed_point(red)))


def rest_points_2x2(game: TrafficGame) -> list[RestPoint]:
    return [rest_point(game, x) for x in analyze(game).rest_points]
