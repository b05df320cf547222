"""Adaptive route-choice learning in congestion games.

Modules: ``game`` (Logit choice, expected conditional costs), ``mean_field``
(ODE, rest points), ``stochastic`` (the day-by-day learning process),
``stability`` (Jacobian, characteristic polynomial, Routh-Hurwitz),
``two_by_two`` (complete theory for two players on two routes) and ``cli``.
"""
from .game import GameError, TrafficGame, conditional_costs, logit_probabilities
from .mean_field import RestPoint, Trajectory, find_rest_points, integrate, vector_field
from .stability import characteristic_polynomial, jacobian_at_rest_point, routh_hurwitz_stable
from .stochastic import StepSchedule, simulate
from .two_by_two import ReducedGame2x2, analyze, heteroclinic_trace, reduce

__version__ = "0.1.0"

__all__ = [
    "GameError", "TrafficGame", "conditional_costs", "logit_probabilities",
    "RestPoint", "Trajectory", "find_rest_points", "integrate", "vector_field",
    "characteristic_polynomial", "jacobian_at_rest_point", "routh_hurwitz_stable",
    "StepSchedule", "simulate", "ReducedGame2x2", "analyze", "heteroclinic_trace", "reduce",
]
