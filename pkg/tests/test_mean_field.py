import numpy as np
import pytest

from trafficlearn.game import TrafficGame
from trafficlearn.mean_field import (SIGN_2X2, RestPoint, Termination, Trajectory,
                                     find_rest_points, initial_profiles, integrate,
                                     integrate_many, order_leq_s, order_violation, rest_point,
                                     vector_field)
from trafficlearn.stability import finite_difference_jacobian
from trafficlearn.two_by_two import analyze


def test_field_zero_at_symmetric_point(stable_game):
    assert np.max(np.abs(vector_field(stable_game, np.full((2, 2), 2.0)))) < 1e-15


def test_field_negative_above_max_cost(rng):
    g = TrafficGame(np.sort(rng.uniform(0, 10, (3, 4)), axis=1), [1, 2, 0.5, 1])
    x = g.costs[:, -1][None, :] + rng.uniform(0.1, 5, (4, 3))
    assert np.all(vector_field(g, x) < 0)


def test_field_batched(unstable_game, rng):
    x = rng.uniform(0, 4, (7, 2, 2))
    batch = vector_field(unstable_game, x)
    assert np.allclose(batch[3], vector_field(unstable_game, x[3]), rtol=0, atol=1e-15)


class TestIntegrate:
    def test_rest_point_converges_at_zero(self, stable_game):
        traj = integrate(stable_game, np.full((2, 2), 2.0))
        assert traj.terminal_flag is Termination.CONVERGED
        assert list(traj.times) == [0.0]

    def test_stable_game_global_attractor(self, stable_game, rng):
        for _ in range(5):
            traj = integrate(stable_game, rng.uniform(0, 5, (2, 2)), stride=100)
            assert traj.terminal_flag is Termination.CONVERGED
            assert np.max(np.abs(traj.final_state - 2.0)) < 1e-6

    def test_unstable_game_reaches_side_point(self, unstable_game, rng):
        report = analyze(unstable_game)
        lo, _, hi = report.rest_points
        for _ in range(3):
            traj = integrate(unstable_game, rng.uniform(0, 4, (2, 2)), stride=1000)
            assert traj.terminal_flag is Termination.CONVERGED
            d = min(np.max(np.abs(traj.final_state - lo)), np.max(np.abs(traj.final_state - hi)))
            assert d < 1e-6

    def test_max_time_and_stride(self, stable_game):
        traj = integrate(stable_game, np.zeros((2, 2)), step=0.1, t_max=1.0, stride=3)
        assert traj.terminal_flag is Termination.MAX_TIME
        assert traj.times[-1] == 1.0
        assert np.allclose(traj.times, [0.0, 0.3, 0.6, 0.9, 1.0])

    def test_rk4_fourth_order(self, unstable_game):
        x0 = np.array([[0.5, 2.5], [3.0, 1.0]])
        end = lambda h: integrate(unstable_game, x0, step=h, t_max=2.0, tol=0).final_state
        ref = end(0.1 / 64)
        e1 = np.max(np.abs(end(0.1) - ref))
        e2 = np.max(np.abs(end(0.05) - ref))
        assert 12 <= e1 / e2 <= 20

    def test_rejects_bad_step(self, stable_game):
        with pytest.raises(ValueError):
            integrate(stable_game, np.zeros((2, 2)), step=0)
        with pytest.raises(ValueError):
            integrate(stable_game, np.zeros((2, 2)), stride=0)

    def test_integrate_many_matches_single(self, unstable_game, rng):
        x0 = rng.uniform(0, 4, (3, 2, 2))
        t, states = integrate_many(unstable_game, x0, step=0.01, t_max=1.0, stride=10)
        single = integrate(unstable_game, x0[1], step=0.01, t_max=1.0, tol=0, stride=10)
        assert np.array_equal(t, single.times)
        assert np.allclose(states[:, 1], single.states, rtol=0, atol=1e-14)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.0]), np.zeros((2, 2, 2)), Termination.MAX_TIME)
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 1.0]), np.zeros((3, 2, 2)), Termination.MAX_TIME)


class TestRestPoints:
    def test_unique_when_bound_holds(self, stable_game):
        pts = find_rest_points(stable_game, 50, seed=1)
        assert len(pts) == 1
        assert np.max(np.abs(pts[0].x - 2.0)) < 1e-10

    def test_unstable_symmetric_three(self, unstable_game):
        pts = find_rest_points(unstable_game, 200, seed=0)
        ref = analyze(unstable_game).rest_points
        assert len(pts) == 3
        for p, q in zip(pts, sorted(ref, key=lambda v: tuple(v.ravel()))):
            assert np.max(np.abs(p.x - q)) < 1e-8
            assert p.residual < 1e-10

    def test_constant_costs(self):
        g = TrafficGame([[2, 2, 2], [5, 5, 5], [1, 1, 1]], [0.3, 1, 2])
        pts = find_rest_points(g, 20, seed=0)
        assert len(pts) == 1
        assert np.allclose(pts[0].x, np.tile([2.0, 5.0, 1.0], (3, 1)), atol=1e-12)

    def test_inside_cost_box_general_game(self, rng):
        g = TrafficGame(np.sort(rng.uniform(0, 10, (3, 3)), axis=1), [0.7, 1.1, 0.4])
        for p in find_rest_points(g, 40, seed=3):
            assert np.all(p.x >= g.costs[:, 0] - 1e-9) and np.all(p.x <= g.costs[:, -1] + 1e-9)

    def test_deterministic_and_damped_only_mode(self, unstable_game):
        a = find_rest_points(unstable_game, 30, seed=5)
        b = find_rest_points(unstable_game, 30, seed=5)
        assert [p.x.tolist() for p in a] == [p.x.tolist() for p in b]
        # the plain damped iteration cannot settle on the saddle
        damped = find_rest_points(unstable_game, 30, seed=5, newton=False)
        assert len(damped) == 2

    def test_starts_box_and_streams(self, stable_game):
        s = initial_profiles(stable_game, 10, 4)
        assert np.all((s >= 0) & (s <= 4))
        assert np.array_equal(initial_profiles(stable_game, 3, 4), s[:3])

    def test_rejects_no_starts(self, stable_game):
        with pytest.raises(ValueError):
            find_rest_points(stable_game, 0)

    def test_rest_point_round_trip(self, stable_game):
        p = rest_point(stable_game, np.full((2, 2), 2.0))
        q = RestPoint.from_dict(p.to_dict())
        assert np.array_equal(p.x, q.x) and p.residual == q.residual


class TestOrder:
    def test_reflexive(self, rng):
        x = rng.normal(size=4)
        assert order_leq_s(x, x, SIGN_2X2)

    def test_add_sign_vector(self, rng):
        x = rng.normal(size=(2, 2))
        assert order_leq_s(x, x + SIGN_2X2.reshape(2, 2), SIGN_2X2)
        assert not order_leq_s(x + SIGN_2X2.reshape(2, 2), x, SIGN_2X2)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            order_leq_s(np.zeros(4), np.zeros(3), SIGN_2X2)

    def test_violation_monotone_sequence(self):
        seq = np.cumsum(np.ones((5, 4)) * SIGN_2X2, axis=0)
        assert order_violation(seq, SIGN_2X2) <= 0
        assert order_violation(seq[::-1], SIGN_2X2) == pytest.approx(4.0)  # first vs last sample
        assert order_violation(seq[:1], SIGN_2X2) == 0.0


def _ps_j_ps_offdiag_min(game, x):
    J = finite_difference_jacobian(lambda z: vector_field(game, z.reshape(2, 2)).ravel(), np.ravel(x))
    A = SIGN_2X2[:, None] * J * SIGN_2X2[None, :]
    np.fill_diagonal(A, 0.0)
    return A.min()


def test_sign_pattern_cooperative_at_rest_points(unstable_game):
    for p in find_rest_points(unstable_game, 50, seed=0):
        assert _ps_j_ps_offdiag_min(unstable_game, p.x) > -1e-8


def test_sign_pattern_fails_away_from_rest_points(unstable_game):
    # same-player cross entry is beta pi^a pi^b (C^a - x^a): negative under P_s once C^a > x^a
    x = np.array([[0.0, 2.0], [2.0, 2.0]])
    assert _ps_j_ps_offdiag_min(unstable_game, x) < -0.1
