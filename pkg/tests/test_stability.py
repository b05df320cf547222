import itertools

import numpy as np
import pytest

from trafficlearn.game import TrafficGame
from trafficlearn.mean_field import find_rest_points, rest_point
from trafficlearn.stability import (DIMITROV_PENA_Z, NotARestPointError, analyze_rest_point,
                                    characteristic_polynomial, dimitrov_pena_sufficient,
                                    finite_difference_jacobian, hurwitz_matrix, hurwitz_minors,
                                    jacobian_at_rest_point, max_real_part, numerical_jacobian,
                                    polynomial_roots, routh_hurwitz_stable)
from trafficlearn.two_by_two import analyze


def poly_from_roots(roots):
    return np.real(np.poly(roots))


class TestJacobian:
    def test_stable_point_against_fd(self, stable_game):
        x = np.full((2, 2), 2.0)
        J = jacobian_at_rest_point(stable_game, x)
        assert np.max(np.abs(J - numerical_jacobian(stable_game, x, 1e-5))) < 1e-6

    def test_canonical_entries(self, stable_game):
        # pi = 1/2, Lambda = 2, beta = 1/2: off-diagonal block entries +-1/8
        J = jacobian_at_rest_point(stable_game, np.full((2, 2), 2.0))
        expected = np.array([
            [-0.5, 0.0, -0.125, 0.125],
            [0.0, -0.5, 0.125, -0.125],
            [-0.125, 0.125, -0.5, 0.0],
            [0.125, -0.125, 0.0, -0.5],
        ])
        assert np.allclose(J, expected, atol=1e-15)

    def test_rejects_non_rest_point(self, stable_game):
        with pytest.raises(NotARestPointError):
            jacobian_at_rest_point(stable_game, np.zeros((2, 2)))

    def test_general_game_structure(self, rng):
        for _ in range(5):
            g = TrafficGame(np.sort(rng.uniform(0, 10, (3, 3)), axis=1), rng.uniform(0.2, 1.5, 3))
            for p in find_rest_points(g, 20, seed=1):
                J = jacobian_at_rest_point(g, p)
                assert np.trace(J) == pytest.approx(-3.0, abs=1e-10)
                assert np.max(np.abs(J - numerical_jacobian(g, p.x))) < 1e-6
                blocks = J.reshape(3, 3, 3, 3)
                for i, k in itertools.product(range(3), range(3)):
                    b = blocks[i, :, k, :]
                    if i == k:
                        assert np.allclose(b, np.diag(np.diag(b)), atol=1e-15)
                        assert np.all(np.diag(b) < 0)
                    else:
                        off = ~np.eye(3, dtype=bool)
                        assert np.all(np.diag(b) <= 1e-15) and np.all(b[off] >= -1e-15)

    def test_fd_linear_field_and_order(self, rng):
        A = rng.normal(size=(5, 5))
        assert np.max(np.abs(finite_difference_jacobian(lambda v: A @ v, rng.normal(size=5)) - A)) < 1e-9
        f = lambda v: np.array([np.sin(v[0]) * np.exp(v[1]), v[0] ** 3])
        x = np.array([0.7, -0.2])
        exact = np.array([[np.cos(0.7) * np.exp(-0.2), np.sin(0.7) * np.exp(-0.2)], [3 * 0.49, 0]])
        e1 = np.max(np.abs(finite_difference_jacobian(f, x, 1e-2) - exact))
        e2 = np.max(np.abs(finite_difference_jacobian(f, x, 5e-3) - exact))
        assert 3.5 < e1 / e2 < 4.5
        with pytest.raises(ValueError):
            finite_difference_jacobian(f, x, 0.0)


class TestCharacteristicPolynomial:
    def test_minus_identity(self):
        assert np.allclose(characteristic_polynomial(-np.eye(2)), [1, 2, 1], atol=0)

    def test_similarity_construction(self, rng):
        for _ in range(20):
            lam = rng.uniform(-3, 3, 4)
            P = rng.normal(size=(4, 4)) + 3 * np.eye(4)
            J = P @ np.diag(lam) @ np.linalg.inv(P)
            elementary = [1.0] + [(-1) ** k * sum(np.prod(c) for c in itertools.combinations(lam, k))
                                  for k in range(1, 5)]
            assert np.max(np.abs(characteristic_polynomial(J) - elementary)) < 1e-8

    def test_degree_limit(self):
        with pytest.raises(ValueError):
            characteristic_polynomial(np.eye(65))
        with pytest.raises(ValueError):
            characteristic_polynomial(np.ones((2, 3)))


class TestHurwitz:
    def test_matrix_layout(self):
        H = hurwitz_matrix([1, 2, 3, 4, 5])
        assert np.array_equal(H, [[2, 4, 0, 0], [1, 3, 5, 0], [0, 2, 4, 0], [0, 1, 3, 5]])

    def test_stable_quartic(self):
        v = routh_hurwitz_stable(poly_from_roots([-1, -1, -1, -1]))
        assert v.stable and not v.marginal and np.all(v.minors > 0)

    def test_unstable_quartic(self):
        v = routh_hurwitz_stable(poly_from_roots([1, -1, -1, -1]))
        assert not v.stable and np.min(v.minors) <= 0

    def test_zero_root_is_marginal(self):
        v = routh_hurwitz_stable(poly_from_roots([0, -1, -2, -3]))
        assert v.marginal and not v.stable

    def test_rejects_nonpositive_leading(self):
        with pytest.raises(ValueError):
            hurwitz_minors([-1, 2, 3])

    def test_agrees_with_roots(self, rng):
        for _ in range(500):
            n = int(rng.integers(2, 7))
            roots = rng.normal(-0.5, 1, n) + 1j * 0
            pairs = int(rng.integers(0, n // 2 + 1))
            for k in range(pairs):
                re, im = rng.normal(-0.5, 1), rng.uniform(0.1, 2)
                roots[2 * k], roots[2 * k + 1] = re + 1j * im, re - 1j * im
            if np.min(np.abs(roots.real)) < 1e-3:
                continue
            a = poly_from_roots(roots)
            v = routh_hurwitz_stable(a, with_roots=True)
            assert v.stable == bool(np.max(roots.real) < 0)
            assert v.max_real_part == pytest.approx(np.max(roots.real), abs=1e-6)


class TestDimitrovPena:
    def test_constant(self):
        z = DIMITROV_PENA_Z
        assert abs(((z - 5) * z + 4) * z - 1) < 1e-12
        assert z == pytest.approx(4.0796, abs=1e-4)

    def test_binomial_quartic(self):
        # (lambda + 1)^4: ratios a_k a_{k+1} / (a_{k-1} a_{k+2}) are 6 and 6 > z
        assert dimitrov_pena_sufficient([1, 4, 6, 4, 1])

    def test_negative_coefficient(self):
        assert not dimitrov_pena_sufficient([1, 4, -6, 4, 1])

    def test_implies_routh_hurwitz(self, rng):
        hits = 0
        for _ in range(2000):
            n = int(rng.integers(3, 7))
            a = np.concatenate([[1.0], np.exp(rng.normal(0, 1.5, n))])
            if dimitrov_pena_sufficient(a):
                hits += 1
                assert routh_hurwitz_stable(a).stable
        assert hits > 50


class TestRoots:
    def test_double_root(self):
        r = polynomial_roots([1, 2, 1])
        assert np.allclose(r, [-1, -1], atol=1e-7)

    def test_trailing_zeros_and_leading_zeros(self):
        r = np.sort_complex(polynomial_roots([0, 1, -3, 2, 0]))
        assert np.allclose(r, [0, 1, 2], atol=1e-12)
        with pytest.raises(ValueError):
            polynomial_roots([0, 0])
        with pytest.raises(ValueError):
            polynomial_roots([3])

    def test_against_numpy(self, rng):
        for _ in range(300):
            a = np.concatenate([[1.0], rng.normal(size=int(rng.integers(1, 9)))])
            assert max_real_part(a) == pytest.approx(np.max(np.roots(a).real), abs=1e-8)

    def test_canonical_stable_poly(self, stable_game):
        a = characteristic_polynomial(jacobian_at_rest_point(stable_game, np.full((2, 2), 2.0)))
        assert a[4] > 0 and max_real_part(a) < 0
        assert np.allclose(np.sort(polynomial_roots(a).real), [-0.75, -0.5, -0.5, -0.25], atol=1e-7)

    def test_negative_a4_has_positive_real_root(self, unstable_game):
        mid = analyze(unstable_game).rest_points[1]
        a = characteristic_polynomial(jacobian_at_rest_point(unstable_game, mid))
        assert a[4] < 0
        r = polynomial_roots(a)
        assert np.any((np.abs(r.imag) < 1e-9) & (r.real > 0))


def test_analyze_rest_point_report(unstable_game):
    mid = rest_point(unstable_game, analyze(unstable_game).rest_points[1])
    rep = analyze_rest_point(unstable_game, mid)
    assert rep["stable"] is False and rep["marginal"] is False
    assert rep["trace"] == pytest.approx(-2.0, abs=1e-12)
    assert rep["max_real_part"] == pytest.approx(0.25, abs=1e-9)
    assert set(rep) >= {"x", "residual", "minors", "coefficients", "dimitrov_pena"}
