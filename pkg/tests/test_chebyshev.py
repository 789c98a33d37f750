import numpy as np
import pytest

from algebraformer.chebyshev import (
    InvalidDegreeError,
    InvalidIntervalError,
    OutOfDomainError,
    barycentric_eval,
    closed_form_diagonal,
    convergence_profile,
    diff_matrix,
    gauss_lobatto_nodes,
    scale_to_interval,
)


class TestNodes:
    def test_degree_two(self):
        assert np.array_equal(gauss_lobatto_nodes(2).nodes, [1.0, 0.0, -1.0])

    def test_degree_one(self):
        assert np.array_equal(gauss_lobatto_nodes(1).nodes, [1.0, -1.0])

    def test_degree_four(self):
        s = np.sqrt(2.0) / 2.0
        assert np.allclose(gauss_lobatto_nodes(4).nodes, [1.0, s, 0.0, -s, -1.0], atol=1e-15)
        assert gauss_lobatto_nodes(4).nodes[2] == 0.0

    def test_endpoints_exact_and_decreasing(self):
        for N in (3, 10, 33):
            x = gauss_lobatto_nodes(N).nodes
            assert x[0] == 1.0 and x[-1] == -1.0
            assert np.all(np.diff(x) < 0)

    def test_zero_degree_rejected(self):
        with pytest.raises(InvalidDegreeError):
            gauss_lobatto_nodes(0)


class TestDiffMatrix:
    def test_degree_one_closed_form(self):
        D = diff_matrix(gauss_lobatto_nodes(1)).matrix
        assert np.allclose(D, [[0.5, -0.5], [0.5, -0.5]], atol=1e-15)
        # derivative of u(x) = x is 1 at both nodes
        assert np.allclose(D @ np.array([1.0, -1.0]), [1.0, 1.0], atol=1e-15)

    @pytest.mark.parametrize("N", [1, 2, 5, 16, 40])
    def test_constants_differentiate_to_zero(self, N):
        D = diff_matrix(gauss_lobatto_nodes(N)).matrix
        assert np.max(np.abs(D @ np.full(N + 1, 3.7))) <= 1e-10

    @pytest.mark.parametrize("N", [2, 8, 16, 32])
    def test_linear_exact(self, N):
        g = gauss_lobatto_nodes(N)
        D = diff_matrix(g).matrix
        assert np.max(np.abs(D @ g.nodes - 1.0)) <= 1e-10

    def test_degree_16_quintic(self):
        g = gauss_lobatto_nodes(16)
        D = diff_matrix(g).matrix
        err = np.max(np.abs(D @ g.nodes**5 - 5.0 * g.nodes**4))
        assert err <= 1e-9

    @pytest.mark.parametrize("N", [4, 8, 16, 32])
    def test_monomial_exactness(self, N):
        g = gauss_lobatto_nodes(N)
        D = diff_matrix(g).matrix
        tol = 1e-9 * max(1.0, N**2)
        for k in range(N + 1):
            du = np.zeros(N + 1) if k == 0 else k * g.nodes ** (k - 1)
            assert np.max(np.abs(D @ g.nodes**k - du)) <= tol, f"monomial degree {k}"

    @pytest.mark.parametrize("N", [2, 4, 6, 8])
    def test_nilpotency_on_polynomials(self, N):
        # D^(N+1) annihilates polynomial samples of degree <= N
        g = gauss_lobatto_nodes(N)
        D = diff_matrix(g).matrix
        u = g.nodes**N
        power = np.linalg.matrix_power(D, N + 1)
        bound = 1e-6 * np.linalg.norm(D, 2) ** (N + 1)
        assert np.max(np.abs(power @ u)) <= bound

    @pytest.mark.parametrize("N", [2, 8, 32, 64])
    def test_closed_form_diagonal_cross_check(self, N):
        # row-sum diagonal vs textbook closed form; the midpoint entry of an
        # even-degree grid is exactly 0, so compare with an absolute floor
        d = np.diag(diff_matrix(gauss_lobatto_nodes(N)).matrix)
        cf = closed_form_diagonal(N)
        assert np.all(np.abs(d - cf) <= 1e-8 * np.maximum(np.abs(cf), 1.0))

    def test_scaled_grid_rejected(self):
        D = diff_matrix(gauss_lobatto_nodes(4))
        scaled = scale_to_interval(D, 0.0, 2.0)
        with pytest.raises(InvalidIntervalError):
            diff_matrix(scaled.grid)


class TestScaleToInterval:
    def test_reference_interval_is_identity(self):
        D = diff_matrix(gauss_lobatto_nodes(6))
        S = scale_to_interval(D, -1.0, 1.0)
        assert np.array_equal(S.matrix, D.matrix)

    def test_unit_halfwidth_keeps_entries(self):
        D = diff_matrix(gauss_lobatto_nodes(5))
        S = scale_to_interval(D, 0.0, 2.0)
        assert np.array_equal(S.matrix, D.matrix)
        assert S.grid.points[0] == 2.0 and S.grid.points[-1] == 0.0

    def test_chain_rule_on_domain(self):
        D = diff_matrix(gauss_lobatto_nodes(12))
        S = scale_to_interval(D, 0.0, 7.5)
        assert np.max(np.abs(S.matrix @ S.grid.points - 1.0)) <= 1e-10

    def test_degenerate_interval_rejected(self):
        D = diff_matrix(gauss_lobatto_nodes(3))
        with pytest.raises(InvalidIntervalError):
            scale_to_interval(D, 1.0, 1.0)


class TestBarycentricEval:
    def test_node_hit_returns_stored_value(self):
        g = gauss_lobatto_nodes(6)
        vals = np.arange(7.0)
        for j, x in enumerate(g.points):
            assert barycentric_eval(g, vals, x) == vals[j]

    def test_constant(self):
        g = gauss_lobatto_nodes(5)
        for x in (-1.0, -0.3, 0.0, 0.9):
            assert barycentric_eval(g, np.full(6, 4.2), x) == pytest.approx(4.2, abs=1e-13)

    def test_cosine_interpolation(self):
        g = gauss_lobatto_nodes(8)
        vals = np.cos(g.nodes)
        assert barycentric_eval(g, vals, 0.3) == pytest.approx(np.cos(0.3), abs=1e-8)

    def test_out_of_domain(self):
        g = gauss_lobatto_nodes(4)
        with pytest.raises(OutOfDomainError):
            barycentric_eval(g, np.zeros(5), 1.1)

    def test_slack_at_boundary(self):
        g = gauss_lobatto_nodes(4)
        barycentric_eval(g, np.zeros(5), 1.0 + 1e-13)  # inside slack, no raise


class TestConvergenceProfile:
    def test_constant_function(self):
        prof = convergence_profile(lambda x: np.ones_like(x), lambda x: np.zeros_like(x), [2, 4, 8])
        assert all(err <= 1e-12 for _, err in prof)

    def test_cubic_exact_from_degree_three(self):
        prof = convergence_profile(lambda x: x**3, lambda x: 3 * x**2, [3, 5, 9])
        assert all(err <= 1e-10 for _, err in prof)

    def test_exponential_geometric_decay(self):
        prof = dict(convergence_profile(np.exp, np.exp, [8, 16]))
        assert prof[8] >= 1e3 * prof[16]

    def test_monotone_decay_until_floor(self):
        prof = convergence_profile(np.exp, np.exp, [4, 8, 12, 16, 20, 24])
        errs = [max(e, 1e-12) for _, e in prof]
        assert all(errs[i + 1] <= errs[i] for i in range(len(errs) - 1))
