import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

import centroidal_nmpc as cn
from centroidal_nmpc.fista import _cone_project_groups

from conftest import (
    active_set_box_qp,
    enumerate_box_qp,
    random_box_qp,
    subproblem_from_dense,
)


def cone_grid_oracle(f, mu, n_angles=72, n_radii=12, n_heights=12):
    """Nearest point to f over a dense sample of cone points."""
    f = np.asarray(f, dtype=float)
    zmax = 2.0 * max(np.linalg.norm(f), 1.0)
    angles = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    radii = np.linspace(0.0, 1.0, n_radii)
    heights = np.linspace(0.0, zmax, n_heights)
    A, R, Z = np.meshgrid(angles, radii, heights, indexing="ij")
    pts = np.stack([
        (R * mu * Z) * np.cos(A),
        (R * mu * Z) * np.sin(A),
        Z,
    ], axis=-1).reshape(-1, 3)
    d = np.linalg.norm(pts - f, axis=1)
    i = np.argmin(d)
    return pts[i], d[i]


class TestBoxProject:
    def test_clamps(self):
        out = cn.box_project(np.array([5.0, -3.0, 0.2]),
                             np.array([0.0, -1.0, 0.0]), np.array([1.0, 1.0, 1.0]))
        np.testing.assert_array_equal(out, [1.0, -1.0, 0.2])

    def test_identity_inside(self, rng):
        x = rng.uniform(-0.9, 0.9, 20)
        np.testing.assert_array_equal(cn.box_project(x, -np.ones(20), np.ones(20)), x)

    def test_infinite_bounds_are_noop(self, rng):
        x = rng.normal(0, 1e6, 9)
        lower = np.full(9, -np.inf)
        upper = np.full(9, np.inf)
        np.testing.assert_array_equal(cn.box_project(x, lower, upper), x)

    def test_crossed_bounds_rejected(self):
        with pytest.raises(ValueError):
            cn.box_project(np.zeros(2), np.array([1.0, 0.0]), np.array([0.0, 1.0]))


class TestSocProject:
    def test_inside_unchanged(self):
        f = np.array([0.1, 0.0, 1.0])
        np.testing.assert_array_equal(cn.soc_project(f, 0.8), f)

    def test_polar_cone_to_origin(self):
        np.testing.assert_array_equal(cn.soc_project(np.array([1.0, 0.0, -2.0]), 0.8),
                                      np.zeros(3))

    def test_halfway_projection_mu_one(self):
        # mu=1, f=(1,0,0): beta = gamma = 0.5
        out = cn.soc_project(np.array([1.0, 0.0, 0.0]), 1.0)
        np.testing.assert_allclose(out, [0.5, 0.0, 0.5])

    def test_degenerate_axis(self):
        np.testing.assert_array_equal(cn.soc_project(np.array([0.0, 0.0, -1.0]), 0.5),
                                      np.zeros(3))
        f = np.array([0.0, 0.0, 2.0])
        np.testing.assert_array_equal(cn.soc_project(f, 0.5), f)

    def test_rejects_bad_mu(self):
        with pytest.raises(ValueError):
            cn.soc_project(np.ones(3), 0.0)

    def test_matches_grid_oracle(self, rng):
        for mu in (0.5, 0.8, 1.0):
            for _ in range(40):
                f = rng.normal(0.0, 2.0, 3)
                proj = cn.soc_project(f, mu)
                # feasibility
                assert np.hypot(proj[0], proj[1]) <= mu * proj[2] + 1e-9
                best_pt, best_d = cone_grid_oracle(f, mu)
                grid_res = 2.0 * max(np.linalg.norm(f), 1.0) / 11 + 0.2
                assert np.linalg.norm(f - proj) <= best_d + 1e-9
                assert np.linalg.norm(proj - best_pt) <= grid_res

    @given(st.lists(st.floats(-10, 10), min_size=3, max_size=3),
           st.sampled_from([0.5, 0.8, 1.0]))
    @settings(max_examples=200, deadline=None)
    def test_idempotent(self, vals, mu):
        f = np.array(vals)
        once = cn.soc_project(f, mu)
        twice = cn.soc_project(once, mu)
        assert np.abs(twice - once).max() <= 1e-12

    def test_group_version_matches_scalar(self, rng):
        x = rng.normal(0.0, 3.0, 30)
        grouped = _cone_project_groups(x, 0.7)
        for i in range(10):
            np.testing.assert_allclose(grouped[3 * i:3 * i + 3],
                                       cn.soc_project(x[3 * i:3 * i + 3], 0.7),
                                       atol=1e-14)

    @given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
    @settings(max_examples=100, deadline=None)
    def test_box_prox_idempotent(self, vals):
        x = np.array(vals)
        prox = cn.BoxProx(lower=-np.ones(6), upper=np.ones(6) * 2.0)
        once = prox(x)
        assert np.abs(prox(once) - once).max() <= 1e-12


class TestConvexSubproblem:
    def test_gradient_matches_dense_algebra(self, rng):
        dim = 15
        M = rng.normal(size=(dim, dim))
        A = sp.csr_matrix(M)
        w = rng.uniform(0.5, 2.0, dim)
        target = rng.normal(size=dim)
        shift = rng.normal(size=dim)
        rho = 2.5
        prob = cn.ConvexSubproblem(w, target, A, shift, rho)
        z = rng.normal(size=dim)
        H = 2.0 * np.diag(w) + rho * (M.T @ M)
        g = -(2.0 * w * target + rho * (M.T @ shift))
        np.testing.assert_allclose(prob.gradient(z), H @ z + g, atol=1e-10)
        f_direct = float(w @ ((z - target) ** 2) + 0.5 * rho *
                         np.linalg.norm(M @ z - shift) ** 2)
        assert abs(prob.objective(z) - f_direct) < 1e-9 * max(1.0, abs(f_direct))


class TestBacktrackStep:
    def _quad(self, rng, dim=8):
        H, g, lower, upper = random_box_qp(rng, dim, cond_max=30.0)
        prob = subproblem_from_dense(H, g, dim)
        lam_max = float(np.linalg.eigvalsh(H)[-1])
        return prob, lam_max

    def test_L_above_lambda_max_accepted_immediately(self, rng):
        prob, lam_max = self._quad(rng)
        y = rng.normal(size=prob.dim)
        f_y, grad_y = prob.objective_and_gradient(y)
        L, x_new, f_new = cn.backtrack_step(prob, cn.IdentityProx(), y,
                                            lam_max * 1.01, 2.0, f_y, grad_y)
        assert L == lam_max * 1.01

    def test_within_three_doublings_from_eighth(self, rng):
        prob, lam_max = self._quad(rng)
        y = rng.normal(size=prob.dim)
        f_y, grad_y = prob.objective_and_gradient(y)
        L0 = lam_max / 8.0
        L, _, _ = cn.backtrack_step(prob, cn.IdentityProx(), y, L0, 2.0, f_y, grad_y)
        assert L <= lam_max * 1.0000001
        assert L in (L0, 2 * L0, 4 * L0, 8 * L0)

    def test_equality_at_directional_curvature(self, rng):
        # 1-D quadratic: the decrease inequality is tight when L equals the
        # curvature along the step
        H = np.array([[4.0]])
        prob = subproblem_from_dense(H, np.array([2.0]), 1)
        y = np.array([1.0])
        f_y, grad_y = prob.objective_and_gradient(y)
        L, x_new, f_new = cn.backtrack_step(prob, cn.IdentityProx(), y, 4.0, 2.0,
                                            f_y, grad_y)
        assert L == 4.0
        d = x_new - y
        lhs = f_new
        rhs = f_y + grad_y @ d + 0.5 * L * float(d @ d)
        assert abs(lhs - rhs) < 1e-12


class TestFistaMinimize:
    def test_projects_onto_box(self):
        # min 0.5||x-a||^2 over [0,1]^3 lands on the projection of a
        a = np.array([2.0, 0.5, -1.0])
        prob = cn.ConvexSubproblem(0.5 * np.ones(3), a, sp.csr_matrix((0, 3)),
                                   np.zeros(0), 1.0)
        prox = cn.BoxProx(np.zeros(3), np.ones(3))
        res = cn.fista_minimize(prob, prox, np.zeros(3), cn.FistaConfig())
        np.testing.assert_allclose(res.x, [1.0, 0.5, 0.0], atol=1e-7)
        assert res.converged

    def test_unconstrained_matches_direct_solve(self, rng):
        dim = 20
        M = rng.normal(size=(dim, dim))
        A = sp.csr_matrix(M)
        w = rng.uniform(0.5, 2.0, dim)
        target = rng.normal(size=dim)
        shift = rng.normal(size=dim)
        rho = 3.0
        prob = cn.ConvexSubproblem(w, target, A, shift, rho)
        H = 2.0 * np.diag(w) + rho * (M.T @ M)
        g = -(2.0 * w * target + rho * (M.T @ shift))
        expect = np.linalg.solve(H, -g)
        res = cn.fista_minimize(prob, cn.IdentityProx(), np.zeros(dim),
                                cn.FistaConfig(max_iter=40000, grad_tol=1e-8))
        assert np.linalg.norm(res.x - expect) < 1e-6

    def test_warm_start_accepts_first_test_and_saves_iterations(self, rng):
        H, g, lower, upper = random_box_qp(rng, 12, cond_max=20.0)
        prob = subproblem_from_dense(H, g, 12)
        prox = cn.BoxProx(lower, upper)
        cold = cn.fista_minimize(prob, prox, np.zeros(12),
                                 cn.FistaConfig(max_iter=5000, grad_tol=1e-6))
        warm = cn.fista_minimize(prob, prox, np.zeros(12),
                                 cn.FistaConfig(max_iter=5000, grad_tol=1e-6,
                                                warm_start_L=cold.accepted_L))
        # the cached L passes the first line-search test, so it never grows
        assert warm.accepted_L == cold.accepted_L
        assert warm.iterations <= cold.iterations

    def test_iterates_feasible_and_endpoint_not_worse(self, rng):
        H, g, lower, upper = random_box_qp(rng, 10)
        prob = subproblem_from_dense(H, g, 10)
        prox = cn.BoxProx(lower, upper)
        seen = []
        x0 = rng.normal(size=10) * 5.0
        res = cn.fista_minimize(prob, prox, x0, cn.FistaConfig(),
                                callback=lambda k, f, L: seen.append(f))
        assert (res.x >= lower - 1e-15).all() and (res.x <= upper + 1e-15).all()
        assert prob.objective(res.x) <= prob.objective(prox(x0)) + 1e-12

    def test_result_invariant(self, rng):
        H, g, lower, upper = random_box_qp(rng, 10)
        prob = subproblem_from_dense(H, g, 10)
        res = cn.fista_minimize(prob, cn.BoxProx(lower, upper), np.zeros(10),
                                cn.FistaConfig(max_iter=3, grad_tol=1e-14))
        assert res.iterations == 3 and not res.converged

    def test_config_validation(self):
        with pytest.raises(ValueError):
            cn.FistaConfig(max_iter=0)
        with pytest.raises(ValueError):
            cn.FistaConfig(grad_tol=0.0)
        with pytest.raises(ValueError):
            cn.FistaConfig(beta_ls=1.0)


class TestActiveSetOracle:
    """The box-QP oracle itself is cross-checked by exhaustive KKT
    enumeration on small problems before it is trusted at larger sizes."""

    def test_against_enumeration(self, rng):
        for _ in range(30):
            dim = int(rng.integers(2, 6))
            H, g, lower, upper = random_box_qp(rng, dim, cond_max=20.0)
            x_as = active_set_box_qp(H, g, lower, upper)
            x_enum = enumerate_box_qp(H, g, lower, upper)
            assert x_enum is not None
            assert np.linalg.norm(x_as - x_enum) < 1e-8

    def test_fista_matches_oracle(self, rng):
        for _ in range(20):
            dim = int(rng.integers(2, 31))
            H, g, lower, upper = random_box_qp(rng, dim)
            prob = subproblem_from_dense(H, g, dim)
            res = cn.fista_minimize(prob, cn.BoxProx(lower, upper),
                                    np.clip(np.zeros(dim), lower, upper),
                                    cn.FistaConfig(max_iter=20000, grad_tol=1e-7))
            expect = active_set_box_qp(H, g, lower, upper)
            assert np.linalg.norm(res.x - expect) < 1e-5
