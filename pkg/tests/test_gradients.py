from dataclasses import replace

import numpy as np
import pytest

from aspinn import problems
from aspinn.gradients import fd_grad_oracle, interior_loss, loss, loss_and_grad
from aspinn.model import ModelParams, NonFiniteError, eval_points


def random_setup(rng, problem, n_nodes=None, k=6, kb=5):
    n = n_nodes or int(rng.integers(1, 7))
    lo, hi = problem.domain.lo, problem.domain.hi
    params = ModelParams(
        rng.uniform(-1, 1, n),
        rng.uniform(lo, hi, (n, 2)),
        rng.uniform(-0.8, 0.8, (n, 3)),
        0.5,
    )
    x = rng.uniform(lo, hi, (k, 2))
    xb = rng.uniform(lo, hi, (kb, 2))
    xb[:, 1] = lo[1]
    return params, x, xb


def assert_oracle_agrees(grad, oracle):
    tol = np.maximum(1e-5 * np.abs(oracle), 1e-8)
    # the oracle itself carries O(step^2) and rounding error; compare to the larger magnitude
    tol = np.maximum(tol, 1e-5 * np.abs(grad))
    assert np.all(np.abs(grad - oracle) <= tol), np.max(np.abs(grad - oracle) / tol)


class TestLossValue:
    def test_zero_model_poisson_single_point(self):
        p = problems.poisson2d()
        params = ModelParams([0.0], [[0.3, 0.3]], [[0.0, 0.0, 0.0]], 0.5)
        value = interior_loss(params, p, [[0.25, 0.5]])
        assert value == pytest.approx(25 * np.pi**4, rel=1e-14)
        assert value == pytest.approx(2435.227, abs=1e-3)

    def test_self_residual_leaves_boundary_term(self):
        rng = np.random.default_rng(0)
        base = problems.poisson2d()
        params, x, xb = random_setup(rng, base, n_nodes=3)

        def residual(pts, u, g, H):
            return u - eval_points(params, pts)

        fixture = replace(
            base, residual=residual, residual_partials=lambda *a: (np.ones(len(a[0])), None, None),
            needs_hessian=False,
        )
        alpha = 7.0
        S = eval_points(params, xb)
        expected = alpha / (2 * len(xb)) * np.sum(S**2)
        assert loss(params, fixture, x, xb, alpha) == pytest.approx(expected, rel=1e-14)
        assert interior_loss(params, fixture, x) == 0.0

    def test_rejects_empty_batches(self):
        p = problems.poisson2d()
        params = ModelParams([0.0], [[0.0, 0.0]], [[0.0, 0.0, 0.0]], 0.5)
        with pytest.raises(ValueError):
            loss_and_grad(params, p, np.empty((0, 2)), [[1.0, 0.0]], 1.0)
        with pytest.raises(ValueError):
            loss_and_grad(params, p, [[0.0, 0.0]], np.empty((0, 2)), 1.0)
        with pytest.raises(ValueError):
            loss_and_grad(params, p, [[0.0, 0.0]], [[1.0, 0.0]], 0.0)

    def test_non_finite_reports_sample(self):
        p = problems.poisson2d()
        params = ModelParams([1.0], [[0.0, 0.0]], [[0.0, 0.0, 0.0]], 0.5)
        x = np.array([[0.1, 0.1], [np.nan, 0.2]])
        with pytest.raises(NonFiniteError) as err:
            loss_and_grad(params, p, x, [[1.0, 0.0]], 1.0)
        assert err.value.index == 1


class TestGradient:
    def test_weight_gradient_single_point(self):
        p = problems.poisson2d()
        params = ModelParams([0.4, -0.2], [[0.1, 0.2], [-0.3, 0.5]], [[0.1, 0.2, -0.1], [0.0, 0.0, 0.3]], 0.5)
        x, xb = [[0.25, 0.5]], [[1.0, 0.3]]
        _, grad = loss_and_grad(params, p, x, xb, 20.0)
        oracle = fd_grad_oracle(params, p, x, xb, 20.0, 1e-5)
        for j in (0, 6):  # weights of both nodes
            assert grad[j] == pytest.approx(oracle[j], rel=1e-6)

    def test_zero_model_center_gradient_vanishes(self):
        p = problems.poisson2d()
        params = ModelParams([0.0, 0.0], [[0.1, 0.2], [-0.3, 0.5]], np.zeros((2, 3)), 0.5)
        x, xb = [[0.25, 0.5], [0.1, -0.7]], [[1.0, 0.3]]
        oracle = fd_grad_oracle(params, p, x, xb, 5.0, 1e-5)
        _, grad = loss_and_grad(params, p, x, xb, 5.0)
        centers = [1, 2, 7, 8]
        assert np.all(oracle[centers] == 0.0)
        assert np.all(grad[centers] == 0.0)

    @pytest.mark.parametrize("name", problems.PROBLEM_NAMES)
    def test_oracle_agreement(self, name):
        problem = problems.get_problem(name)
        rng = np.random.default_rng(abs(hash(name)) % 2**32)
        for _ in range(20):
            params, x, xb = random_setup(rng, problem)
            alpha = float(rng.uniform(1, 50))
            _, grad = loss_and_grad(params, problem, x, xb, alpha)
            oracle = fd_grad_oracle(params, problem, x, xb, alpha, 1e-5)
            assert_oracle_agrees(grad, oracle)

    def test_step_halving_converges(self):
        problem = problems.ripple2d()
        rng = np.random.default_rng(9)
        params, x, xb = random_setup(rng, problem, n_nodes=3)
        _, grad = loss_and_grad(params, problem, x, xb, 10.0)
        coarse = np.abs(fd_grad_oracle(params, problem, x, xb, 10.0, 1e-3) - grad).max()
        fine = np.abs(fd_grad_oracle(params, problem, x, xb, 10.0, 1e-4) - grad).max()
        assert fine < coarse / 10  # second order: ideally /100

    def test_oracle_rejects_bad_step(self):
        p = problems.poisson2d()
        params = ModelParams([0.0], [[0.0, 0.0]], [[0.0, 0.0, 0.0]], 0.5)
        with pytest.raises(ValueError):
            fd_grad_oracle(params, p, [[0.0, 0.0]], [[1.0, 0.0]], 1.0, step=0.0)


class TestProperties:
    def test_batch_linearity(self):
        p = problems.ripple2d()
        rng = np.random.default_rng(2)
        params, _, _ = random_setup(rng, p, n_nodes=4)
        a = rng.uniform(-1, 1, (7, 2))
        b = rng.uniform(-1, 1, (13, 2))
        union = interior_loss(params, p, np.vstack([a, b]))
        weighted = (7 * interior_loss(params, p, a) + 13 * interior_loss(params, p, b)) / 20
        assert union == pytest.approx(weighted, rel=1e-12)

    def test_determinism(self):
        p = problems.burgers1d()
        rng = np.random.default_rng(4)
        params, x, xb = random_setup(rng, p)
        l1, g1 = loss_and_grad(params, p, x, xb, 3.0)
        l2, g2 = loss_and_grad(params, p, x, xb, 3.0)
        assert l1 == l2 and np.array_equal(g1, g2)

    def test_boundary_gradient_linear_in_alpha(self):
        p = problems.poisson2d()
        rng = np.random.default_rng(6)
        params, x, xb = random_setup(rng, p, n_nodes=3)
        _, g_small = loss_and_grad(params, p, x, xb, 1.0)
        _, g_big = loss_and_grad(params, p, x, xb, 3.0)
        _, g_zero_ish = loss_and_grad(params, p, x, xb, 1e-300)
        boundary_small = g_small - g_zero_ish
        boundary_big = g_big - g_zero_ish
        assert np.allclose(boundary_big, 3.0 * boundary_small, rtol=1e-9, atol=1e-9)
