import numpy as np
import pytest

from conftest import make_problem
from convexcauchy.errors import ConfigError, SolverError
from convexcauchy.functional import data_extension
from convexcauchy.operators import Field
from convexcauchy.optimizer import (
    OptimizerConfig,
    RunReport,
    convergence_ratio,
    convexity_certificate,
    direct_solve,
    run,
)
from convexcauchy.sampling import draw_in_ball


class TestRun:
    def test_quadratic_matches_direct_solve(self, rng):
        _, grid, mask, op, space, params, _ = make_problem(
            "ELL2D-HARMONIC", resolution=(17, 17), lam=1.0, beta=0.5)
        u_direct = direct_solve(params)
        start = draw_in_ball(params, 150.0, rng)
        cfg = OptimizerConfig(max_iters=2000, grad_tol=1e-5, store_iterates=False)
        report = run(params, start, cfg)
        assert report.converged
        rel = space.norm(Field(grid, report.final.values - u_direct.values))
        rel /= space.norm(u_direct)
        assert rel < 1e-6

    def test_start_at_minimizer_stops_immediately(self):
        _, grid, mask, op, space, params, _ = make_problem(
            "ELL2D-HARMONIC", resolution=(17, 17), lam=1.0, beta=0.5)
        u_direct = direct_solve(params)
        cfg = OptimizerConfig(max_iters=50, grad_tol=1e-6)
        report = run(params, u_direct, cfg)
        assert report.converged
        assert report.iterations <= 2

    def test_multi_start_agreement(self, rng):
        _, grid, mask, op, space, params, _ = make_problem("ELL2D-CUBIC", lam=2.0, beta=0.55)
        cfg = OptimizerConfig(max_iters=3000, grad_tol=1e-6, store_iterates=False)
        finals = []
        for _ in range(3):
            start = draw_in_ball(params, 5.0, rng)
            report = run(params, start, cfg)
            assert report.converged
            finals.append(report.final)
        for i in range(len(finals)):
            for j in range(i + 1, len(finals)):
                d = space.norm(Field(grid, finals[i].values - finals[j].values))
                assert d < 1e-4

    def test_monotone_descent_with_backtracking(self, rng):
        _, grid, mask, op, space, params, _ = make_problem("ELL2D-CUBIC", lam=2.0, beta=0.55)
        cfg = OptimizerConfig(max_iters=60, grad_tol=1e-12, armijo_c=1e-4,
                              store_iterates=False)
        report = run(params, draw_in_ball(params, 5.0, rng), cfg)
        js = report.j_history
        for k in range(len(report.step_history)):
            decrease = cfg.armijo_c * report.step_history[k] * report.grad_norm_history[k] ** 2
            assert js[k + 1] <= js[k] - decrease + 1e-12 * (1.0 + abs(js[k]))

    def test_constraints_preserved_exactly(self, rng):
        _, grid, mask, op, space, params, _ = make_problem("PAR1D-CUBIC", beta=0.8)
        cfg = OptimizerConfig(max_iters=30, grad_tol=1e-12)
        report = run(params, params.impose(data_extension(space, params.data)), cfg)
        for it in report.iterates[::7] + [report.final]:
            assert params.data.violation(mask, it.values) == 0.0

    def test_divergence_detected_in_fixed_mode(self, rng):
        _, grid, mask, op, space, params, _ = make_problem(
            "ELL2D-HARMONIC", resolution=(17, 17), lam=2.0, beta=0.5)
        cfg = OptimizerConfig(max_iters=50, grad_tol=1e-14, step_mode="fixed",
                              gamma=0.99, store_iterates=False)
        with pytest.raises(SolverError, match="diverged"):
            run(params, draw_in_ball(params, 150.0, rng), cfg)

    def test_line_search_failure_raises(self, rng):
        _, grid, mask, op, space, params, _ = make_problem(
            "ELL2D-HARMONIC", resolution=(17, 17), lam=2.0, beta=0.5)
        cfg = OptimizerConfig(max_iters=50, grad_tol=1e-14, max_halvings=1,
                              store_iterates=False)
        with pytest.raises(SolverError, match="line search|Armijo|decrease"):
            run(params, draw_in_ball(params, 150.0, rng), cfg)

    def test_radius_reject_step_exits(self, rng):
        _, grid, mask, op, space, params, _ = make_problem("ELL2D-CUBIC", lam=2.0, beta=0.55)
        start = draw_in_ball(params, 5.0, rng)
        tiny = 0.5 * space.norm(start)
        cfg = OptimizerConfig(max_iters=50, grad_tol=1e-12, radius=tiny,
                              radius_policy="reject_step", store_iterates=False)
        report = run(params, start, cfg)
        assert not report.converged
        assert "ball" in report.reason

    def test_radius_monitor_warns_and_continues(self, rng, caplog):
        import logging

        _, grid, mask, op, space, params, _ = make_problem("ELL2D-CUBIC", lam=2.0, beta=0.55)
        start = draw_in_ball(params, 5.0, rng)
        tiny = 0.5 * space.norm(start)
        cfg = OptimizerConfig(max_iters=20, grad_tol=1e-12, radius=tiny,
                              radius_policy="monitor", store_iterates=False)
        with caplog.at_level(logging.WARNING, logger="convexcauchy.optimizer"):
            report = run(params, start, cfg)
        assert report.iterations > 1
        assert any("ball" in rec.message for rec in caplog.records)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            OptimizerConfig(step_mode="fixed", gamma=1.5)
        with pytest.raises(ConfigError):
            OptimizerConfig(step_mode="wild")
        with pytest.raises(ConfigError):
            OptimizerConfig(grad_tol=-1.0)


class TestConvergenceRatio:
    def _space(self):
        _, grid, mask, op, space, params, _ = make_problem("ELL1D-CUBIC")
        return grid, mask, space

    def test_synthetic_geometric_sequence(self, rng):
        grid, mask, space = self._space()
        direction = np.zeros(grid.shape)
        direction[mask.free] = rng.standard_normal(int(np.sum(mask.free)))
        ref = Field(grid, np.zeros(grid.shape))
        report = RunReport(iterates=[
            Field(grid, 0.5**n * direction) for n in range(20)
        ])
        report.space = space
        q = convergence_ratio(report, ref)
        assert q == pytest.approx(0.5, abs=1e-6)

    def test_stalled_run_gives_unit_ratio(self, rng):
        grid, mask, space = self._space()
        direction = np.zeros(grid.shape)
        direction[mask.free] = 1.0
        report = RunReport(iterates=[Field(grid, direction.copy()) for _ in range(12)])
        report.space = space
        q = convergence_ratio(report, Field(grid, np.zeros(grid.shape)))
        assert q == pytest.approx(1.0, abs=1e-9)

    def test_too_few_iterates(self):
        grid, mask, space = self._space()
        report = RunReport(iterates=[Field(grid, np.zeros(grid.shape))] * 3)
        report.space = space
        with pytest.raises(SolverError, match="tail"):
            convergence_ratio(report, Field(grid, np.zeros(grid.shape)))

    def test_fixed_step_rate_matches_spectral_bound(self, rng):
        """Fixed-step descent in the Sobolev geometry contracts at the rate
        max |1 - gamma mu| over the generalized spectrum of (Hessian, Gram)."""
        import scipy.linalg as sla
        import scipy.sparse as sp

        from convexcauchy.operators import linearize

        _, grid, mask, op, space, params, _ = make_problem(
            "ELL2D-HARMONIC", resolution=(17, 17), lam=1.0, beta=2.0)
        free = space.free_index
        u_c = params.impose(Field(grid, np.zeros(grid.shape)))
        lin = linearize(op, u_c, mask)
        lmat = lin.to_matrix()
        wdiag = sp.diags(params.data_weight.ravel())
        hess = 2.0 * (lmat.T @ wdiag @ lmat + params.beta * space.gram_matrix())
        h_ff = hess[free][:, free].toarray()
        g_ff = space.gram_matrix()[free][:, free].toarray()
        mu = sla.eigh(h_ff, g_ff, eigvals_only=True)
        gamma = min(0.9, 0.9 / float(np.max(mu)))
        q_pred = float(np.max(np.abs(1.0 - gamma * mu)))

        u_ref = direct_solve(params)
        cfg = OptimizerConfig(max_iters=80, grad_tol=1e-14, step_mode="fixed",
                              gamma=gamma, mode="sobolev", store_iterates=True)
        try:
            report = run(params, draw_in_ball(params, 150.0, rng), cfg)
        except SolverError:
            pytest.fail("fixed-step run should not diverge at the spectral step size")
        q_hat = convergence_ratio(report, u_ref)
        assert abs(q_hat - q_pred) <= 0.1 * q_pred


class TestCertificate:
    def test_linear_operator_never_fails(self):
        _, grid, mask, op, space, params, _ = make_problem("ELL2D-HARMONIC", beta=0.2)
        report = convexity_certificate(params, radius=150.0, samples=15, seed=5)
        assert report.failures == 0
        assert report.passed
        assert report.min_margin >= 0.0

    def test_zero_samples_rejected(self):
        _, grid, mask, op, space, params, _ = make_problem("ELL2D-CUBIC")
        with pytest.raises(ConfigError):
            convexity_certificate(params, radius=5.0, samples=0, seed=1)

    def test_deterministic_under_seed(self):
        _, grid, mask, op, space, params, _ = make_problem("ELL2D-CUBIC")
        r1 = convexity_certificate(params, radius=5.0, samples=8, seed=11)
        r2 = convexity_certificate(params, radius=5.0, samples=8, seed=11)
        assert r1.margins == r2.margins
        r3 = convexity_certificate(params, radius=5.0, samples=8, seed=12)
        assert r1.margins != r3.margins

    def test_report_serializable(self):
        _, grid, mask, op, space, params, _ = make_problem("ELL2D-CUBIC")
        rep = convexity_certificate(params, radius=5.0, samples=4, seed=2)
        d = rep.to_dict()
        assert d["samples"] == 4
        assert len(d["margins"]) == 4
        assert d["passed"] == (d["failures"] == 0)
