import numpy as np
import pytest

from rlfd.diagnostics import epsilon_optimality_report, estimator_moment_audit
from rlfd.mdp import occupancy_from_policy, solve_forward_optimal
from rlfd.smd import (
    SAMPLED_CU,
    RlfdProblem,
    SaddleIterate,
    SmdConfig,
    grad_cu_estimate,
    grad_mu_estimate,
    run_smd_rlfd,
    step_sizes_from_theorem,
)

from helpers import random_mdp, random_policy
from oracles import solve_inverse_reference


def make_problem(rng, alpha=0.1, n_states=3, n_actions=2):
    mdp = random_mdp(rng, n_states=n_states, n_actions=n_actions)
    expert = occupancy_from_policy(mdp, random_policy(rng, mdp)).mu
    c_hat = rng.uniform(-1, 1, mdp.n_pairs)
    return RlfdProblem(mdp, expert, c_hat=c_hat, alpha=alpha)


def random_iterate(rng, problem):
    return SaddleIterate(
        c=rng.uniform(-1.0, 1.0, problem.n_pairs),
        u=rng.uniform(-1.0, 1.0, problem.n_states),
        mu=rng.dirichlet(np.ones(problem.n_pairs)),
    )


class TestMomentAudit:
    def test_bounds_hold_on_random_instances(self, rng):
        for alpha in (0.0, 0.3):
            problem = make_problem(rng, alpha=alpha)
            it = random_iterate(rng, problem)
            report = estimator_moment_audit(problem, it, 100_000, rng)
            assert report.passed, report

    def test_point_mass_iterate(self, rng):
        problem = make_problem(rng)
        mu = np.zeros(problem.n_pairs)
        mu[2] = 1.0
        it = SaddleIterate(
            c=rng.uniform(-1, 1, problem.n_pairs),
            u=rng.uniform(-1, 1, problem.n_states),
            mu=mu,
        )
        report = estimator_moment_audit(problem, it, 50_000, rng)
        assert report.passed, report

    def test_matches_single_draw_estimators(self, rng):
        # Same Philox key: the batched audit and a loop over the single-draw
        # estimators consume identical uniforms and must agree exactly.
        problem = make_problem(rng, alpha=0.25)
        it = random_iterate(rng, problem)
        m = 512
        seed = 314
        report = estimator_moment_audit(
            problem, it, m, np.random.Generator(np.random.Philox(key=seed))
        )
        replay = np.random.Generator(np.random.Philox(key=seed))
        acc_c = np.zeros(problem.n_pairs)
        acc_u = np.zeros(problem.n_states)
        sq = 0.0
        for _ in range(m):
            gc, gu = grad_cu_estimate(problem, it, replay, mode=SAMPLED_CU)
            acc_c += gc
            acc_u += gu
            sq += float(gc @ gc + gu @ gu)
        acc_m = np.zeros(problem.n_pairs)
        local = 0.0
        max_abs = 0.0
        for _ in range(m):
            g = grad_mu_estimate(problem, it, replay)
            acc_m += g
            local += float(it.mu @ g**2)
            max_abs = max(max_abs, float(np.abs(g).max()))
        assert report.cu_second_moment == pytest.approx(sq / m, rel=1e-12)
        assert report.mu_local_moment == pytest.approx(local / m, rel=1e-12)
        assert report.mu_max_abs == pytest.approx(max_abs, rel=1e-12)

    def test_rejects_empty_sample(self, rng):
        problem = make_problem(rng)
        with pytest.raises(ValueError):
            estimator_moment_audit(problem, random_iterate(rng, problem), 0, rng)


class TestOptimalityReport:
    def test_optimal_expert_near_zero(self, rng):
        # Expert optimal for the proxy: the reference optimum is the proxy
        # itself and both sides sit at the epsilon level around zero.
        mdp = random_mdp(rng, n_states=2, n_actions=2)
        c_hat = rng.uniform(-1, 1, mdp.n_pairs)
        sol = solve_forward_optimal(mdp, c_hat, tol=1e-10)
        problem = RlfdProblem(mdp, sol.occupancy.mu, c_hat=c_hat, alpha=0.3)
        it = SaddleIterate(c=c_hat.copy(), u=sol.value.v.copy(), mu=sol.occupancy.mu.copy())
        lhs, rhs = epsilon_optimality_report(
            problem, it, (c_hat, sol.value.v, sol.occupancy.mu), epsilon=0.05
        )
        assert lhs == pytest.approx(0.0, abs=1e-8)
        assert rhs == pytest.approx(0.05, abs=1e-8)

    def test_alpha_zero_reduces_to_performance_gap(self, rng):
        problem = make_problem(rng, alpha=0.0)
        it = random_iterate(rng, problem)
        sol = solve_forward_optimal(problem.mdp, problem.c_hat, tol=1e-10)
        lhs, _ = epsilon_optimality_report(
            problem, it, (problem.c_hat, sol.value.v, sol.occupancy.mu), epsilon=0.1
        )
        from rlfd.mdp import OccupancyMeasure, policy_evaluation, policy_from_occupancy

        pi = policy_from_occupancy(
            OccupancyMeasure(it.mu, problem.n_states, problem.n_actions)
        )
        _, rho_a = policy_evaluation(problem.mdp, pi, it.c)
        expected = float(problem.expert_mu @ it.c) - rho_a
        assert lhs == pytest.approx(expected, abs=1e-12)

    def test_inequality_against_brute_force_reference(self, rng):
        # Averaged solver outputs on a tiny instance stay below the exact
        # optimum's objective plus epsilon (checked on the seed average).
        mdp = random_mdp(rng, n_states=2, n_actions=2, gamma=0.8)
        expert = occupancy_from_policy(mdp, random_policy(rng, mdp)).mu
        c_hat = rng.uniform(-1, 1, mdp.n_pairs)
        alpha = 0.1
        problem = RlfdProblem(mdp, expert, c_hat=c_hat, alpha=alpha)
        reference = solve_inverse_reference(mdp, expert, c_hat, alpha)[:3]

        epsilon = 0.5
        config, _ = step_sizes_from_theorem(problem, epsilon)
        config = SmdConfig(
            epsilon=epsilon, eta_cu=config.eta_cu, eta_mu=config.eta_mu,
            T=min(config.T, 40_000), seed=0,
        )
        lhs_values = []
        rhs = None
        for seed in range(5):
            final, _ = run_smd_rlfd(
                problem,
                SmdConfig(
                    epsilon=epsilon, eta_cu=config.eta_cu, eta_mu=config.eta_mu,
                    T=config.T, seed=seed,
                ),
            )
            lhs, rhs = epsilon_optimality_report(problem, final, reference, epsilon)
            lhs_values.append(lhs)
        assert np.mean(lhs_values) <= rhs + 1e-6

    def test_infeasible_reference_rejected(self, rng):
        problem = make_problem(rng)
        it = random_iterate(rng, problem)
        bad_mu = np.full(problem.n_pairs, 1.0 / problem.n_pairs)
        bad_mu[0] += 0.5
        with pytest.raises(ValueError):
            epsilon_optimality_report(
                problem, it,
                (problem.c_hat, np.zeros(problem.n_states), bad_mu),
                epsilon=0.1,
            )
