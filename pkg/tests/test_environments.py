import numpy as np
import pytest

from rlfd.environments import (
    CostScale,
    GridworldConfig,
    InventoryConfig,
    build_gridworld_mdp,
    build_inventory_mdp,
    demand_pmf,
    make_earlystop_expert,
    make_misspecified_expert,
    make_partial_prior,
    perturb_inventory_prior,
    recover_inventory_params,
)
from rlfd.mdp import (
    certify_optimality,
    check_feasibility,
    solve_forward_optimal,
)

from helpers import random_mdp


@pytest.fixture(scope="module")
def inventory():
    cfg = InventoryConfig()
    mdp, scale, features = build_inventory_mdp(cfg)
    return cfg, mdp, scale, features


def clamped_orders(policy_orders, capacity):
    s = np.arange(capacity + 1)
    return np.minimum(policy_orders, capacity - s)


class TestInventory:
    def test_rows_stochastic(self, inventory):
        _, mdp, _, _ = inventory
        np.testing.assert_allclose(mdp.transition.sum(axis=1), 1.0, atol=1e-12)

    def test_optimal_policy_is_order_up_to_14(self, inventory):
        _, mdp, _, _ = inventory
        sol = solve_forward_optimal(mdp, tol=1e-10)
        orders = clamped_orders(sol.policy.probs.argmax(axis=1), 15)
        expected = np.maximum(0, 14 - np.arange(16))
        np.testing.assert_array_equal(orders, expected)

    def test_full_shelf_no_order_cost(self, inventory):
        # At capacity only the zero order is effective: the original-unit
        # cost is holding on 15 units minus revenue on expected sales,
        # recomputed here from truncated partial sums.
        cfg, mdp, scale, _ = inventory
        pmf = demand_pmf(cfg)
        expected_sales = sum(d * pmf[d] for d in range(15)) + 15 * (1 - pmf[:15].sum())
        expected = cfg.holding_cost * 15 - cfg.sell_price * expected_sales
        for a in range(16):
            idx = 15 * 16 + a
            assert scale.to_original(mdp.cost)[idx] == pytest.approx(expected, abs=1e-10)

    def test_clamped_actions_are_duplicates(self, inventory):
        _, mdp, _, _ = inventory
        # s = 13 admits effective orders 0..2; any a >= 2 duplicates a = 2.
        base = 13 * 16
        for a in range(3, 16):
            np.testing.assert_array_equal(mdp.transition[base + a], mdp.transition[base + 2])
            assert mdp.cost[base + a] == mdp.cost[base + 2]

    def test_tail_mass_matches_truncated_cdf(self, inventory):
        cfg, mdp, _, _ = inventory
        pmf = demand_pmf(cfg)
        for s in (0, 4, 15):
            for a in (0, 3, 15):
                level = min(s + min(a, 15 - s), 15)
                row = mdp.transition[s * 16 + a]
                expected_tail = 1.0 - pmf[:level].sum() if level else 1.0
                assert row[0] == pytest.approx(expected_tail, abs=1e-12)

    def test_cost_scale_extremal(self, inventory):
        _, mdp, _, _ = inventory
        assert np.abs(mdp.cost).max() == pytest.approx(1.0, abs=1e-15)

    def test_feature_model_exact(self, inventory):
        cfg, mdp, scale, features = inventory
        reproduced = features @ np.array(cfg.params)
        np.testing.assert_allclose(reproduced, scale.to_original(mdp.cost), atol=1e-10)


class TestExperts:
    def test_misspecified_with_true_params_is_optimal(self, inventory):
        cfg, mdp, _, _ = inventory
        expert = make_misspecified_expert(cfg, cfg.params)
        sol = solve_forward_optimal(mdp, tol=1e-10)
        np.testing.assert_allclose(expert.mu, sol.occupancy.mu, atol=1e-9)

    def test_misspecified_expert_keeps_lower_stock(self, inventory):
        cfg, mdp, _, _ = inventory
        expert = make_misspecified_expert(cfg, (5.0, 8.0, 15.0))
        assert check_feasibility(mdp, expert.mu, tol=1e-9).passed
        orders = expert.mu.reshape(16, 16).argmax(axis=1)
        s = np.arange(16)
        restock = s + clamped_orders(orders, 15)
        # Wherever the expert actually orders, it restocks strictly below 14.
        assert (restock[orders > 0] < 14).all()

    def test_misspecified_expert_rejected_by_certificates(self, inventory, rng):
        # A suboptimal expert admits no value vector certifying optimality
        # for the true cost: not its own optimal values, and none from a
        # random sweep of the box.
        cfg, mdp, _, _ = inventory
        expert = make_misspecified_expert(cfg, (5.0, 8.0, 15.0))
        sol = solve_forward_optimal(mdp, tol=1e-10)
        assert not certify_optimality(mdp, expert.mu, mdp.cost, sol.value.v)
        for _ in range(50):
            u = rng.uniform(-1.0, 1.0, mdp.n_states)
            assert not certify_optimality(mdp, expert.mu, mdp.cost, u)

    def test_earlystop_converges_to_optimal(self, rng):
        cfg = GridworldConfig(height=3, width=3, obstacles=((1, 1),), goals=((2, 2),))
        mdp = build_gridworld_mdp(cfg)
        sol = solve_forward_optimal(mdp, tol=1e-10)
        iters = int(np.ceil(np.log(1e-9) / np.log(mdp.gamma)))
        expert = make_earlystop_expert(mdp, iters)
        np.testing.assert_allclose(expert.mu, sol.occupancy.mu, atol=1e-8)

    def test_earlystop_single_sweep_is_myopic(self):
        cfg = GridworldConfig(height=2, width=3, obstacles=((0, 1),), goals=((0, 2),))
        mdp = build_gridworld_mdp(cfg)
        expert = make_earlystop_expert(mdp, 1)
        # One sweep backs up the one-step costs once; recompute by hand.
        gamma = mdp.gamma
        v1 = ((1 - gamma) * mdp.cost + gamma * (mdp.transition @ np.zeros(6)))
        v1 = v1.reshape(6, 4).min(axis=1)
        q = (1 - gamma) * mdp.cost + gamma * (mdp.transition @ v1)
        greedy = q.reshape(6, 4).argmin(axis=1)
        mu2 = expert.mu.reshape(6, 4)
        assert (mu2[np.arange(6), greedy] >= mu2.max(axis=1) - 1e-12).all()

    def test_earlystop_always_feasible(self, rng):
        for _ in range(20):
            mdp = random_mdp(rng)
            expert = make_earlystop_expert(mdp, int(rng.integers(1, 6)))
            assert check_feasibility(mdp, expert.mu, tol=1e-9).passed


class TestGridworld:
    def test_deterministic_moves_without_wind(self):
        cfg = GridworldConfig(height=2, width=2, wind_prob=0.0)
        mdp = build_gridworld_mdp(cfg)
        # Top-left cell moving up stays put.
        row = mdp.transition[0 * 4 + 0]
        assert row[0] == 1.0
        # Moving right lands on (0, 1).
        row = mdp.transition[0 * 4 + 3]
        assert row[1] == 1.0

    def test_wind_splits_probability(self):
        cfg = GridworldConfig(height=3, width=3, wind_prob=0.2)
        mdp = build_gridworld_mdp(cfg)
        center = 1 * 3 + 1
        row = mdp.transition[center * 4 + 0]  # up
        assert row[0 * 3 + 1] == pytest.approx(0.8)
        assert row[1 * 3 + 0] == pytest.approx(0.2)

    def test_left_action_merges_with_drift(self):
        cfg = GridworldConfig(height=3, width=3, wind_prob=0.2)
        mdp = build_gridworld_mdp(cfg)
        center = 1 * 3 + 1
        row = mdp.transition[center * 4 + 2]  # left
        assert row[1 * 3 + 0] == pytest.approx(1.0)

    def test_cell_costs(self):
        cfg = GridworldConfig(height=2, width=2, obstacles=((0, 1),), goals=((1, 1),))
        mdp = build_gridworld_mdp(cfg)
        cost = mdp.cost.reshape(4, 4)
        np.testing.assert_array_equal(cost[1], np.ones(4))
        np.testing.assert_array_equal(cost[3], -np.ones(4))
        np.testing.assert_array_equal(cost[0], np.zeros(4))

    def test_goal_absorbing_flag(self):
        cfg = GridworldConfig(height=2, width=2, goals=((1, 1),), goal_absorbing=True)
        mdp = build_gridworld_mdp(cfg)
        for a in range(4):
            row = mdp.transition[3 * 4 + a]
            assert row[3] == 1.0

    def test_rows_merge_to_one(self):
        cfg = GridworldConfig(height=4, width=5, wind_prob=0.2)
        mdp = build_gridworld_mdp(cfg)
        np.testing.assert_allclose(mdp.transition.sum(axis=1), 1.0, atol=1e-15)

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            GridworldConfig(height=2, width=2, obstacles=((5, 0),))
        with pytest.raises(ValueError):
            GridworldConfig(height=2, width=2, obstacles=((0, 0),), goals=((0, 0),))
        with pytest.raises(ValueError):
            GridworldConfig(height=2, width=2, wind_prob=1.0)


class TestPriors:
    def test_partial_prior_extremes(self, rng):
        cfg = GridworldConfig(
            height=3, width=3, obstacles=((0, 1), (1, 1)), goals=((2, 2),)
        )
        mdp = build_gridworld_mdp(cfg)
        zero = make_partial_prior(cfg, 0.0, rng)
        np.testing.assert_array_equal(zero, np.zeros(mdp.n_pairs))
        full = make_partial_prior(cfg, 1.0, rng)
        np.testing.assert_array_equal(full, mdp.cost)

    def test_partial_prior_counts(self, rng):
        cfg = GridworldConfig(
            height=3, width=4,
            obstacles=((0, 1), (1, 1), (2, 1), (1, 2)), goals=((2, 3),),
        )
        prior = make_partial_prior(cfg, 0.5, rng)
        per_state = prior.reshape(cfg.n_cells, 4)[:, 0]
        assert (per_state == 1.0).sum() == 2

    def test_partial_prior_seeded(self):
        cfg = GridworldConfig(
            height=3, width=4,
            obstacles=((0, 1), (1, 1), (2, 1), (1, 2)), goals=((2, 3),),
        )
        a = make_partial_prior(cfg, 0.5, np.random.Generator(np.random.Philox(key=5)))
        b = make_partial_prior(cfg, 0.5, np.random.Generator(np.random.Philox(key=5)))
        np.testing.assert_array_equal(a, b)

    def test_perturbation_zero_noise(self, rng):
        cfg = InventoryConfig()
        params, proxy = perturb_inventory_prior(cfg, 0.0, rng)
        assert params == pytest.approx(cfg.params)
        _, mdp, _, _ = (cfg, *build_inventory_mdp(cfg))
        np.testing.assert_allclose(proxy, mdp.cost, atol=1e-12)

    def test_perturbation_full_range(self):
        # zeta = 10 with all-positive noise doubles every parameter.
        class _OnesRng:
            def uniform(self, lo, hi, size):
                return np.ones(size)

        cfg = InventoryConfig()
        params, _ = perturb_inventory_prior(cfg, 10.0, _OnesRng())
        assert params == pytest.approx((6.0, 1.0, 30.0))

    def test_perturbation_grows_with_zeta(self, rng):
        from scipy import stats as sps

        cfg = InventoryConfig()
        mdp, _, _ = build_inventory_mdp(cfg)
        zetas = np.linspace(0.0, 10.0, 10)
        mean_dist = []
        for zeta in zetas:
            dists = []
            for _ in range(5):
                _, proxy = perturb_inventory_prior(cfg, zeta, rng)
                dists.append(np.abs(proxy - mdp.cost).sum())
            mean_dist.append(np.mean(dists))
        corr = sps.spearmanr(zetas, mean_dist).statistic
        assert corr > 0.8

    def test_proxy_stays_in_box(self, rng):
        cfg = InventoryConfig()
        for _ in range(10):
            _, proxy = perturb_inventory_prior(cfg, 10.0, rng)
            assert np.abs(proxy).max() <= 1.0


class TestParameterRecovery:
    def test_exact_on_true_cost(self, inventory):
        cfg, mdp, scale, features = inventory
        recovered = recover_inventory_params(mdp.cost, features, scale)
        assert recovered == pytest.approx(cfg.params, abs=1e-8)

    def test_exact_on_other_params(self, inventory):
        cfg, _, scale, features = inventory
        cost = scale.to_normalized(features @ np.array([5.0, 8.0, 15.0]))
        recovered = recover_inventory_params(cost, features, scale)
        assert recovered == pytest.approx((5.0, 8.0, 15.0), abs=1e-8)

    def test_rank_deficiency_rejected(self, inventory):
        _, mdp, scale, _ = inventory
        bad = np.zeros((mdp.n_pairs, 2))
        with pytest.raises(ValueError):
            recover_inventory_params(mdp.cost, bad, scale)


class TestCostScale:
    def test_round_trip(self, rng):
        scale = CostScale(140.0)
        x = rng.uniform(-1, 1, 8)
        np.testing.assert_allclose(scale.to_normalized(scale.to_original(x)), x, atol=1e-15)

    def test_positive_required(self):
        with pytest.raises(ValueError):
            CostScale(0.0)
