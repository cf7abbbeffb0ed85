"""The two benchmark environments: single-product inventory and windy grid.

Inventory: states are stock levels 0..M, actions are order quantities with a
fixed global action set 0..M.  Orders beyond capacity are clamped to M - s,
which leaves duplicated actions with identical rows and costs, so the fixed
action set changes nothing about optimal behavior.  Demand is Poisson
truncated to {0, ..., M} and renormalized; demand at or above the available
stock folds into the empty state exactly.  (Truncation matters: under the
untruncated tail the base-stock margin at full capacity turns negative and
the optimal restock level shifts from 14 to 15 in the reference setting.)

Gridworld: cells row-major, four moves, wind drags the agent one cell left
with fixed probability regardless of the intended move, and moves off the
board keep the agent in place.  Obstacle cells cost +1, goal cells -1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from rlfd.mdp import (
    Mdp,
    OccupancyMeasure,
    Policy,
    occupancy_from_policy,
    solve_forward_optimal,
)

GRID_ACTIONS = ("up", "down", "left", "right")
_GRID_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class InventoryConfig:
    capacity: int = 15
    demand_mean: float = 10.0
    order_cost: float = 3.0
    holding_cost: float = 0.5
    sell_price: float = 15.0
    gamma: float = 0.9

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be at least 1")
        if self.demand_mean <= 0:
            raise ValueError("demand mean must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def params(self) -> tuple[float, float, float]:
        return (self.order_cost, self.holding_cost, self.sell_price)


@dataclass(frozen=True)
class GridworldConfig:
    height: int
    width: int
    obstacles: tuple[tuple[int, int], ...] = ()
    goals: tuple[tuple[int, int], ...] = ()
    wind_prob: float = 0.2
    gamma: float = 0.7
    goal_absorbing: bool = False

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("grid dimensions must be positive")
        if not 0.0 <= self.wind_prob < 1.0:
            raise ValueError("wind probability must lie in [0, 1)")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        obstacles = tuple(tuple(c) for c in self.obstacles)
        goals = tuple(tuple(c) for c in self.goals)
        object.__setattr__(self, "obstacles", obstacles)
        object.__setattr__(self, "goals", goals)
        for r, c in obstacles + goals:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise ValueError(f"cell {(r, c)} is out of bounds")
        if set(obstacles) & set(goals):
            raise ValueError("obstacle and goal cells must be disjoint")

    @property
    def n_cells(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class CostScale:
    """Positive factor mapping original currency costs into [-1, 1]."""

    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def to_normalized(self, cost: np.ndarray) -> np.ndarray:
        return np.asarray(cost, dtype=np.float64) / self.scale

    def to_original(self, cost: np.ndarray) -> np.ndarray:
        return np.asarray(cost, dtype=np.float64) * self.scale


def demand_pmf(cfg: InventoryConfig) -> np.ndarray:
    """Demand distribution on {0, ..., M}: truncated, renormalized Poisson."""
    raw = stats.poisson.pmf(np.arange(cfg.capacity + 1), cfg.demand_mean)
    return raw / raw.sum()


def _inventory_tables(cfg: InventoryConfig):
    """Per-(s, a) clamped order, post-order stock, and expected sales."""
    m = cfg.capacity
    n_states = m + 1
    levels = np.arange(n_states)
    pmf = demand_pmf(cfg)
    # E[min(L, D)] for every possible post-order stock L.
    expected_sales = np.empty(n_states)
    for stock in levels:
        head = np.arange(stock) * pmf[:stock]
        tail = max(0.0, 1.0 - pmf[:stock].sum())
        expected_sales[stock] = head.sum() + stock * tail

    s_grid, a_grid = np.meshgrid(levels, levels, indexing="ij")
    a_eff = np.minimum(a_grid, m - s_grid)
    stock = s_grid + a_eff
    return pmf, a_eff.ravel(), stock.ravel(), expected_sales


def inventory_cost_features(cfg: InventoryConfig) -> tuple[np.ndarray, CostScale]:
    """Feature matrix with rows [order, stock, -expected sales] and the scale
    that maps the true parameter combination into the unit box."""
    _, a_eff, stock, expected_sales = _inventory_tables(cfg)
    features = np.column_stack([a_eff, stock, -expected_sales[stock]]).astype(np.float64)
    original = features @ np.array(cfg.params)
    return features, CostScale(float(np.abs(original).max()))


def build_inventory_mdp(cfg: InventoryConfig) -> tuple[Mdp, CostScale, np.ndarray]:
    """Inventory MDP with normalized costs, plus the scale and features."""
    m = cfg.capacity
    n_states = m + 1
    pmf, a_eff, stock, expected_sales = _inventory_tables(cfg)

    n = n_states * n_states
    transition = np.zeros((n, n_states))
    for i in range(n):
        level = stock[i]
        if level == 0:
            transition[i, 0] = 1.0
            continue
        # Demand d < level leaves level - d units; the rest empties the shelf.
        transition[i, 1 : level + 1] = pmf[:level][::-1]
        transition[i, 0] = max(0.0, 1.0 - pmf[:level].sum())

    features = np.column_stack([a_eff, stock, -expected_sales[stock]]).astype(np.float64)
    original_cost = features @ np.array(cfg.params)
    scale = CostScale(float(np.abs(original_cost).max()))
    nu0 = np.full(n_states, 1.0 / n_states)
    mdp = Mdp(
        n_states=n_states,
        n_actions=n_states,
        transition=transition,
        nu0=nu0,
        cost=scale.to_normalized(original_cost),
        gamma=cfg.gamma,
    )
    return mdp, scale, features


def build_gridworld_mdp(cfg: GridworldConfig) -> Mdp:
    h, w = cfg.height, cfg.width
    n_states = h * w
    n_actions = len(GRID_ACTIONS)
    obstacles = set(cfg.obstacles)
    goals = set(cfg.goals)

    def cell_index(r, c):
        return r * w + c

    def move(r, c, dr, dc):
        rr, cc = r + dr, c + dc
        if 0 <= rr < h and 0 <= cc < w:
            return rr, cc
        return r, c

    transition = np.zeros((n_states * n_actions, n_states))
    state_cost = np.zeros(n_states)
    for r in range(h):
        for c in range(w):
            s = cell_index(r, c)
            if (r, c) in obstacles:
                state_cost[s] = 1.0
            elif (r, c) in goals:
                state_cost[s] = -1.0
            absorbing = cfg.goal_absorbing and (r, c) in goals
            for a, (dr, dc) in enumerate(_GRID_DELTAS):
                row = transition[s * n_actions + a]
                if absorbing:
                    row[s] = 1.0
                    continue
                intended = cell_index(*move(r, c, dr, dc))
                drifted = cell_index(*move(r, c, 0, -1))
                row[intended] += 1.0 - cfg.wind_prob
                row[drifted] += cfg.wind_prob

    cost = np.repeat(state_cost, n_actions)
    nu0 = np.full(n_states, 1.0 / n_states)
    return Mdp(
        n_states=n_states,
        n_actions=n_actions,
        transition=transition,
        nu0=nu0,
        cost=cost,
        gamma=cfg.gamma,
    )


def make_misspecified_expert(
    cfg: InventoryConfig, wrong_params: tuple[float, float, float]
) -> OccupancyMeasure:
    """Occupancy of the policy that is optimal for the wrong cost parameters."""
    wrong_cfg = InventoryConfig(
        capacity=cfg.capacity,
        demand_mean=cfg.demand_mean,
        order_cost=wrong_params[0],
        holding_cost=wrong_params[1],
        sell_price=wrong_params[2],
        gamma=cfg.gamma,
    )
    mdp, _, _ = build_inventory_mdp(wrong_cfg)
    return solve_forward_optimal(mdp, tol=1e-10).occupancy


def make_earlystop_expert(mdp: Mdp, iters: int) -> OccupancyMeasure:
    """Suboptimal expert from truncated value iteration.

    Runs a fixed number of sweeps, takes the greedy policy of the truncated
    values, and returns that policy's exact occupancy, so the result is
    always a feasible occupancy measure an oracle can sample.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    gamma = mdp.gamma
    v = np.zeros(mdp.n_states)
    for _ in range(iters):
        q = (1.0 - gamma) * mdp.cost + gamma * (mdp.transition @ v)
        v = q.reshape(mdp.n_states, mdp.n_actions).min(axis=1)
    q = (1.0 - gamma) * mdp.cost + gamma * (mdp.transition @ v)
    greedy = q.reshape(mdp.n_states, mdp.n_actions).argmin(axis=1)
    policy = Policy.deterministic(greedy, mdp.n_actions)
    return occupancy_from_policy(mdp, policy)


def make_partial_prior(
    cfg: GridworldConfig, fraction: float, rng: np.random.Generator
) -> np.ndarray:
    """Proxy cost knowing only a random fraction of the special cells.

    Zero everywhere except +1 on the sampled obstacle cells and -1 on the
    sampled goal cells, replicated across actions.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n_actions = len(GRID_ACTIONS)
    state_cost = np.zeros(cfg.n_cells)

    def pick(cells):
        count = int(round(fraction * len(cells)))
        if count == 0:
            return []
        chosen = rng.choice(len(cells), size=count, replace=False)
        return [cells[i] for i in np.sort(chosen)]

    for r, c in pick(list(cfg.obstacles)):
        state_cost[r * cfg.width + c] = 1.0
    for r, c in pick(list(cfg.goals)):
        state_cost[r * cfg.width + c] = -1.0
    return np.repeat(state_cost, n_actions)


def perturb_inventory_prior(
    cfg: InventoryConfig, zeta: float, rng: np.random.Generator
) -> tuple[tuple[float, float, float], np.ndarray]:
    """Noisy proxy parameters and the induced normalized proxy cost vector.

    Each parameter moves by at most 10% of its true value per unit of zeta.
    The proxy shares the true environment's cost scale; entries pushed
    outside the unit box by large perturbations are clipped back into it.
    """
    if zeta < 0:
        raise ValueError("zeta must be nonnegative")
    u = rng.uniform(-1.0, 1.0, 3)
    params = tuple(p + zeta * 0.1 * p * u[i] for i, p in enumerate(cfg.params))
    features, scale = inventory_cost_features(cfg)
    proxy = scale.to_normalized(features @ np.array(params))
    return params, np.clip(proxy, -1.0, 1.0)


def recover_inventory_params(
    c_learned: np.ndarray, feature_matrix: np.ndarray, cost_scale: CostScale
) -> tuple[float, float, float]:
    """Least-squares pullback of a learned cost vector to the three
    parameters, in original currency units."""
    if np.linalg.matrix_rank(feature_matrix) < feature_matrix.shape[1]:
        raise ValueError("feature matrix is rank deficient")
    target = cost_scale.to_original(c_learned)
    solution, *_ = np.linalg.lstsq(feature_matrix, target, rcond=None)
    return tuple(float(x) for x in solution)
