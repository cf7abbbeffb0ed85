"""Exact machinery for finite discounted MDPs.

State-action pairs are flattened row-major: pair (s, a) lives at index
``s * n_actions + a``.  All values and costs use the normalized discounted
convention (scaled by ``1 - gamma``), so occupancy measures are probability
distributions over state-action pairs and value functions of costs in
[-1, 1] stay in [-1, 1].

Everything here is immutable after construction and all operations are pure
functions, so they are safe to call from concurrently running workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

ROW_SUM_TOL = 1e-12
FEASIBILITY_TOL = 1e-9
CERTIFICATE_TOL = 1e-6


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite discounted MDP.

    transition has one row per (s, a) pair and one column per next state;
    cost is flattened the same way.  nu0 must be strictly positive
    everywhere and cost must lie in the unit sup-norm box.
    """

    n_states: int
    n_actions: int
    transition: np.ndarray
    nu0: np.ndarray
    cost: np.ndarray
    gamma: float

    def __post_init__(self):
        n = self.n_states * self.n_actions
        object.__setattr__(self, "transition", _readonly(self.transition))
        object.__setattr__(self, "nu0", _readonly(self.nu0))
        object.__setattr__(self, "cost", _readonly(self.cost))
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("state and action counts must be positive")
        if self.transition.shape != (n, self.n_states):
            raise ValueError(
                f"transition must have shape {(n, self.n_states)}, "
                f"got {self.transition.shape}"
            )
        if self.nu0.shape != (self.n_states,):
            raise ValueError("nu0 has wrong length")
        if self.cost.shape != (n,):
            raise ValueError("cost has wrong length")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if (self.transition < 0).any():
            raise ValueError("transition probabilities must be nonnegative")
        row_err = np.abs(self.transition.sum(axis=1) - 1.0).max()
        if row_err > ROW_SUM_TOL:
            raise ValueError(f"transition rows must sum to 1 (error {row_err:.3e})")
        if (self.nu0 <= 0).any():
            raise ValueError("nu0 must be strictly positive on every state")
        if abs(self.nu0.sum() - 1.0) > ROW_SUM_TOL:
            raise ValueError("nu0 must sum to 1")
        if np.abs(self.cost).max() > 1.0 + ROW_SUM_TOL:
            raise ValueError("cost must lie in [-1, 1]")

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    def pair_index(self, s: int, a: int) -> int:
        return s * self.n_actions + a


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary Markov policy: one distribution over actions per state."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _readonly(self.probs))
        if self.probs.ndim != 2:
            raise ValueError("policy must be a (n_states, n_actions) matrix")
        if (self.probs < 0).any():
            raise ValueError("policy probabilities must be nonnegative")
        row_err = np.abs(self.probs.sum(axis=1) - 1.0).max()
        if row_err > ROW_SUM_TOL:
            raise ValueError(f"policy rows must sum to 1 (error {row_err:.3e})")

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def deterministic(cls, actions: np.ndarray, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=np.int64)
        probs = np.zeros((actions.shape[0], n_actions))
        probs[np.arange(actions.shape[0]), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    """Discounted state-action visitation distribution, flattened row-major."""

    mu: np.ndarray
    n_states: int
    n_actions: int

    def __post_init__(self):
        object.__setattr__(self, "mu", _readonly(self.mu))
        if self.mu.shape != (self.n_states * self.n_actions,):
            raise ValueError("occupancy vector has wrong length")
        if (self.mu < 0).any():
            raise ValueError("occupancy entries must be nonnegative")

    def state_marginal(self) -> np.ndarray:
        return self.mu.reshape(self.n_states, self.n_actions).sum(axis=1)


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """Normalized discounted value per state."""

    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", _readonly(self.v))
        if self.v.ndim != 1:
            raise ValueError("value function must be a vector")


@dataclass(frozen=True)
class FeasibilityReport:
    """Distance of a candidate occupancy vector from the flow polytope."""

    max_flow_violation: float
    min_entry: float
    total_mass: float
    tol: float
    passed: bool


@dataclass(frozen=True, eq=False)
class ForwardSolution:
    policy: Policy
    occupancy: OccupancyMeasure
    value: ValueFunction
    rho: float


def bellman_flow(mdp: Mdp, mu: np.ndarray) -> np.ndarray:
    """Map a state-action vector to its normalized state in/out-flow.

    Returns (sum_a mu(s, a) - gamma * (P mu)(s)) / (1 - gamma).  For the
    occupancy measure of any policy the result equals nu0.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (mdp.n_pairs,):
        raise ValueError(f"expected vector of length {mdp.n_pairs}, got {mu.shape}")
    state_sums = mu.reshape(mdp.n_states, mdp.n_actions).sum(axis=1)
    inflow = mdp.transition.T @ mu
    return (state_sums - mdp.gamma * inflow) / (1.0 - mdp.gamma)


def bellman_flow_adjoint(mdp: Mdp, u: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`bellman_flow`: state values to pair temporal differences.

    Entry (s, a) is (u(s) - gamma * sum_s' P(s'|s,a) u(s')) / (1 - gamma).
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (mdp.n_states,):
        raise ValueError(f"expected vector of length {mdp.n_states}, got {u.shape}")
    expected_next = mdp.transition @ u
    current = np.repeat(u, mdp.n_actions)
    return (current - mdp.gamma * expected_next) / (1.0 - mdp.gamma)


def _policy_transition(mdp: Mdp, policy: Policy) -> np.ndarray:
    """State-to-state transition matrix under a policy, rows indexed by s."""
    p3 = mdp.transition.reshape(mdp.n_states, mdp.n_actions, mdp.n_states)
    return np.einsum("sa,sat->st", policy.probs, p3)


def occupancy_from_policy(mdp: Mdp, policy: Policy) -> OccupancyMeasure:
    """Exact occupancy measure of a policy via a dense linear solve."""
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape does not match the MDP")
    p_pi = _policy_transition(mdp, policy)
    lhs = np.eye(mdp.n_states) - mdp.gamma * p_pi.T
    d = np.linalg.solve(lhs, (1.0 - mdp.gamma) * mdp.nu0)
    mu = (d[:, None] * policy.probs).ravel()
    # Guard against sub-eps negatives introduced by the solve.
    mu = np.maximum(mu, 0.0)
    return OccupancyMeasure(mu, mdp.n_states, mdp.n_actions)


def policy_from_occupancy(occ: OccupancyMeasure) -> Policy:
    """Per-state normalization of an occupancy vector.

    States carrying zero mass get the uniform distribution: any choice
    there leaves the induced occupancy unchanged.
    """
    mu2 = occ.mu.reshape(occ.n_states, occ.n_actions)
    if (mu2 < 0).any():
        raise ValueError("occupancy entries must be nonnegative")
    mass = mu2.sum(axis=1)
    probs = np.empty_like(mu2)
    zero = mass <= 0.0
    probs[~zero] = mu2[~zero] / mass[~zero, None]
    probs[zero] = 1.0 / occ.n_actions
    return Policy(probs)


def policy_evaluation(
    mdp: Mdp, policy: Policy, cost: np.ndarray | None = None
) -> tuple[ValueFunction, float]:
    """Exact normalized value of a policy and its expected discounted cost."""
    if cost is None:
        cost = mdp.cost
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != (mdp.n_pairs,):
        raise ValueError(f"expected cost of length {mdp.n_pairs}, got {cost.shape}")
    c_pi = (policy.probs * cost.reshape(mdp.n_states, mdp.n_actions)).sum(axis=1)
    p_pi = _policy_transition(mdp, policy)
    lhs = np.eye(mdp.n_states) - mdp.gamma * p_pi
    v = np.linalg.solve(lhs, (1.0 - mdp.gamma) * c_pi)
    return ValueFunction(v), float(mdp.nu0 @ v)


def solve_forward_optimal(
    mdp: Mdp,
    cost: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iters: int = 1_000_000,
) -> ForwardSolution:
    """Cost-minimizing policy via value iteration plus exact recovery.

    Value iteration runs on the normalized Bellman operator until the
    sup-norm change drops below tol * (1 - gamma) / (2 * gamma), which makes
    the greedy policy tol-optimal; its occupancy and value are then
    computed exactly by linear solves.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if cost is None:
        cost = mdp.cost
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != (mdp.n_pairs,):
        raise ValueError(f"expected cost of length {mdp.n_pairs}, got {cost.shape}")
    gamma = mdp.gamma
    threshold = tol * (1.0 - gamma) / (2.0 * gamma)
    v = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        q = (1.0 - gamma) * cost + gamma * (mdp.transition @ v)
        v_new = q.reshape(mdp.n_states, mdp.n_actions).min(axis=1)
        if np.abs(v_new - v).max() < threshold:
            v = v_new
            break
        v = v_new
    else:
        raise RuntimeError("value iteration failed to converge")
    q = (1.0 - gamma) * cost + gamma * (mdp.transition @ v)
    greedy = q.reshape(mdp.n_states, mdp.n_actions).argmin(axis=1)
    policy = Policy.deterministic(greedy, mdp.n_actions)
    occ = occupancy_from_policy(mdp, policy)
    value, rho = policy_evaluation(mdp, policy, cost)
    return ForwardSolution(policy, occ, value, rho)


def check_feasibility(
    mdp: Mdp, mu: np.ndarray, tol: float = FEASIBILITY_TOL
) -> FeasibilityReport:
    """Report how far a vector is from the occupancy polytope."""
    mu = np.asarray(mu, dtype=np.float64)
    flow = bellman_flow(mdp, mu)
    max_violation = float(np.abs(flow - mdp.nu0).max())
    min_entry = float(mu.min())
    total = float(mu.sum())
    passed = max_violation <= tol and min_entry >= -tol
    return FeasibilityReport(max_violation, min_entry, total, tol, passed)


def certify_optimality(
    mdp: Mdp,
    mu: np.ndarray,
    cost: np.ndarray,
    u: np.ndarray,
    tol: float = CERTIFICATE_TOL,
) -> bool:
    """Complementary-slackness certificate for a feasible occupancy vector.

    True iff the reduced costs cost - adjoint(u) are entrywise >= -tol and
    are orthogonal to mu up to tol.
    """
    mu = np.asarray(mu, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    reduced = cost - bellman_flow_adjoint(mdp, u)
    if reduced.min() < -tol:
        return False
    return abs(float(mu @ reduced)) <= tol


def mdp_to_json(mdp: Mdp) -> str:
    """Serialize an MDP to a JSON document with an exact round trip."""
    doc = {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.gamma,
        "nu0": mdp.nu0.tolist(),
        "cost": mdp.cost.tolist(),
        "transition": mdp.transition.tolist(),
    }
    return json.dumps(doc, sort_keys=True)


def mdp_from_json(text: str) -> Mdp:
    doc = json.loads(text)
    return Mdp(
        n_states=int(doc["n_states"]),
        n_actions=int(doc["n_actions"]),
        transition=np.array(doc["transition"], dtype=np.float64),
        nu0=np.array(doc["nu0"], dtype=np.float64),
        cost=np.array(doc["cost"], dtype=np.float64),
        gamma=float(doc["gamma"]),
    )
