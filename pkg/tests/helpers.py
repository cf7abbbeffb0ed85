"""Shared random-instance builders for the test suite."""

import numpy as np

from rlfd.mdp import Mdp, Policy


def random_mdp(rng, n_states=None, n_actions=None, gamma=None) -> Mdp:
    """Random dense MDP with Dirichlet rows, positive nu0, cost in [-1, 1]."""
    if n_states is None:
        n_states = int(rng.integers(2, 7))
    if n_actions is None:
        n_actions = int(rng.integers(2, 5))
    if gamma is None:
        gamma = float(rng.uniform(0.5, 0.95))
    n = n_states * n_actions
    transition = rng.dirichlet(np.ones(n_states), size=n)
    nu0 = rng.dirichlet(np.full(n_states, 5.0))
    cost = rng.uniform(-1.0, 1.0, n)
    return Mdp(n_states, n_actions, transition, nu0, cost, gamma)


def random_policy(rng, mdp: Mdp) -> Policy:
    return Policy(rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states))
