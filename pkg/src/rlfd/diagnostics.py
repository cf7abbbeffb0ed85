"""Empirical audits of the sampled gradients and of averaged solutions.

The moment audit replays millions of estimator draws without materializing
dense gradient vectors: means accumulate through bincounts over the sampled
indices and squared norms come from the pairwise-collision identity
``||sum_k v_k e_{i_k}||^2 = sum_k v_k^2 + 2 sum_{k<l} v_k v_l [i_k = i_l]``.
Draws consume the generator in the same per-draw order as the single-draw
estimators, so both paths are interchangeable under a shared seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rlfd.mdp import (
    OccupancyMeasure,
    bellman_flow,
    bellman_flow_adjoint,
    check_feasibility,
    policy_evaluation,
    policy_from_occupancy,
    solve_forward_optimal,
)
from rlfd.smd import RlfdProblem, SaddleIterate, estimator_bounds


@dataclass(frozen=True)
class MomentAuditReport:
    n_samples: int
    v_cu: float
    z_mu: float
    v_mu: float
    cu_mean_error: float
    cu_mean_tol: float
    cu_second_moment: float
    mu_mean_error: float
    mu_mean_tol: float
    mu_max_abs: float
    mu_local_moment: float
    passed: bool


def _batched_next_state(row_cumsum: np.ndarray, pairs: np.ndarray, u: np.ndarray) -> np.ndarray:
    rows = row_cumsum[pairs]
    idx = (rows < u[:, None]).sum(axis=1)
    return np.minimum(idx, row_cumsum.shape[1] - 1)


def estimator_moment_audit(
    problem: RlfdProblem,
    it: SaddleIterate,
    n_samples: int,
    rng: np.random.Generator,
    chunk: int = 1 << 16,
) -> MomentAuditReport:
    """Draw both estimators n_samples times and check their moment bounds.

    The (c, u) estimator is audited in its fully sampled form (the one the
    second-moment bound covers).  Passing requires the empirical means to
    sit within 5 * sqrt(v / n) of the exact gradients per coordinate, the
    sup norm of every mu draw to respect its hard bound, and both empirical
    second moments to respect theirs.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    mdp = problem.mdp
    S, A, n = mdp.n_states, mdp.n_actions, mdp.n_pairs
    gamma = mdp.gamma
    kk = 1.0 / (1.0 - gamma)
    gkk = gamma * kk
    alpha = problem.alpha
    c, u_vec, mu = it.c, it.u, it.mu
    mu_cum = np.cumsum(mu)
    row_cum = problem.transition_cumsum
    expert_cum = problem.expert_cumsum
    bounds = estimator_bounds(problem)

    acc_c = np.zeros(n)
    acc_u = np.zeros(S)
    sq_sum_cu = 0.0
    remaining = n_samples
    while remaining:
        m = min(chunk, remaining)
        remaining -= m
        draws = rng.random((m, 5))
        j = np.minimum((draws[:, 0] * n).astype(np.int64), n - 1)
        pair_t = np.minimum(np.searchsorted(mu_cum, draws[:, 1]), n - 1)
        next_t = _batched_next_state(row_cum, pair_t, draws[:, 2])
        pair_e = np.minimum(np.searchsorted(expert_cum, draws[:, 3]), n - 1)
        next_e = _batched_next_state(row_cum, pair_e, draws[:, 4])
        s_t = pair_t // A
        s_e = pair_e // A

        K = n * 2.0 * alpha * (c[j] - problem.c_hat[j])
        acc_c += np.bincount(j, weights=K, minlength=n)
        acc_c += np.bincount(pair_e, minlength=n)
        acc_c -= np.bincount(pair_t, minlength=n)
        acc_u += kk * np.bincount(s_t, minlength=S)
        acc_u -= gkk * np.bincount(next_t, minlength=S)
        acc_u -= kk * np.bincount(s_e, minlength=S)
        acc_u += gkk * np.bincount(next_e, minlength=S)

        sq_c = (
            K**2
            + 2.0
            + 2.0 * (K * (j == pair_e) - K * (j == pair_t) - (pair_e == pair_t))
        )
        sq_u = 2.0 * (kk**2 + gkk**2) + 2.0 * (
            -kk * gkk * (s_t == next_t)
            - kk * kk * (s_t == s_e)
            + kk * gkk * (s_t == next_e)
            + gkk * kk * (next_t == s_e)
            - gkk * gkk * (next_t == next_e)
            - kk * gkk * (s_e == next_e)
        )
        sq_sum_cu += float((sq_c + sq_u).sum())

    exact_c = 2.0 * alpha * (c - problem.c_hat) + problem.expert_mu - mu
    exact_u = bellman_flow(mdp, mu) - bellman_flow(mdp, problem.expert_mu)
    cu_mean_error = max(
        float(np.abs(acc_c / n_samples - exact_c).max()),
        float(np.abs(acc_u / n_samples - exact_u).max()),
    )
    cu_mean_tol = 5.0 * np.sqrt(bounds.v_cu / n_samples)
    cu_second_moment = sq_sum_cu / n_samples

    acc_m = np.zeros(n)
    sq_local = 0.0
    max_abs = 0.0
    remaining = n_samples
    while remaining:
        m = min(chunk, remaining)
        remaining -= m
        draws = rng.random((m, 2))
        pair = np.minimum((draws[:, 0] * n).astype(np.int64), n - 1)
        nxt = _batched_next_state(row_cum, pair, draws[:, 1])
        val = n * (c[pair] - kk * (u_vec[pair // A] - gamma * u_vec[nxt]))
        acc_m += np.bincount(pair, weights=val, minlength=n)
        sq_local += float((mu[pair] * val**2).sum())
        max_abs = max(max_abs, float(np.abs(val).max()))

    exact_m = c - bellman_flow_adjoint(mdp, u_vec)
    mu_mean_error = float(np.abs(acc_m / n_samples - exact_m).max())
    mu_mean_tol = 5.0 * np.sqrt(bounds.v_mu / n_samples)
    mu_local_moment = sq_local / n_samples

    passed = (
        cu_mean_error <= cu_mean_tol
        and mu_mean_error <= mu_mean_tol
        and cu_second_moment <= bounds.v_cu
        and max_abs <= bounds.z_mu + 1e-9
        and mu_local_moment <= bounds.v_mu
    )
    return MomentAuditReport(
        n_samples=n_samples,
        v_cu=bounds.v_cu,
        z_mu=bounds.z_mu,
        v_mu=bounds.v_mu,
        cu_mean_error=cu_mean_error,
        cu_mean_tol=cu_mean_tol,
        cu_second_moment=cu_second_moment,
        mu_mean_error=mu_mean_error,
        mu_mean_tol=mu_mean_tol,
        mu_max_abs=max_abs,
        mu_local_moment=mu_local_moment,
        passed=passed,
    )


def epsilon_optimality_report(
    problem: RlfdProblem,
    averaged_it: SaddleIterate,
    reference: tuple[np.ndarray, np.ndarray, np.ndarray],
    epsilon: float,
) -> tuple[float, float]:
    """Objective excess of an averaged solution against an exact optimum.

    Returns (lhs, rhs): the regularized objective of the averaged solution
    (its mu component replaced by the exact occupancy of the policy it
    induces) and the same objective at the reference optimum plus epsilon.
    An accurate solver keeps lhs below rhs in expectation.
    """
    mdp = problem.mdp
    alpha = problem.alpha
    c_eps = averaged_it.c
    pi_eps = policy_from_occupancy(
        OccupancyMeasure(averaged_it.mu, mdp.n_states, mdp.n_actions)
    )
    _, rho_eps_apprentice = policy_evaluation(mdp, pi_eps, c_eps)
    rho_eps_expert = float(problem.expert_mu @ c_eps)
    lhs = (
        alpha * float(np.sum((c_eps - problem.c_hat) ** 2))
        + rho_eps_expert
        - rho_eps_apprentice
    )

    c_ref, _, mu_ref = reference
    if not check_feasibility(mdp, np.asarray(mu_ref), tol=1e-6).passed:
        raise ValueError("reference occupancy is not feasible")
    forward = solve_forward_optimal(mdp, np.asarray(c_ref), tol=1e-10)
    rho_ref_expert = float(problem.expert_mu @ c_ref)
    rhs = (
        epsilon
        + alpha * float(np.sum((np.asarray(c_ref) - problem.c_hat) ** 2))
        + rho_ref_expert
        - forward.rho
    )
    return lhs, rhs
