"""Stochastic mirror descent for the regularized inverse problem.

The inverse problem couples a cost vector c in the unit box, a state-value
vector u in the unit box, and a candidate occupancy vector mu on the
state-action simplex through the objective

    alpha * ||c - c_hat||^2 + <mu_E - mu, c - adjoint(u)>,

convex in (c, u) and concave in mu.  The solver alternates a Euclidean
projected step on (c, u) with an entropic (multiplicative) step on mu, both
driven by unbiased sampled gradients, and returns the uniform average of the
iterates.

Runs are reproducible: each run owns a counter-based Philox stream keyed by
its seed, and the batched driver produces bit-identical per-run results no
matter how runs are grouped into batches.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from rlfd.mdp import Mdp, bellman_flow_adjoint, check_feasibility

EXACT_CU = "exact_cu"
SAMPLED_CU = "sampled_cu"

_MU_FLOOR = 1e-300
_MASK64 = (1 << 64) - 1
_CHUNK = 8192


class NumericalError(RuntimeError):
    """A run produced non-finite iterates."""


def index_from_uniform(cumulative: np.ndarray, u: float) -> int:
    """Inverse-CDF lookup of a categorical index from a uniform draw."""
    idx = int((cumulative < u).sum())
    return min(idx, cumulative.shape[0] - 1)


def pair_from_uniform(u: float, n: int) -> int:
    """Uniform index on {0, ..., n-1} from a uniform draw."""
    return min(int(u * n), n - 1)


class RlfdProblem:
    """Inverse problem instance: dynamics, expert occupancy, prior, weight.

    The expert occupancy measure is stored exactly and sampled by inverse
    CDF against a precomputed cumulative table; transition rows carry the
    same tables so single next-state draws cost one lookup.

    cost_basis, when given, restricts the search to convex combinations of
    its columns (each column must lie in the unit sup-norm box).
    """

    def __init__(
        self,
        mdp: Mdp,
        expert_mu: np.ndarray,
        c_hat: np.ndarray | None = None,
        alpha: float = 0.0,
        cost_basis: np.ndarray | None = None,
        expert_tol: float = 1e-8,
    ):
        self.mdp = mdp
        expert_mu = np.ascontiguousarray(np.asarray(expert_mu, dtype=np.float64))
        if expert_mu.shape != (mdp.n_pairs,):
            raise ValueError("expert occupancy has wrong length")
        report = check_feasibility(mdp, expert_mu, tol=expert_tol)
        if not report.passed:
            raise ValueError(
                f"expert occupancy is not feasible "
                f"(flow violation {report.max_flow_violation:.3e})"
            )
        if c_hat is None:
            c_hat = np.zeros(mdp.n_pairs)
        c_hat = np.ascontiguousarray(np.asarray(c_hat, dtype=np.float64))
        if c_hat.shape != (mdp.n_pairs,):
            raise ValueError("proxy cost has wrong length")
        if np.abs(c_hat).max() > 1.0 + 1e-12:
            raise ValueError("proxy cost must lie in [-1, 1]")
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if cost_basis is not None:
            cost_basis = np.ascontiguousarray(np.asarray(cost_basis, dtype=np.float64))
            if cost_basis.ndim != 2 or cost_basis.shape[0] != mdp.n_pairs:
                raise ValueError("cost basis must have one row per state-action pair")
            if cost_basis.shape[1] < 1:
                raise ValueError("cost basis needs at least one column")
            if np.abs(cost_basis).max() > 1.0 + 1e-12:
                raise ValueError("cost basis columns must lie in [-1, 1]")

        self.expert_mu = expert_mu
        self.c_hat = c_hat
        self.alpha = float(alpha)
        self.cost_basis = cost_basis
        self.expert_cumsum = np.cumsum(expert_mu)
        self.transition_cumsum = np.cumsum(mdp.transition, axis=1)
        for arr in (self.expert_mu, self.c_hat, self.expert_cumsum, self.transition_cumsum):
            arr.setflags(write=False)

    @property
    def n_states(self) -> int:
        return self.mdp.n_states

    @property
    def n_actions(self) -> int:
        return self.mdp.n_actions

    @property
    def n_pairs(self) -> int:
        return self.mdp.n_pairs

    @property
    def gamma(self) -> float:
        return self.mdp.gamma

    def sample_expert_pair(self, u: float) -> int:
        return index_from_uniform(self.expert_cumsum, u)

    def sample_next_state(self, pair: int, u: float) -> int:
        return index_from_uniform(self.transition_cumsum[pair], u)


@dataclass(frozen=True, eq=False)
class SaddleIterate:
    """One point of the saddle search: cost, values, candidate occupancy.

    In hull mode w carries the simplex weights and c the induced cost.
    """

    c: np.ndarray
    u: np.ndarray
    mu: np.ndarray
    w: np.ndarray | None = None


@dataclass(frozen=True)
class SmdConfig:
    epsilon: float = 0.1
    eta_cu: float = 1e-2
    eta_mu: float = 1e-2
    T: int = 1000
    seed: int = 0
    estimator_mode: str = EXACT_CU
    gap_every: int = 0
    trace_every: int = 0
    random_init: bool = False

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.eta_cu <= 0 or self.eta_mu <= 0:
            raise ValueError("step sizes must be positive")
        if self.T < 1:
            raise ValueError("iteration count must be at least 1")
        if self.estimator_mode not in (EXACT_CU, SAMPLED_CU):
            raise ValueError(f"unknown estimator mode {self.estimator_mode!r}")
        if self.gap_every < 0 or self.trace_every < 0:
            raise ValueError("gap_every and trace_every must be nonnegative")


@dataclass(frozen=True)
class EstimatorBounds:
    """Moment bounds the sampled gradients are guaranteed to satisfy."""

    v_cu: float
    z_mu: float
    v_mu: float


def estimator_bounds(problem: RlfdProblem) -> EstimatorBounds:
    n = problem.n_pairs
    gamma = problem.gamma
    ratio = 4.0 * (1.0 + gamma**2) / (1.0 - gamma) ** 2
    return EstimatorBounds(
        v_cu=64.0 * problem.alpha**2 * n + ratio + 8.0,
        z_mu=2.0 * n / (1.0 - gamma),
        v_mu=n * (2.0 + ratio),
    )


def step_sizes_from_theorem(
    problem: RlfdProblem, epsilon: float, seed: int = 0
) -> tuple[SmdConfig, int]:
    """Step sizes and minimum iteration count guaranteeing an expected
    epsilon-accurate averaged iterate (unit box radius)."""
    bounds = estimator_bounds(problem)
    eta_cu = epsilon / (4.0 * bounds.v_cu)
    eta_mu = epsilon / (4.0 * bounds.v_mu)
    n = problem.n_pairs + problem.n_states
    m = problem.n_pairs
    t_min = max(
        16.0 * n / (epsilon * eta_cu),
        8.0 * math.log(m) / (epsilon * eta_mu),
    )
    t_min = int(math.ceil(t_min))
    config = SmdConfig(
        epsilon=epsilon, eta_cu=eta_cu, eta_mu=eta_mu, T=t_min, seed=seed
    )
    return config, t_min


def _check_distribution(mu: np.ndarray):
    if mu.min() < 0 or abs(mu.sum() - 1.0) > 1e-9:
        raise ValueError("mu iterate is not a probability distribution")


def grad_cu_estimate(
    problem: RlfdProblem,
    it: SaddleIterate,
    rng: np.random.Generator,
    mode: str = EXACT_CU,
) -> tuple[np.ndarray, np.ndarray]:
    """One sampled gradient for the (c, u) block, returned as (c part, u part).

    The u part is always sampled from one transition drawn under the current
    mu and one drawn under the expert.  The c part is either fully sampled
    (one uniform pair carries the regularizer, scaled by the pair count) or
    assembled exactly from the current iterate; both are unbiased.
    """
    n = problem.n_pairs
    A = problem.n_actions
    gamma = problem.gamma
    kk = 1.0 / (1.0 - gamma)
    _check_distribution(it.mu)
    mu_cum = np.cumsum(it.mu)
    if mode == SAMPLED_CU:
        u_reg = rng.random()
    elif mode != EXACT_CU:
        raise ValueError(f"unknown estimator mode {mode!r}")
    pair_t = index_from_uniform(mu_cum, rng.random())
    next_t = problem.sample_next_state(pair_t, rng.random())
    pair_e = problem.sample_expert_pair(rng.random())
    next_e = problem.sample_next_state(pair_e, rng.random())

    if mode == SAMPLED_CU:
        gc = np.zeros(n)
        j = pair_from_uniform(u_reg, n)
        gc[j] += n * 2.0 * problem.alpha * (it.c[j] - problem.c_hat[j])
        gc[pair_e] += 1.0
        gc[pair_t] -= 1.0
    else:
        if problem.alpha != 0.0:
            gc = 2.0 * problem.alpha * (it.c - problem.c_hat) + (
                problem.expert_mu - it.mu
            )
        else:
            gc = problem.expert_mu - it.mu
    gu = np.zeros(problem.n_states)
    gu[pair_t // A] += kk
    gu[next_t] -= gamma * kk
    gu[pair_e // A] -= kk
    gu[next_e] += gamma * kk
    return gc, gu


def grad_mu_estimate(
    problem: RlfdProblem, it: SaddleIterate, rng: np.random.Generator
) -> np.ndarray:
    """One sampled gradient for the mu block: a single scaled coordinate."""
    n = problem.n_pairs
    A = problem.n_actions
    gamma = problem.gamma
    kk = 1.0 / (1.0 - gamma)
    pair = pair_from_uniform(rng.random(), n)
    nxt = problem.sample_next_state(pair, rng.random())
    val = n * (it.c[pair] - kk * (it.u[pair // A] - gamma * it.u[nxt]))
    g = np.zeros(n)
    g[pair] = val
    return g


def mirror_step_box(
    c: np.ndarray,
    u: np.ndarray,
    grad_c: np.ndarray,
    grad_u: np.ndarray,
    eta: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean step followed by projection onto the unit sup-norm boxes."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    return (
        np.clip(c - eta * grad_c, -1.0, 1.0),
        np.clip(u - eta * grad_u, -1.0, 1.0),
    )


def mirror_step_simplex(mu: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    """Multiplicative update and renormalization, computed in the log domain.

    Max subtraction plus the 1e-300 floor keep coordinates alive across very
    long runs; adding a constant to every gradient entry leaves the output
    unchanged.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    x = np.log(np.maximum(mu, _MU_FLOOR))
    x = x - eta * grad
    x = x - x.max()
    y = np.exp(x)
    return y / y.sum()


def lagrangian(problem: RlfdProblem, it: SaddleIterate) -> float:
    """Exact objective value at an iterate (uses dense dynamics)."""
    reduced = it.c - bellman_flow_adjoint(problem.mdp, it.u)
    reg = problem.alpha * float(np.sum((it.c - problem.c_hat) ** 2))
    return reg + float((problem.expert_mu - it.mu) @ reduced)


def _gap_rows(
    problem: RlfdProblem, C: np.ndarray, U: np.ndarray, MU: np.ndarray
) -> np.ndarray:
    """Closed-form duality gap for each row of a batch of iterates.

    Both inner problems separate per coordinate: the best response in mu is
    a simplex vertex at the smallest reduced cost, the best response in c
    clips the unconstrained quadratic minimizer into the box, and the best
    response in u saturates at the sign of the flow of (expert - mu).
    """
    mdp = problem.mdp
    S, A, n = mdp.n_states, mdp.n_actions, mdp.n_pairs
    gamma = mdp.gamma
    kk = 1.0 / (1.0 - gamma)
    alpha = problem.alpha
    c_hat = problem.c_hat
    rep = np.repeat(np.arange(S), A)

    adj = (U[:, rep] - gamma * (U @ mdp.transition.T)) * kk
    reduced = C - adj
    reg = alpha * ((C - c_hat) ** 2).sum(axis=1)
    max_term = reg + reduced @ problem.expert_mu - reduced.min(axis=1)

    d = problem.expert_mu - MU
    flow = (d.reshape(-1, S, A).sum(axis=2) - gamma * (d @ mdp.transition)) * kk
    if alpha > 0:
        c_best = np.clip(c_hat - d / (2.0 * alpha), -1.0, 1.0)
    else:
        c_best = np.where(d > 0, -1.0, np.where(d < 0, 1.0, np.clip(c_hat, -1.0, 1.0)))
    min_term = (
        alpha * ((c_best - c_hat) ** 2).sum(axis=1)
        + (d * c_best).sum(axis=1)
        - np.abs(flow).sum(axis=1)
    )
    return max_term - min_term


def duality_gap_exact(problem: RlfdProblem, it: SaddleIterate) -> float:
    """Exact duality gap of an iterate (box cost class only)."""
    if problem.cost_basis is not None:
        raise ValueError("exact gap evaluation requires the box cost class")
    return float(
        _gap_rows(problem, it.c[None, :], it.u[None, :], it.mu[None, :])[0]
    )


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Everything one run produced: averaged iterate, traces, gap curve."""

    seed: int
    mode: str
    final: SaddleIterate
    trace: np.ndarray  # rows (t, l1_diff_c, l1_diff_u, l1_diff_mu)
    gaps: np.ndarray  # rows (t, gap of the running average)
    wall_time: float
    config: SmdConfig


def run_smd_batch(
    problem: RlfdProblem,
    config: SmdConfig,
    seeds: list[int],
    hull: bool = False,
) -> list[RunRecord]:
    """Run several independent seeds in lockstep and return per-run records.

    Each seed owns a Philox stream, every operation is row-local, and all
    reductions run along fixed-length axes, so per-run outputs do not
    depend on how seeds are grouped into batches.
    """
    if hull and problem.cost_basis is None:
        raise ValueError("hull mode requires a cost basis")
    if not hull and problem.cost_basis is not None:
        raise ValueError("problem restricts costs to a hull; run in hull mode")
    if hull and config.gap_every:
        raise ValueError("exact gap evaluation requires the box cost class")
    mdp = problem.mdp
    S, A, n = mdp.n_states, mdp.n_actions, mdp.n_pairs
    gamma = mdp.gamma
    kk = 1.0 / (1.0 - gamma)
    gkk = gamma * kk
    eta_cu, eta_mu = config.eta_cu, config.eta_mu
    alpha = problem.alpha
    c_hat = problem.c_hat
    expert_mu = problem.expert_mu
    expert_cum = problem.expert_cumsum
    row_cum = problem.transition_cumsum
    sampled = config.estimator_mode == SAMPLED_CU
    n_cols = 7 if sampled else 6
    off = 1 if sampled else 0

    R = len(seeds)
    ar = np.arange(R)
    gens = [
        np.random.Generator(np.random.Philox(key=int(s) & _MASK64)) for s in seeds
    ]

    basis = problem.cost_basis
    if config.random_init:
        if hull:
            W = np.stack([g.dirichlet(np.ones(basis.shape[1])) for g in gens])
        else:
            C = np.stack([g.uniform(-1.0, 1.0, n) for g in gens])
        U = np.stack([g.uniform(-1.0, 1.0, S) for g in gens])
        MU = np.stack([g.dirichlet(np.ones(n)) for g in gens])
    else:
        if hull:
            W = np.full((R, basis.shape[1]), 1.0 / basis.shape[1])
        else:
            C = np.tile(c_hat, (R, 1))
        U = np.zeros((R, S))
        MU = np.full((R, n), 1.0 / n)
    if hull:
        C = W @ basis.T
        SW = np.zeros_like(W)

    SC = np.zeros((R, n))
    SU = np.zeros((R, S))
    SMU = np.zeros((R, n))
    trace_rows: list[list[tuple]] = [[] for _ in range(R)]
    gap_rows: list[list[tuple]] = [[] for _ in range(R)]

    t = 0
    started = time.perf_counter()
    while t < config.T:
        span = min(_CHUNK, config.T - t)
        block = np.stack([g.random((span, n_cols)) for g in gens])
        for i in range(span):
            t += 1
            cols = block[:, i, :]
            mu_cum = np.cumsum(MU, axis=1)
            pair_t = np.minimum((mu_cum < cols[:, off + 0 : off + 1]).sum(axis=1), n - 1)
            next_t = np.minimum(
                (row_cum[pair_t] < cols[:, off + 1 : off + 2]).sum(axis=1), S - 1
            )
            pair_e = np.minimum((expert_cum < cols[:, off + 2 : off + 3]).sum(axis=1), n - 1)
            next_e = np.minimum(
                (row_cum[pair_e] < cols[:, off + 3 : off + 4]).sum(axis=1), S - 1
            )

            if sampled:
                GC = np.zeros((R, n))
                j = np.minimum((cols[:, 0] * n).astype(np.int64), n - 1)
                np.add.at(GC, (ar, j), n * 2.0 * alpha * (C[ar, j] - c_hat[j]))
                np.add.at(GC, (ar, pair_e), 1.0)
                np.subtract.at(GC, (ar, pair_t), 1.0)
            else:
                if alpha != 0.0:
                    GC = 2.0 * alpha * (C - c_hat) + (expert_mu - MU)
                else:
                    GC = expert_mu - MU
            GU = np.zeros((R, S))
            np.add.at(GU, (ar, pair_t // A), kk)
            np.subtract.at(GU, (ar, next_t), gkk)
            np.subtract.at(GU, (ar, pair_e // A), kk)
            np.add.at(GU, (ar, next_e), gkk)

            pair_m = np.minimum((cols[:, off + 4] * n).astype(np.int64), n - 1)
            next_m = np.minimum(
                (row_cum[pair_m] < cols[:, off + 5 : off + 6]).sum(axis=1), S - 1
            )
            val = n * (
                C[ar, pair_m] - kk * (U[ar, pair_m // A] - gamma * U[ar, next_m])
            )

            if hull:
                GW = GC @ basis
                X = np.log(np.maximum(W, _MU_FLOOR))
                X = X - eta_cu * GW
                X = X - X.max(axis=1, keepdims=True)
                Y = np.exp(X)
                W_new = Y / Y.sum(axis=1, keepdims=True)
                C_new = W_new @ basis.T
            else:
                C_new = np.clip(C - eta_cu * GC, -1.0, 1.0)
            U_new = np.clip(U - eta_cu * GU, -1.0, 1.0)

            X = np.log(np.maximum(MU, _MU_FLOOR))
            X[ar, pair_m] -= eta_mu * val
            X = X - X.max(axis=1, keepdims=True)
            Y = np.exp(X)
            MU_new = Y / Y.sum(axis=1, keepdims=True)

            if config.trace_every and t % config.trace_every == 0:
                if hull:
                    dc = np.abs(W_new - W).sum(axis=1)
                else:
                    dc = np.abs(C_new - C).sum(axis=1)
                du = np.abs(U_new - U).sum(axis=1)
                dmu = np.abs(MU_new - MU).sum(axis=1)
                for r in range(R):
                    trace_rows[r].append((t, dc[r], du[r], dmu[r]))

            C, U, MU = C_new, U_new, MU_new
            if hull:
                W = W_new
                SW += W
            SC += C
            SU += U
            SMU += MU

            if config.gap_every and t % config.gap_every == 0:
                gaps = _gap_rows(problem, SC / t, SU / t, SMU / t)
                for r in range(R):
                    gap_rows[r].append((t, gaps[r]))
    elapsed = time.perf_counter() - started

    records = []
    for r in range(R):
        final_c = SC[r] / config.T
        final_u = SU[r] / config.T
        final_mu = SMU[r] / config.T
        final_w = SW[r] / config.T if hull else None
        for arr in (final_c, final_u, final_mu):
            if not np.isfinite(arr).all():
                raise NumericalError(f"run with seed {seeds[r]} diverged")
        records.append(
            RunRecord(
                seed=int(seeds[r]),
                mode="hull" if hull else "box",
                final=SaddleIterate(c=final_c, u=final_u, mu=final_mu, w=final_w),
                trace=np.array(trace_rows[r], dtype=np.float64).reshape(-1, 4),
                gaps=np.array(gap_rows[r], dtype=np.float64).reshape(-1, 2),
                wall_time=elapsed / R,
                config=replace(config, seed=int(seeds[r])),
            )
        )
    return records


def run_smd_rlfd(
    problem: RlfdProblem, config: SmdConfig
) -> tuple[SaddleIterate, RunRecord]:
    """One full run over the box cost class; returns the averaged iterate."""
    record = run_smd_batch(problem, config, [config.seed])[0]
    return record.final, record


def run_smd_hull(
    problem: RlfdProblem, config: SmdConfig
) -> tuple[SaddleIterate, RunRecord]:
    """One full run over the convex hull of the cost basis columns.

    The cost block gradient is pulled back through the basis and the weight
    step becomes entropic on the weight simplex; with alpha = 0 this solves
    the classical hull-restricted apprenticeship formulation.
    """
    record = run_smd_batch(problem, config, [config.seed], hull=True)[0]
    return record.final, record
