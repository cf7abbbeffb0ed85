"""Declarative, seeded, reproducible experiment harness.

A config file (TOML or JSON, same schema) describes an environment, an
expert, a proxy-cost prior, and solver settings; the runner dispatches N
independent seeded runs, averages their outputs, derives per-experiment
summaries, and persists everything as CSV files plus a manifest.

Reproducibility contract: run seeds are ``base_seed + global run index``,
auxiliary noise draws use two-word Philox keys ``[base_seed, tag]`` disjoint
from run streams, cross-run averaging is compensated (Kahan) summation in
run-index order, and nothing wall-clock dependent is written to disk, so a
config and seed reproduce identical artifacts for any worker count.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

import rlfd
from rlfd.environments import (
    GridworldConfig,
    InventoryConfig,
    build_gridworld_mdp,
    build_inventory_mdp,
    make_earlystop_expert,
    make_misspecified_expert,
    make_partial_prior,
    perturb_inventory_prior,
    recover_inventory_params,
)
from rlfd.mdp import (
    Mdp,
    OccupancyMeasure,
    mdp_to_json,
    policy_evaluation,
    policy_from_occupancy,
    solve_forward_optimal,
)
from rlfd.smd import (
    EXACT_CU,
    SAMPLED_CU,
    RlfdProblem,
    RunRecord,
    SaddleIterate,
    SmdConfig,
    estimator_bounds,
    run_smd_batch,
    step_sizes_from_theorem,
)

EXPERIMENT_KINDS = (
    "single",
    "prior_perturbation",
    "alpha_sweep",
    "hull_comparison",
    "gridworld_regularization",
    "convergence_trace",
    "gap_trace",
    "grid_gallery",
)

GRID_ACTION_NAMES = ("up", "down", "left", "right")


class ConfigError(ValueError):
    """Configuration failed to parse or validate."""


# ---------------------------------------------------------------------------
# Config schema


@dataclass(frozen=True)
class ExpertSpec:
    kind: str = "optimal"  # optimal | misspecified | earlystop
    params: tuple[float, float, float] | None = None
    iters: int = 1


@dataclass(frozen=True)
class PriorSpec:
    kind: str = "exact"  # exact | zero | params | partial | perturbed
    params: tuple[float, float, float] | None = None
    fraction: float = 0.5
    zeta_min: float = 0.0
    zeta_max: float = 10.0
    zeta_points: int = 20
    reps: int = 5


@dataclass(frozen=True)
class AlgorithmSpec:
    alpha: float = 0.0
    runs: int = 1
    T: int = 1000
    eta_cu: float = 1e-2
    eta_mu: float = 1e-2
    epsilon: float = 0.1
    estimator_mode: str = EXACT_CU
    random_init: bool = False
    gap_every: int = 0
    trace_every: int = 0
    step_rule: str = "fixed"  # fixed | theorem


@dataclass(frozen=True)
class SweepSpec:
    alphas: tuple[float, ...] = ()
    capacities: tuple[int, ...] = ()
    n_grids: int = 4
    obstacles_per_grid: int = 4
    goals_per_grid: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    base_seed: int
    environment: InventoryConfig | GridworldConfig
    expert: ExpertSpec
    prior: PriorSpec
    algorithm: AlgorithmSpec
    sweep: SweepSpec
    output_dir: str | None = None
    raw: dict | None = None


def _get(table: dict, key: str, kind, path: str, default):
    value = table.get(key, default)
    if value is default and default is not None:
        return default
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {value!r}")
    return value


def _no_unknown_keys(table: dict, allowed: set[str], path: str):
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")


def _parse_environment(table: dict) -> InventoryConfig | GridworldConfig:
    env_type = _get(table, "type", str, "environment", None)
    if env_type == "inventory":
        _no_unknown_keys(
            table,
            {"type", "capacity", "demand_mean", "order_cost", "holding_cost",
             "sell_price", "gamma"},
            "environment",
        )
        try:
            return InventoryConfig(
                capacity=_get(table, "capacity", int, "environment", 15),
                demand_mean=_get(table, "demand_mean", float, "environment", 10.0),
                order_cost=_get(table, "order_cost", float, "environment", 3.0),
                holding_cost=_get(table, "holding_cost", float, "environment", 0.5),
                sell_price=_get(table, "sell_price", float, "environment", 15.0),
                gamma=_get(table, "gamma", float, "environment", 0.9),
            )
        except ValueError as exc:
            raise ConfigError(f"environment: {exc}") from exc
    if env_type == "gridworld":
        _no_unknown_keys(
            table,
            {"type", "height", "width", "obstacles", "goals", "wind_prob",
             "gamma", "goal_absorbing"},
            "environment",
        )
        try:
            return GridworldConfig(
                height=_get(table, "height", int, "environment", None),
                width=_get(table, "width", int, "environment", None),
                obstacles=tuple(map(tuple, table.get("obstacles", ()))),
                goals=tuple(map(tuple, table.get("goals", ()))),
                wind_prob=_get(table, "wind_prob", float, "environment", 0.2),
                gamma=_get(table, "gamma", float, "environment", 0.7),
                goal_absorbing=_get(table, "goal_absorbing", bool, "environment", False),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"environment: {exc}") from exc
    raise ConfigError(f"environment.type: expected 'inventory' or 'gridworld', got {env_type!r}")


def _parse_params(table: dict, path: str) -> tuple[float, float, float]:
    return (
        _get(table, "order_cost", float, path, None),
        _get(table, "holding_cost", float, path, None),
        _get(table, "sell_price", float, path, None),
    )


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a table")
    _no_unknown_keys(
        raw,
        {"kind", "base_seed", "output_dir", "environment", "expert", "prior",
         "algorithm", "sweep", "presets"},
        "top level",
    )
    kind = _get(raw, "kind", str, "top level", None)
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"kind: expected one of {EXPERIMENT_KINDS}, got {kind!r}")
    base_seed = _get(raw, "base_seed", int, "top level", 0)
    output_dir = raw.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("output_dir: expected string")

    environment = _parse_environment(_get(raw, "environment", dict, "top level", None))

    expert_table = _get(raw, "expert", dict, "top level", {"type": "optimal"})
    _no_unknown_keys(
        expert_table,
        {"type", "order_cost", "holding_cost", "sell_price", "iters"},
        "expert",
    )
    expert_kind = _get(expert_table, "type", str, "expert", "optimal")
    if expert_kind == "optimal":
        expert = ExpertSpec("optimal")
    elif expert_kind == "misspecified":
        if not isinstance(environment, InventoryConfig):
            raise ConfigError("expert.type: misspecified experts need an inventory environment")
        expert = ExpertSpec("misspecified", params=_parse_params(expert_table, "expert"))
    elif expert_kind == "earlystop":
        iters = _get(expert_table, "iters", int, "expert", 1)
        if iters < 1:
            raise ConfigError("expert.iters: must be at least 1")
        expert = ExpertSpec("earlystop", iters=iters)
    else:
        raise ConfigError(f"expert.type: unknown kind {expert_kind!r}")

    prior_table = _get(raw, "prior", dict, "top level", {"type": "exact"})
    _no_unknown_keys(
        prior_table,
        {"type", "order_cost", "holding_cost", "sell_price", "fraction",
         "zeta_min", "zeta_max", "zeta_points", "reps"},
        "prior",
    )
    prior_kind = _get(prior_table, "type", str, "prior", "exact")
    if prior_kind in ("exact", "zero"):
        prior = PriorSpec(prior_kind)
    elif prior_kind == "params":
        if not isinstance(environment, InventoryConfig):
            raise ConfigError("prior.type: parameter priors need an inventory environment")
        prior = PriorSpec("params", params=_parse_params(prior_table, "prior"))
    elif prior_kind == "partial":
        if not isinstance(environment, GridworldConfig):
            raise ConfigError("prior.type: partial priors need a gridworld environment")
        fraction = _get(prior_table, "fraction", float, "prior", 0.5)
        if not 0.0 <= fraction <= 1.0:
            raise ConfigError("prior.fraction: must lie in [0, 1]")
        prior = PriorSpec("partial", fraction=fraction)
    elif prior_kind == "perturbed":
        if not isinstance(environment, InventoryConfig):
            raise ConfigError("prior.type: perturbed priors need an inventory environment")
        points = _get(prior_table, "zeta_points", int, "prior", 20)
        reps = _get(prior_table, "reps", int, "prior", 5)
        if points < 1 or reps < 1:
            raise ConfigError("prior: zeta_points and reps must be positive")
        prior = PriorSpec(
            "perturbed",
            zeta_min=_get(prior_table, "zeta_min", float, "prior", 0.0),
            zeta_max=_get(prior_table, "zeta_max", float, "prior", 10.0),
            zeta_points=points,
            reps=reps,
        )
    else:
        raise ConfigError(f"prior.type: unknown kind {prior_kind!r}")

    algo_table = _get(raw, "algorithm", dict, "top level", {})
    _no_unknown_keys(
        algo_table,
        {"alpha", "runs", "T", "eta_cu", "eta_mu", "epsilon", "estimator_mode",
         "random_init", "gap_every", "trace_every", "step_rule"},
        "algorithm",
    )
    step_rule = _get(algo_table, "step_rule", str, "algorithm", "fixed")
    if step_rule not in ("fixed", "theorem"):
        raise ConfigError("algorithm.step_rule: expected 'fixed' or 'theorem'")
    T = _get(algo_table, "T", int, "algorithm", 1000)
    if T < 1 and not (T == 0 and step_rule == "theorem"):
        raise ConfigError("algorithm.T: must be >= 1 (0 only with the theorem step rule)")
    estimator_mode = _get(algo_table, "estimator_mode", str, "algorithm", EXACT_CU)
    if estimator_mode not in (EXACT_CU, SAMPLED_CU):
        raise ConfigError(f"algorithm.estimator_mode: unknown mode {estimator_mode!r}")
    algorithm = AlgorithmSpec(
        alpha=_get(algo_table, "alpha", float, "algorithm", 0.0),
        runs=_get(algo_table, "runs", int, "algorithm", 1),
        T=T,
        eta_cu=_get(algo_table, "eta_cu", float, "algorithm", 1e-2),
        eta_mu=_get(algo_table, "eta_mu", float, "algorithm", 1e-2),
        epsilon=_get(algo_table, "epsilon", float, "algorithm", 0.1),
        estimator_mode=estimator_mode,
        random_init=_get(algo_table, "random_init", bool, "algorithm", False),
        gap_every=_get(algo_table, "gap_every", int, "algorithm", 0),
        trace_every=_get(algo_table, "trace_every", int, "algorithm", 0),
        step_rule=step_rule,
    )
    if algorithm.runs < 1:
        raise ConfigError("algorithm.runs: must be at least 1")
    if algorithm.alpha < 0:
        raise ConfigError("algorithm.alpha: must be nonnegative")

    sweep_table = _get(raw, "sweep", dict, "top level", {})
    _no_unknown_keys(
        sweep_table,
        {"alphas", "capacities", "n_grids", "obstacles_per_grid", "goals_per_grid"},
        "sweep",
    )
    alphas = tuple(float(a) for a in sweep_table.get("alphas", ()))
    capacities = tuple(int(m) for m in sweep_table.get("capacities", ()))
    sweep = SweepSpec(
        alphas=alphas,
        capacities=capacities,
        n_grids=_get(sweep_table, "n_grids", int, "sweep", 4),
        obstacles_per_grid=_get(sweep_table, "obstacles_per_grid", int, "sweep", 4),
        goals_per_grid=_get(sweep_table, "goals_per_grid", int, "sweep", 1),
    )

    needs_alphas = kind in (
        "alpha_sweep", "gridworld_regularization", "convergence_trace", "gap_trace"
    )
    if needs_alphas and not alphas:
        raise ConfigError(f"sweep.alphas: required for kind {kind!r}")
    if any(a < 0 for a in alphas):
        raise ConfigError("sweep.alphas: entries must be nonnegative")
    if kind == "hull_comparison":
        if not isinstance(environment, InventoryConfig):
            raise ConfigError("kind hull_comparison needs an inventory environment")
        if not capacities:
            raise ConfigError("sweep.capacities: required for kind hull_comparison")
    if kind == "prior_perturbation":
        if prior.kind != "perturbed":
            raise ConfigError("kind prior_perturbation needs prior.type = 'perturbed'")
        if not isinstance(environment, InventoryConfig):
            raise ConfigError("kind prior_perturbation needs an inventory environment")
    if kind in ("gridworld_regularization", "gap_trace", "grid_gallery"):
        if not isinstance(environment, GridworldConfig):
            raise ConfigError(f"kind {kind} needs a gridworld environment")

    return ExperimentConfig(
        kind=kind,
        base_seed=base_seed,
        environment=environment,
        expert=expert,
        prior=prior,
        algorithm=algorithm,
        sweep=sweep,
        output_dir=output_dir,
        raw=raw,
    )


def _apply_preset(raw: dict, preset: str) -> dict:
    presets = raw.get("presets", {})
    if preset not in presets:
        raise ConfigError(f"presets.{preset}: not defined in this config")
    merged = json.loads(json.dumps(raw))
    for dotted, value in presets[preset].items():
        node = merged
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return merged


def load_config(path: str | Path, preset: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    elif path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    else:
        raise ConfigError(f"{path}: expected a .toml or .json config")
    if preset:
        raw = _apply_preset(raw, preset)
    return parse_config(raw)


# ---------------------------------------------------------------------------
# Numeric plumbing


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def kahan_mean(arrays: list[np.ndarray]) -> np.ndarray:
    """Compensated mean over a fixed-order list of equal-shape arrays."""
    total = np.zeros_like(arrays[0])
    comp = np.zeros_like(arrays[0])
    for arr in arrays:
        y = arr - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total / len(arrays)


class _SeedSequencer:
    """Allocates disjoint run-seed blocks in a fixed deterministic order."""

    def __init__(self, base_seed: int):
        self.base_seed = base_seed
        self.offset = 0

    def block(self, count: int) -> list[int]:
        seeds = [(self.base_seed + self.offset + i) & ((1 << 64) - 1) for i in range(count)]
        self.offset += count
        return seeds


def _aux_rng(base_seed: int, tag: int) -> np.random.Generator:
    """Philox stream for auxiliary noise, disjoint from all run streams."""
    return np.random.Generator(
        np.random.Philox(key=np.array([base_seed & ((1 << 64) - 1), tag], dtype=np.uint64))
    )


def _worker_run(args):
    problem, config, seeds, hull = args
    return run_smd_batch(problem, config, seeds, hull=hull)


def execute_runs(
    problem: RlfdProblem,
    config: SmdConfig,
    seeds: list[int],
    workers: int = 1,
    hull: bool = False,
) -> list[RunRecord]:
    """Run seeds across a worker pool; results come back in seed order."""
    workers = max(1, min(workers, len(seeds)))
    if workers == 1:
        return run_smd_batch(problem, config, seeds, hull=hull)
    chunks = [list(chunk) for chunk in np.array_split(seeds, workers) if len(chunk)]
    jobs = [(problem, config, [int(s) for s in chunk], hull) for chunk in chunks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_worker_run, jobs))
    records: list[RunRecord] = []
    for batch in results:
        records.extend(batch)
    return records


def aggregate_final(records: list[RunRecord]) -> SaddleIterate:
    """Coordinatewise compensated mean of per-run averaged iterates."""
    c = kahan_mean([r.final.c for r in records])
    u = kahan_mean([r.final.u for r in records])
    mu = kahan_mean([r.final.mu for r in records])
    w = None
    if records[0].final.w is not None:
        w = kahan_mean([r.final.w for r in records])
    return SaddleIterate(c=c, u=u, mu=mu, w=w)


def aggregate_curves(rows: list[np.ndarray]) -> np.ndarray:
    """Pointwise compensated mean of per-run (t, value...) curves."""
    if rows[0].size == 0:
        return rows[0]
    out = kahan_mean([r[:, 1:] for r in rows])
    return np.column_stack([rows[0][:, 0], out])


# ---------------------------------------------------------------------------
# Artifact writing


class ArtifactWriter:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, dict] = {}

    def write_csv(self, relpath: str, columns: list[str], rows: list[tuple]):
        path = self.root / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [",".join(columns)]
        for row in rows:
            cells = []
            for cell in row:
                if isinstance(cell, (int, np.integer)):
                    cells.append(str(int(cell)))
                elif isinstance(cell, str):
                    cells.append(cell)
                else:
                    cells.append(format_float(cell))
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n")
        self.files[relpath] = {"kind": "csv", "rows": len(rows), "columns": columns}

    def write_json(self, relpath: str, payload: dict):
        path = self.root / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        self.files[relpath] = {"kind": "json"}

    def write_manifest(self, payload: dict):
        manifest = dict(payload)
        manifest["files"] = {k: self.files[k] for k in sorted(self.files)}
        (self.root / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n"
        )


def _fingerprint() -> dict:
    return {
        "package": f"rlfd {rlfd.__version__}",
        "python": sys.version.split()[0],
        "numpy": np.__version__,
    }


def _final_rows(final: SaddleIterate) -> list[tuple]:
    rows = [("c", i, v) for i, v in enumerate(final.c)]
    rows += [("u", i, v) for i, v in enumerate(final.u)]
    rows += [("mu", i, v) for i, v in enumerate(final.mu)]
    if final.w is not None:
        rows += [("w", i, v) for i, v in enumerate(final.w)]
    return rows


def write_run_record(writer: ArtifactWriter, reldir: str, record: RunRecord, bounds):
    """Persist one run: header JSON plus final/trace/gap CSV blocks.

    Wall time stays in memory only; artifacts must be bit-identical across
    repeats.  In hull mode the l1_diff_c trace column carries the simplex
    weight diffs.
    """
    header = {
        "seed": record.seed,
        "mode": record.mode,
        "config": asdict(record.config),
        "bounds": asdict(bounds) if not isinstance(bounds, dict) else bounds,
        "fingerprint": _fingerprint(),
    }
    writer.write_json(f"{reldir}/header.json", header)
    writer.write_csv(f"{reldir}/final.csv", ["vector", "index", "value"], _final_rows(record.final))
    if record.trace.size:
        writer.write_csv(
            f"{reldir}/trace.csv",
            ["t", "l1_diff_c", "l1_diff_u", "l1_diff_mu"],
            [tuple(row) for row in record.trace],
        )
    if record.gaps.size:
        writer.write_csv(
            f"{reldir}/gap.csv", ["t", "gap"], [tuple(row) for row in record.gaps]
        )


# ---------------------------------------------------------------------------
# Problem assembly from config


@dataclass(frozen=True, eq=False)
class BuiltEnvironment:
    mdp: Mdp
    scale: object | None = None
    features: np.ndarray | None = None
    config: InventoryConfig | GridworldConfig | None = None


def build_environment(env_cfg) -> BuiltEnvironment:
    if isinstance(env_cfg, InventoryConfig):
        mdp, scale, features = build_inventory_mdp(env_cfg)
        return BuiltEnvironment(mdp=mdp, scale=scale, features=features, config=env_cfg)
    mdp = build_gridworld_mdp(env_cfg)
    return BuiltEnvironment(mdp=mdp, config=env_cfg)


def build_expert(env: BuiltEnvironment, spec: ExpertSpec) -> np.ndarray:
    if spec.kind == "optimal":
        return solve_forward_optimal(env.mdp, tol=1e-10).occupancy.mu
    if spec.kind == "misspecified":
        return make_misspecified_expert(env.config, spec.params).mu
    if spec.kind == "earlystop":
        return make_earlystop_expert(env.mdp, spec.iters).mu
    raise ConfigError(f"unknown expert kind {spec.kind!r}")


def build_prior(env: BuiltEnvironment, spec: PriorSpec, base_seed: int) -> np.ndarray:
    if spec.kind == "exact":
        return env.mdp.cost.copy()
    if spec.kind == "zero":
        return np.zeros(env.mdp.n_pairs)
    if spec.kind == "params":
        proxy = env.scale.to_normalized(env.features @ np.array(spec.params))
        return np.clip(proxy, -1.0, 1.0)
    if spec.kind == "partial":
        return make_partial_prior(env.config, spec.fraction, _aux_rng(base_seed, 3 << 32))
    raise ConfigError(f"prior kind {spec.kind!r} is not a single fixed prior")


def _smd_config(algo: AlgorithmSpec, problem: RlfdProblem) -> SmdConfig:
    if algo.step_rule == "theorem":
        preset, t_min = step_sizes_from_theorem(problem, algo.epsilon)
        return SmdConfig(
            epsilon=algo.epsilon,
            eta_cu=preset.eta_cu,
            eta_mu=preset.eta_mu,
            T=algo.T if algo.T > 0 else t_min,
            estimator_mode=algo.estimator_mode,
            gap_every=algo.gap_every,
            trace_every=algo.trace_every,
            random_init=algo.random_init,
        )
    return SmdConfig(
        epsilon=algo.epsilon,
        eta_cu=algo.eta_cu,
        eta_mu=algo.eta_mu,
        T=algo.T,
        estimator_mode=algo.estimator_mode,
        gap_every=algo.gap_every,
        trace_every=algo.trace_every,
        random_init=algo.random_init,
    )


def evaluate_outputs(
    problem: RlfdProblem, aggregate: SaddleIterate, true_cost: np.ndarray
) -> dict:
    """Expert/apprentice/optimal evaluations under the true and learned costs."""
    mdp = problem.mdp
    pi_a = policy_from_occupancy(
        OccupancyMeasure(aggregate.mu, mdp.n_states, mdp.n_actions)
    )
    _, rho_true_apprentice = policy_evaluation(mdp, pi_a, true_cost)
    rho_true_expert = float(problem.expert_mu @ true_cost)
    rho_true_optimal = solve_forward_optimal(mdp, true_cost, tol=1e-10).rho
    c_learned = aggregate.c
    _, rho_learned_apprentice = policy_evaluation(mdp, pi_a, c_learned)
    rho_learned_expert = float(problem.expert_mu @ c_learned)
    rho_learned_optimal = solve_forward_optimal(mdp, c_learned, tol=1e-10).rho
    c_dist = float(np.linalg.norm(c_learned - problem.c_hat))
    prop5_lhs = (
        problem.alpha * float(np.sum((c_learned - problem.c_hat) ** 2))
        + rho_learned_expert
        - rho_learned_apprentice
    )
    return {
        "rho_true_expert": rho_true_expert,
        "rho_true_apprentice": rho_true_apprentice,
        "rho_true_optimal": rho_true_optimal,
        "rho_learned_expert": rho_learned_expert,
        "rho_learned_apprentice": rho_learned_apprentice,
        "rho_learned_optimal": rho_learned_optimal,
        "c_dist": c_dist,
        "prop5_lhs": prop5_lhs,
    }


def _grid_argmax_actions(mu: np.ndarray, n_states: int, n_actions: int) -> np.ndarray:
    return mu.reshape(n_states, n_actions).argmax(axis=1)


def _inventory_orders(mu: np.ndarray, capacity: int) -> np.ndarray:
    orders = mu.reshape(capacity + 1, capacity + 1).argmax(axis=1)
    return np.minimum(orders, capacity - np.arange(capacity + 1))


# ---------------------------------------------------------------------------
# Experiment kinds


def _run_point(
    env: BuiltEnvironment,
    c_hat: np.ndarray,
    expert_mu: np.ndarray,
    alpha: float,
    algo: AlgorithmSpec,
    seeds: list[int],
    workers: int,
    hull_basis: np.ndarray | None = None,
):
    problem = RlfdProblem(
        env.mdp, expert_mu, c_hat=c_hat, alpha=alpha, cost_basis=hull_basis
    )
    config = _smd_config(algo, problem)
    records = execute_runs(problem, config, seeds, workers, hull=hull_basis is not None)
    return problem, records, aggregate_final(records)


def _write_point_records(writer, reldir, records, problem):
    bounds = estimator_bounds(problem)
    for i, record in enumerate(records):
        write_run_record(writer, f"{reldir}runs/run_{i:04d}", record, bounds)


def _manifest_payload(cfg: ExperimentConfig, problem: RlfdProblem | None) -> dict:
    payload = {
        "kind": cfg.kind,
        "base_seed": cfg.base_seed,
        "config": cfg.raw or {},
        "fingerprint": _fingerprint(),
        "environment_type": "inventory"
        if isinstance(cfg.environment, InventoryConfig)
        else "gridworld",
    }
    if isinstance(cfg.environment, GridworldConfig):
        payload["grid"] = {"height": cfg.environment.height, "width": cfg.environment.width}
    if isinstance(cfg.environment, InventoryConfig):
        payload["capacity"] = cfg.environment.capacity
    if problem is not None:
        payload["bounds"] = asdict(estimator_bounds(problem))
    return payload


def _policy_grid_rows_inventory(env, expert_mu, aggregate):
    capacity = env.config.capacity
    optimal = solve_forward_optimal(env.mdp, tol=1e-10)
    opt_orders = _inventory_orders(optimal.occupancy.mu, capacity)
    expert_orders = _inventory_orders(expert_mu, capacity)
    apprentice_orders = _inventory_orders(aggregate.mu, capacity)
    return [
        (s, opt_orders[s], expert_orders[s], apprentice_orders[s])
        for s in range(capacity + 1)
    ]


def _policy_grid_rows_gridworld(env, expert_mu, aggregate):
    cfg = env.config
    optimal = solve_forward_optimal(env.mdp, tol=1e-10)
    opt_actions = _grid_argmax_actions(optimal.occupancy.mu, env.mdp.n_states, 4)
    expert_actions = _grid_argmax_actions(expert_mu, env.mdp.n_states, 4)
    apprentice_actions = _grid_argmax_actions(aggregate.mu, env.mdp.n_states, 4)
    rows = []
    for r in range(cfg.height):
        for c in range(cfg.width):
            s = r * cfg.width + c
            rows.append((r, c, opt_actions[s], expert_actions[s], apprentice_actions[s]))
    return rows


def _heatmap_rows(cfg: GridworldConfig, values: np.ndarray, action: int):
    rows = []
    for r in range(cfg.height):
        for c in range(cfg.width):
            s = r * cfg.width + c
            rows.append((r, c, values[s * 4 + action]))
    return rows


def _run_single(cfg, writer, workers):
    env = build_environment(cfg.environment)
    expert_mu = build_expert(env, cfg.expert)
    c_hat = build_prior(env, cfg.prior, cfg.base_seed)
    seeds = _SeedSequencer(cfg.base_seed).block(cfg.algorithm.runs)
    problem, records, aggregate = _run_point(
        env, c_hat, expert_mu, cfg.algorithm.alpha, cfg.algorithm, seeds, workers
    )
    _write_point_records(writer, "", records, problem)
    writer.write_csv("final.csv", ["vector", "index", "value"], _final_rows(aggregate))

    if isinstance(cfg.environment, InventoryConfig):
        writer.write_csv(
            "policy_grid.csv",
            ["state", "optimal_order", "expert_order", "apprentice_order"],
            _policy_grid_rows_inventory(env, expert_mu, aggregate),
        )
        recovered = recover_inventory_params(aggregate.c, env.features, env.scale)
        writer.write_csv(
            "recovered_params.csv",
            ["order_cost", "holding_cost", "sell_price"],
            [recovered],
        )
    else:
        writer.write_csv(
            "policy_grid.csv",
            ["row", "col", "optimal_action", "expert_action", "apprentice_action"],
            _policy_grid_rows_gridworld(env, expert_mu, aggregate),
        )
    summary = evaluate_outputs(problem, aggregate, env.mdp.cost)
    summary["alpha"] = cfg.algorithm.alpha
    writer.write_json("summary.json", summary)
    if records[0].trace.size:
        curve = aggregate_curves([r.trace for r in records])
        writer.write_csv(
            "trace.csv",
            ["t", "l1_diff_c", "l1_diff_u", "l1_diff_mu"],
            [tuple(row) for row in curve],
        )
    if records[0].gaps.size:
        curve = aggregate_curves([r.gaps for r in records])
        writer.write_csv("gap.csv", ["t", "gap"], [tuple(row) for row in curve])
    return problem


def _run_alpha_sweep(cfg, writer, workers):
    env = build_environment(cfg.environment)
    expert_mu = build_expert(env, cfg.expert)
    c_hat = build_prior(env, cfg.prior, cfg.base_seed)
    seq = _SeedSequencer(cfg.base_seed)
    rows = []
    problem = None
    for k, alpha in enumerate(cfg.sweep.alphas):
        seeds = seq.block(cfg.algorithm.runs)
        problem, records, aggregate = _run_point(
            env, c_hat, expert_mu, alpha, cfg.algorithm, seeds, workers
        )
        reldir = f"alpha_{k:02d}/"
        _write_point_records(writer, reldir, records, problem)
        writer.write_csv(
            f"{reldir}final.csv", ["vector", "index", "value"], _final_rows(aggregate)
        )
        summary = evaluate_outputs(problem, aggregate, env.mdp.cost)
        rows.append(
            (
                alpha,
                summary["c_dist"],
                summary["rho_true_expert"],
                summary["rho_true_apprentice"],
                summary["rho_true_optimal"],
                summary["rho_learned_expert"],
                summary["rho_learned_apprentice"],
                summary["rho_learned_optimal"],
                summary["prop5_lhs"],
            )
        )
    writer.write_csv(
        "alpha_sweep.csv",
        [
            "alpha", "c_dist", "rho_true_expert", "rho_true_apprentice",
            "rho_true_optimal", "rho_learned_expert", "rho_learned_apprentice",
            "rho_learned_optimal", "prop5_lhs",
        ],
        rows,
    )
    return problem


def _run_prior_perturbation(cfg, writer, workers):
    env = build_environment(cfg.environment)
    expert_mu = build_expert(env, cfg.expert)
    spec = cfg.prior
    zetas = np.linspace(spec.zeta_min, spec.zeta_max, spec.zeta_points)
    seq = _SeedSequencer(cfg.base_seed)
    rows = []
    problem = None
    for k, zeta in enumerate(zetas):
        recovered_acc = []
        l1_acc = []
        for rep in range(spec.reps):
            noise_rng = _aux_rng(cfg.base_seed, (1 << 32) + k * 1024 + rep)
            _, c_hat = perturb_inventory_prior(env.config, float(zeta), noise_rng)
            seeds = seq.block(cfg.algorithm.runs)
            problem, records, aggregate = _run_point(
                env, c_hat, expert_mu, cfg.algorithm.alpha, cfg.algorithm, seeds, workers
            )
            reldir = f"zeta_{k:03d}/rep_{rep}/"
            _write_point_records(writer, reldir, records, problem)
            writer.write_csv(
                f"{reldir}final.csv", ["vector", "index", "value"], _final_rows(aggregate)
            )
            recovered_acc.append(
                recover_inventory_params(aggregate.c, env.features, env.scale)
            )
            l1_acc.append(float(np.abs(aggregate.c - env.mdp.cost).sum()))
        mean_params = np.mean(np.array(recovered_acc), axis=0)
        rows.append(
            (zeta, mean_params[0], mean_params[1], mean_params[2], float(np.mean(l1_acc)))
        )
    writer.write_csv(
        "zeta_sweep.csv",
        ["zeta", "recovered_order_cost", "recovered_holding_cost",
         "recovered_sell_price", "l1_distance"],
        rows,
    )
    return problem


def _hull_basis(features: np.ndarray) -> np.ndarray:
    return features / np.abs(features).max(axis=0, keepdims=True)


def _run_hull_comparison(cfg, writer, workers):
    env = build_environment(cfg.environment)
    expert_mu = build_expert(env, cfg.expert)
    c_hat = build_prior(env, cfg.prior, cfg.base_seed)
    # Exact gap evaluation is defined for the box class only; never in hull runs.
    algo = replace(
        cfg.algorithm,
        alpha=0.0,
        trace_every=cfg.algorithm.trace_every or 10,
        gap_every=0,
    )
    seq = _SeedSequencer(cfg.base_seed)

    problem = None
    for mode, basis in (("box", None), ("hull", _hull_basis(env.features))):
        seeds = seq.block(algo.runs)
        problem, records, aggregate = _run_point(
            env, c_hat, expert_mu, 0.0, algo, seeds, workers, hull_basis=basis
        )
        _write_point_records(writer, f"{mode}/", records, problem)
        writer.write_csv(
            f"{mode}/final.csv", ["vector", "index", "value"], _final_rows(aggregate)
        )
        curve = aggregate_curves([r.trace for r in records])
        writer.write_csv(
            f"trace_{mode}.csv",
            ["t", "l1_diff_c", "l1_diff_u", "l1_diff_mu"],
            [tuple(row) for row in curve],
        )

    rows = []
    for m in cfg.sweep.capacities:
        cap_cfg = InventoryConfig(
            capacity=m,
            demand_mean=cfg.environment.demand_mean,
            order_cost=cfg.environment.order_cost,
            holding_cost=cfg.environment.holding_cost,
            sell_price=cfg.environment.sell_price,
            gamma=cfg.environment.gamma,
        )
        cap_env = build_environment(cap_cfg)
        cap_expert = build_expert(cap_env, ExpertSpec("optimal"))
        cap_prior = np.zeros(cap_env.mdp.n_pairs)
        evals = {}
        for mode, basis in (("box", None), ("hull", _hull_basis(cap_env.features))):
            seeds = seq.block(algo.runs)
            cap_problem, records, aggregate = _run_point(
                cap_env, cap_prior, cap_expert, 0.0,
                replace(algo, trace_every=0), seeds, workers, hull_basis=basis,
            )
            _write_point_records(writer, f"capacity_{m:02d}/{mode}/", records, cap_problem)
            evals[mode] = evaluate_outputs(cap_problem, aggregate, cap_env.mdp.cost)
        rows.append(
            (
                m,
                evals["box"]["rho_true_apprentice"],
                evals["hull"]["rho_true_apprentice"],
                evals["box"]["rho_true_expert"],
                evals["box"]["rho_true_optimal"],
            )
        )
    writer.write_csv(
        "hull_compare.csv",
        ["capacity", "rho_true_apprentice_box", "rho_true_apprentice_hull",
         "rho_true_expert", "rho_true_optimal"],
        rows,
    )
    return problem


def _run_gridworld_regularization(cfg, writer, workers):
    env = build_environment(cfg.environment)
    expert_mu = build_expert(env, cfg.expert)
    c_hat = build_prior(env, cfg.prior, cfg.base_seed)
    seq = _SeedSequencer(cfg.base_seed)
    problem = None
    summaries = {}
    for k, alpha in enumerate(cfg.sweep.alphas):
        seeds = seq.block(cfg.algorithm.runs)
        problem, records, aggregate = _run_point(
            env, c_hat, expert_mu, alpha, cfg.algorithm, seeds, workers
        )
        reldir = f"alpha_{k:02d}/"
        _write_point_records(writer, reldir, records, problem)
        writer.write_csv(
            f"{reldir}final.csv", ["vector", "index", "value"], _final_rows(aggregate)
        )
        for a, name in enumerate(GRID_ACTION_NAMES):
            writer.write_csv(
                f"{reldir}cost_heatmap_{name}.csv",
                ["row", "col", "value"],
                _heatmap_rows(env.config, aggregate.c, a),
            )
        writer.write_csv(
            f"{reldir}policy_grid.csv",
            ["row", "col", "optimal_action", "expert_action", "apprentice_action"],
            _policy_grid_rows_gridworld(env, expert_mu, aggregate),
        )
        summaries[f"alpha_{k:02d}"] = {
            "alpha": alpha,
            **evaluate_outputs(problem, aggregate, env.mdp.cost),
        }
    writer.write_json("summary.json", summaries)
    return problem


def _run_trace_kind(cfg, writer, workers, gap: bool):
    env = build_environment(cfg.environment)
    expert_mu = build_expert(env, cfg.expert)
    c_hat = build_prior(env, cfg.prior, cfg.base_seed)
    algo = cfg.algorithm
    if gap and algo.gap_every == 0:
        algo = replace(algo, gap_every=25)
    if not gap and algo.trace_every == 0:
        algo = replace(algo, trace_every=max(1, algo.T // 200))
    seq = _SeedSequencer(cfg.base_seed)
    problem = None
    for k, alpha in enumerate(cfg.sweep.alphas):
        seeds = seq.block(algo.runs)
        problem, records, aggregate = _run_point(
            env, c_hat, expert_mu, alpha, algo, seeds, workers
        )
        reldir = f"alpha_{k:02d}/"
        _write_point_records(writer, reldir, records, problem)
        writer.write_csv(
            f"{reldir}final.csv", ["vector", "index", "value"], _final_rows(aggregate)
        )
        if gap:
            curve = aggregate_curves([r.gaps for r in records])
            writer.write_csv(
                f"{reldir}gap.csv", ["t", "gap"], [tuple(row) for row in curve]
            )
        else:
            curve = aggregate_curves([r.trace for r in records])
            writer.write_csv(
                f"{reldir}trace.csv",
                ["t", "l1_diff_c", "l1_diff_u", "l1_diff_mu"],
                [tuple(row) for row in curve],
            )
    return problem


def _random_grid(cfg: ExperimentConfig, index: int) -> GridworldConfig:
    base = cfg.environment
    rng = _aux_rng(cfg.base_seed, (2 << 32) + index)
    cells = [(r, c) for r in range(base.height) for c in range(base.width)]
    count = cfg.sweep.obstacles_per_grid + cfg.sweep.goals_per_grid
    chosen = rng.choice(len(cells), size=count, replace=False)
    obstacles = tuple(cells[i] for i in chosen[: cfg.sweep.obstacles_per_grid])
    goals = tuple(cells[i] for i in chosen[cfg.sweep.obstacles_per_grid :])
    return GridworldConfig(
        height=base.height,
        width=base.width,
        obstacles=obstacles,
        goals=goals,
        wind_prob=base.wind_prob,
        gamma=base.gamma,
        goal_absorbing=base.goal_absorbing,
    )


def _run_grid_gallery(cfg, writer, workers):
    seq = _SeedSequencer(cfg.base_seed)
    problem = None
    for g in range(cfg.sweep.n_grids):
        grid_cfg = _random_grid(cfg, g)
        env = build_environment(grid_cfg)
        expert_mu = build_expert(env, cfg.expert)
        c_hat = np.zeros(env.mdp.n_pairs)
        seeds = seq.block(cfg.algorithm.runs)
        problem, records, aggregate = _run_point(
            env, c_hat, expert_mu, cfg.algorithm.alpha, cfg.algorithm, seeds, workers
        )
        reldir = f"grid_{g}/"
        _write_point_records(writer, reldir, records, problem)
        writer.write_json(
            f"{reldir}grid.json",
            {"obstacles": list(map(list, grid_cfg.obstacles)),
             "goals": list(map(list, grid_cfg.goals))},
        )
        writer.write_csv(
            f"{reldir}final.csv", ["vector", "index", "value"], _final_rows(aggregate)
        )
        writer.write_csv(
            f"{reldir}policy_grid.csv",
            ["row", "col", "optimal_action", "expert_action", "apprentice_action"],
            _policy_grid_rows_gridworld(env, expert_mu, aggregate),
        )
        writer.write_csv(
            f"{reldir}cost_heatmap_down.csv",
            ["row", "col", "value"],
            _heatmap_rows(grid_cfg, aggregate.c, 1),
        )
    return problem


_KIND_RUNNERS = {
    "single": _run_single,
    "alpha_sweep": _run_alpha_sweep,
    "prior_perturbation": _run_prior_perturbation,
    "hull_comparison": _run_hull_comparison,
    "gridworld_regularization": _run_gridworld_regularization,
    "convergence_trace": lambda cfg, w, k: _run_trace_kind(cfg, w, k, gap=False),
    "gap_trace": lambda cfg, w, k: _run_trace_kind(cfg, w, k, gap=True),
    "grid_gallery": _run_grid_gallery,
}


def run_experiment(
    cfg: ExperimentConfig, out_dir: str | Path | None = None, workers: int = 1
) -> Path:
    """Execute an experiment and write its artifact directory.

    Returns the artifact root.  Rerunning with the same config, seed, and
    any worker count writes byte-identical files.
    """
    if out_dir is None:
        out_dir = cfg.output_dir
    if out_dir is None:
        raise ConfigError("output_dir: missing (set it in the config or pass --out)")
    writer = ArtifactWriter(Path(out_dir))
    runner = _KIND_RUNNERS[cfg.kind]
    problem = runner(cfg, writer, workers)
    writer.write_manifest(_manifest_payload(cfg, problem))
    return writer.root


def export_mdp(cfg: ExperimentConfig) -> str:
    """Serialize the configured environment's MDP to its JSON format."""
    return mdp_to_json(build_environment(cfg.environment).mdp)
