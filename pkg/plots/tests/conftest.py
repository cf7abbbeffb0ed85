import subprocess
import sys
from pathlib import Path

import pytest


def run_primary(config_text: str, tmp_dir: Path, name: str) -> Path:
    """Produce a desk-scale artifact directory through the rlfd CLI."""
    config_path = tmp_dir / f"{name}.toml"
    config_path.write_text(config_text)
    out_dir = tmp_dir / name
    proc = subprocess.run(
        [sys.executable, "-m", "rlfd.cli", "run", str(config_path), "--out", str(out_dir)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return out_dir


INVENTORY_SINGLE = """
kind = "single"
base_seed = 7

[environment]
type = "inventory"

[expert]
type = "misspecified"
order_cost = 5.0
holding_cost = 8.0
sell_price = 15.0

[prior]
type = "params"
order_cost = 4.0
holding_cost = 2.0
sell_price = 14.0

[algorithm]
alpha = 0.1
T = 200
runs = 2
random_init = true
"""

GRIDWORLD_REGULARIZATION = """
kind = "gridworld_regularization"
base_seed = 8

[environment]
type = "gridworld"
height = 4
width = 4
obstacles = [[1, 1], [2, 2]]
goals = [[3, 3]]

[expert]
type = "earlystop"
iters = 2

[prior]
type = "partial"
fraction = 0.5

[algorithm]
T = 200
runs = 2
random_init = true

[sweep]
alphas = [0.1, 0.0]
"""

ALPHA_SWEEP = """
kind = "alpha_sweep"
base_seed = 9

[environment]
type = "inventory"
capacity = 6

[expert]
type = "optimal"

[prior]
type = "exact"

[algorithm]
T = 200
runs = 2

[sweep]
alphas = [0.0, 0.25]
"""

GAP_TRACE = """
kind = "gap_trace"
base_seed = 10

[environment]
type = "gridworld"
height = 3
width = 3
obstacles = [[1, 1]]
goals = [[2, 2]]

[expert]
type = "optimal"

[prior]
type = "zero"

[algorithm]
T = 200
runs = 2
gap_every = 50
trace_every = 50

[sweep]
alphas = [0.1]
"""


@pytest.fixture(scope="session")
def artifact_dirs(tmp_path_factory):
    base = tmp_path_factory.mktemp("artifacts")
    return {
        "inventory": run_primary(INVENTORY_SINGLE, base, "inventory"),
        "gridworld": run_primary(GRIDWORLD_REGULARIZATION, base, "gridworld"),
        "alpha": run_primary(ALPHA_SWEEP, base, "alpha"),
        "traces": run_primary(GAP_TRACE, base, "traces"),
    }
