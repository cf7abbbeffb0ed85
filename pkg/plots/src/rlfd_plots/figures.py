"""The five figure kinds, rendered deterministically from CSV artifacts.

Every text cell carries a structured gid (for example
``optimal-s3-order11``), so emitted SVGs can be checked mechanically.
Re-rendering the same artifacts produces byte-identical output: fonts, DPI,
and hash salts are pinned and timestamps are stripped.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from rlfd_plots.manifest import Manifest, SchemaError, read_table, require_columns

matplotlib.rcParams.update(
    {
        "svg.fonttype": "none",
        "svg.hashsalt": "rlfd-plot",
        "figure.dpi": 100,
        "savefig.dpi": 100,
        "font.family": "DejaVu Sans",
    }
)

ACTION_GLYPHS = {0: "↑", 1: "↓", 2: "←", 3: "→"}
ACTION_NAMES = {0: "up", 1: "down", 2: "left", 3: "right"}


def _save(fig, out_path: Path, fmt: str):
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "svg":
        fig.savefig(out_path, format="svg", metadata={"Date": None})
    else:
        fig.savefig(out_path, format="png", metadata={"Software": None})
    plt.close(fig)


def _is_aggregate(relpath: str) -> bool:
    return "runs/" not in relpath


def _candidates(manifest: Manifest, kind: str) -> list[str]:
    paths = [p for p in manifest.csv_paths() if _is_aggregate(p)]
    if kind == "policy_grid":
        return [p for p in paths if Path(p).name == "policy_grid.csv"]
    if kind == "cost_heatmap":
        return [p for p in paths if Path(p).name.startswith("cost_heatmap_")]
    if kind == "line_sweep":
        return [p for p in paths if Path(p).name in ("zeta_sweep.csv", "alpha_sweep.csv")]
    if kind == "dual_axis_tradeoff":
        return [p for p in paths if Path(p).name == "alpha_sweep.csv"]
    if kind == "trace_panel":
        return [
            p for p in paths if Path(p).name in ("trace.csv", "gap.csv")
            or Path(p).name.startswith("trace_")
        ]
    raise SchemaError(f"unknown figure kind {kind!r}")


def _output_name(kind: str, relpath: str, fmt: str) -> str:
    stem = relpath[:-4].replace("/", "__")
    return f"{kind}__{stem}.{fmt}"


def _render_policy_grid_inventory(relpath, table, fig_title):
    states = [int(s) for s in table["state"]]
    panels = [
        ("optimal", [int(v) for v in table["optimal_order"]]),
        ("expert", [int(v) for v in table["expert_order"]]),
        ("apprentice", [int(v) for v in table["apprentice_order"]]),
    ]
    n = len(states)
    side = math.ceil(math.sqrt(n))
    vmax = max(1, max(max(vals) for _, vals in panels))
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.8))
    for ax, (name, orders) in zip(axes, panels):
        img = np.full((side, side), np.nan)
        for s, order in zip(states, orders):
            img[s // side, s % side] = order
        ax.imshow(img, cmap="viridis", vmin=0, vmax=vmax)
        for s, order in zip(states, orders):
            text = ax.text(
                s % side, s // side, str(order),
                ha="center", va="center", color="white", fontsize=9,
            )
            text.set_gid(f"{name}-s{s}-order{order}")
        ax.set_title(name)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.suptitle(fig_title)
    return fig


def _render_policy_grid_gridworld(relpath, table, fig_title):
    rows = [int(r) for r in table["row"]]
    cols = [int(c) for c in table["col"]]
    height, width = max(rows) + 1, max(cols) + 1
    panels = [
        ("optimal", [int(a) for a in table["optimal_action"]]),
        ("expert", [int(a) for a in table["expert_action"]]),
        ("apprentice", [int(a) for a in table["apprentice_action"]]),
    ]
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.8))
    for ax, (name, actions) in zip(axes, panels):
        ax.imshow(np.zeros((height, width)), cmap="Greys", vmin=0, vmax=1)
        for r, c, a in zip(rows, cols, actions):
            text = ax.text(
                c, r, ACTION_GLYPHS.get(a, "?"),
                ha="center", va="center", fontsize=11,
            )
            text.set_gid(f"{name}-r{r}c{c}-{ACTION_NAMES.get(a, a)}")
        ax.set_title(name)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.suptitle(fig_title)
    return fig


def render_policy_grid(manifest, relpath, fmt, out_dir) -> Path:
    table = read_table(manifest, relpath)
    if "state" in table:
        require_columns(
            relpath, table,
            ["state", "optimal_order", "expert_order", "apprentice_order"],
        )
        fig = _render_policy_grid_inventory(relpath, table, relpath)
    else:
        require_columns(
            relpath, table,
            ["row", "col", "optimal_action", "expert_action", "apprentice_action"],
        )
        fig = _render_policy_grid_gridworld(relpath, table, relpath)
    out_path = Path(out_dir) / _output_name("policy_grid", relpath, fmt)
    _save(fig, out_path, fmt)
    return out_path


def render_cost_heatmap(manifest, relpath, fmt, out_dir) -> Path:
    table = read_table(manifest, relpath)
    require_columns(relpath, table, ["row", "col", "value"])
    rows = [int(r) for r in table["row"]]
    cols = [int(c) for c in table["col"]]
    height, width = max(rows) + 1, max(cols) + 1
    img = np.zeros((height, width))
    for r, c, v in zip(rows, cols, table["value"]):
        img[r, c] = v
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(img, cmap="RdBu_r", vmin=-1.0, vmax=1.0)
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(relpath)
    ax.set_xticks([])
    ax.set_yticks([])
    out_path = Path(out_dir) / _output_name("cost_heatmap", relpath, fmt)
    _save(fig, out_path, fmt)
    return out_path


def render_line_sweep(manifest, relpath, fmt, out_dir) -> Path:
    table = read_table(manifest, relpath)
    columns = list(table)
    x_name = columns[0]
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    for name in columns[1:]:
        ax.plot(table[x_name], table[name], marker="o", markersize=3, label=name)
    ax.set_xlabel(x_name)
    ax.legend(fontsize=7)
    ax.set_title(relpath)
    out_path = Path(out_dir) / _output_name("line_sweep", relpath, fmt)
    _save(fig, out_path, fmt)
    return out_path


def render_dual_axis_tradeoff(manifest, relpath, fmt, out_dir) -> Path:
    table = read_table(manifest, relpath)
    require_columns(
        relpath, table,
        ["alpha", "c_dist", "rho_learned_expert", "rho_learned_apprentice",
         "rho_learned_optimal"],
    )
    alphas = table["alpha"]
    fig, ax = plt.subplots(figsize=(5.6, 3.8))
    for name in ("rho_learned_expert", "rho_learned_apprentice", "rho_learned_optimal"):
        ax.plot(alphas, table[name], marker="o", markersize=3, label=name)
    ax.set_xlabel("alpha")
    ax.set_ylabel("expected discounted cost (learned)")
    twin = ax.twinx()
    twin.plot(alphas, table["c_dist"], color="black", linestyle="--", label="c_dist")
    twin.set_ylabel("distance to proxy cost")
    handles, labels = ax.get_legend_handles_labels()
    h2, l2 = twin.get_legend_handles_labels()
    ax.legend(handles + h2, labels + l2, fontsize=7)
    ax.set_title(relpath)
    out_path = Path(out_dir) / _output_name("dual_axis_tradeoff", relpath, fmt)
    _save(fig, out_path, fmt)
    return out_path


def render_trace_panel(manifest, relpath, fmt, out_dir) -> Path:
    table = read_table(manifest, relpath)
    require_columns(relpath, table, ["t"])
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    for name in table:
        if name == "t":
            continue
        ax.plot(table["t"], table[name], label=name)
    ax.set_xlabel("t")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    ax.set_title(relpath)
    out_path = Path(out_dir) / _output_name("trace_panel", relpath, fmt)
    _save(fig, out_path, fmt)
    return out_path


_RENDERERS = {
    "policy_grid": render_policy_grid,
    "cost_heatmap": render_cost_heatmap,
    "line_sweep": render_line_sweep,
    "dual_axis_tradeoff": render_dual_axis_tradeoff,
    "trace_panel": render_trace_panel,
}


def render(manifest: Manifest, kind: str, out_dir: str | Path, fmt: str = "svg"):
    """Render every artifact matching a figure kind; returns written paths."""
    if fmt not in ("svg", "png"):
        raise SchemaError(f"unsupported format {fmt!r}")
    if kind not in _RENDERERS:
        raise SchemaError(f"unknown figure kind {kind!r}")
    written = []
    for relpath in _candidates(manifest, kind):
        written.append(_RENDERERS[kind](manifest, relpath, fmt, out_dir))
    return written


def available_kinds(manifest: Manifest) -> list[str]:
    return [kind for kind in _RENDERERS if _candidates(manifest, kind)]
