"""Figure regeneration from persisted experiment artifacts.

Reads only the manifest and its CSV files; all numerical work happened in
the experiment run that produced them.
"""

__version__ = "0.1.0"

FIGURE_KINDS = (
    "policy_grid",
    "cost_heatmap",
    "line_sweep",
    "dual_axis_tradeoff",
    "trace_panel",
)
