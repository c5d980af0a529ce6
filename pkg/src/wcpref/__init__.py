"""Weak-constraint preference theories learned from pairwise rankers."""

from wcpref.asp import (
    Atom,
    CostVector,
    Theory,
    WeakConstraint,
    classify_pair,
    compare,
    evaluate_cost,
    parse_theory,
    rank_items,
    render_theory,
)
from wcpref.dataset import FeatureSpec, Item, PairSample, Schema
from wcpref.learner import (
    LearnBudget,
    LearnResult,
    ModeBias,
    brute_force_learn,
    expand_mode_bias,
    learn,
    orderings_from_labels,
    search_backend,
)
from wcpref.metrics import fidelity_report, gt_theory, mmd
from wcpref.pipeline import (
    ExperimentConfig,
    OracleSettings,
    PcaSettings,
    load_manifest,
    report,
    run_classifier,
    run_global,
    run_local,
)

__version__ = "0.1.0"

__all__ = [
    "Atom",
    "CostVector",
    "Theory",
    "WeakConstraint",
    "classify_pair",
    "compare",
    "evaluate_cost",
    "parse_theory",
    "rank_items",
    "render_theory",
    "FeatureSpec",
    "Item",
    "PairSample",
    "Schema",
    "LearnBudget",
    "LearnResult",
    "ModeBias",
    "brute_force_learn",
    "expand_mode_bias",
    "learn",
    "orderings_from_labels",
    "search_backend",
    "fidelity_report",
    "gt_theory",
    "mmd",
    "ExperimentConfig",
    "OracleSettings",
    "PcaSettings",
    "load_manifest",
    "report",
    "run_classifier",
    "run_global",
    "run_local",
    "__version__",
]
