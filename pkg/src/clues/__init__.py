"""Hierarchical flat clustering with layer-based soft must-link / cannot-link constraints."""

__version__ = "0.1.0"

from .coarsening import CoarseningConfig, local_variation_pass, merge_step_constrained, run_step1
from .constraints import (PenaltyWeights, closed_form_update, constraint_status, lift_constraints,
                          solve_soft_qp)
from .cuts import extract_flat_hierarchy, optimal_cut
from .errors import CluesError, ConvergenceError, DegenerateInputError, ParseError, ValidationError
from .ingest import CorpusConfig, build_vocabulary, cooccurrence_distance, load_distance_csv, save_distance_csv
from .linkage import LinkageMethod, nn_chain_linkage
from .metrics import EvalReport, compare_runs, dasgupta_cost, violation_rate
from .model import (ConstraintLayer, ConstraintProgram, DataPointSet, Dendrogram, DistanceMatrix, FlatHierarchy,
                    LaplacianView, Partition, normalize_distances)

__all__ = [
    "CluesError",
    "CoarseningConfig",
    "ConstraintLayer",
    "ConstraintProgram",
    "ConvergenceError",
    "CorpusConfig",
    "DataPointSet",
    "DegenerateInputError",
    "Dendrogram",
    "DistanceMatrix",
    "EvalReport",
    "FlatHierarchy",
    "LaplacianView",
    "LinkageMethod",
    "ParseError",
    "Partition",
    "PenaltyWeights",
    "ValidationError",
    "build_vocabulary",
    "closed_form_update",
    "compare_runs",
    "constraint_status",
    "cooccurrence_distance",
    "dasgupta_cost",
    "extract_flat_hierarchy",
    "lift_constraints",
    "load_distance_csv",
    "local_variation_pass",
    "merge_step_constrained",
    "nn_chain_linkage",
    "normalize_distances",
    "optimal_cut",
    "run_step1",
    "save_distance_csv",
    "solve_soft_qp",
    "violation_rate",
]
