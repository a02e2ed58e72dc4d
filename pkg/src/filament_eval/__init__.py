"""Evaluation metrics for 3D instance segmentations of thin, overlapping filaments."""

from .localize import BG, PairTable, build_pair_table, cl_dice, cl_precision, cl_recall
from .matching import (
    FM_THRESHOLD,
    FS_THRESHOLD,
    CoverageMatching,
    ManyToManyMatching,
    OneToOneMatching,
    brute_force_matching_oracle,
    coverage_assign,
    greedy_many_to_many,
    greedy_one_to_one,
)
from .metrics import THRESHOLDS, SplitScores, ThresholdSweep, aggregate_combined, score_S
from .report import EvalReport, evaluate, evaluate_split, summarize_runs
from .skeleton import Skeleton, skeleton_cache, skeletonize
from .volume import (
    GridShape,
    InstanceSet,
    LabeledImage,
    Labeling,
    VoxelMask,
    background_mask,
    connected_components_26,
    intersect_count,
    overlapping_gt_ids,
)

__all__ = [
    "BG",
    "FM_THRESHOLD",
    "FS_THRESHOLD",
    "THRESHOLDS",
    "CoverageMatching",
    "EvalReport",
    "GridShape",
    "InstanceSet",
    "LabeledImage",
    "Labeling",
    "ManyToManyMatching",
    "OneToOneMatching",
    "PairTable",
    "Skeleton",
    "SplitScores",
    "ThresholdSweep",
    "VoxelMask",
    "aggregate_combined",
    "background_mask",
    "brute_force_matching_oracle",
    "build_pair_table",
    "cl_dice",
    "cl_precision",
    "cl_recall",
    "connected_components_26",
    "coverage_assign",
    "evaluate",
    "evaluate_split",
    "greedy_many_to_many",
    "greedy_one_to_one",
    "intersect_count",
    "overlapping_gt_ids",
    "score_S",
    "skeleton_cache",
    "skeletonize",
    "summarize_runs",
]
