"""Search-space pruning for weight-sharing supernets with a FLOPs-conditioned path filter.

The usual entry points::

    from pathprune import toy_space, make_buckets, PathFilter, prune, evolve
"""

from .config import ExperimentConfig, derive_seed, load_config
from .filter import ConstantScorer, FilterConfig, PathFilter
from .flops import BucketSpec, bucket_of, flops_range, make_buckets, path_bucket, path_flops, total_flops
from .oracle import OracleConfig, SyntheticOracle
from .pipeline import baseline_coupled, baseline_uniform, run_algorithm1
from .pruning import PruneState, path_thresholds, prune, prune_operations, rejection_sample
from .ranking import ScoredPath, TrainConfig, build_pairs, pair_accuracy, pair_loss, train, weak_detection_metrics
from .search import EvoConfig, brute_force_best, evolve, pareto_sweep
from .space import (COMPOFA_RULE, BlockChoice, BlockSpec, CoupleRule, Path, SearchSpace, count_paths,
                    enumerate_paths, max_path, min_path, ofa_space, sample_uniform, toy_space, validate_path)
from .supernet import TaskConfig, ToySupernet, make_task
from .tokenizer import Vocabulary, tokenize

__version__ = "0.1.0"

__all__ = [
    "BlockChoice", "BlockSpec", "BucketSpec", "COMPOFA_RULE", "ConstantScorer", "CoupleRule", "EvoConfig",
    "ExperimentConfig", "FilterConfig", "OracleConfig", "Path", "PathFilter", "PruneState", "ScoredPath",
    "SearchSpace", "SyntheticOracle", "TaskConfig", "ToySupernet", "TrainConfig", "Vocabulary",
    "baseline_coupled", "baseline_uniform", "brute_force_best", "bucket_of", "build_pairs", "count_paths",
    "derive_seed", "enumerate_paths", "evolve", "flops_range", "load_config", "make_buckets", "make_task",
    "max_path", "min_path", "ofa_space", "pair_accuracy", "pair_loss", "pareto_sweep", "path_bucket",
    "path_flops", "path_thresholds", "prune", "prune_operations", "rejection_sample", "run_algorithm1",
    "sample_uniform", "tokenize", "toy_space", "total_flops", "train", "validate_path", "weak_detection_metrics",
]
