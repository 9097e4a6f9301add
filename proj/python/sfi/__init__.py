"""Slow-fast decoding with a closed-form selector over a sparse KV cache."""

from ._sfi import (  # noqa: F401
    CacheLimits,
    CacheStats,
    Config,
    DenseResult,
    FusedScore,
    LogitWindow,
    ModelSpec,
    RequestResult,
    ScoreDistribution,
    SelectorConfig,
    SfiError,
    StepRecord,
    ToyModel,
    TriggerConfig,
    compute_allowed,
    default_config,
    evidence_from_window,
    flop_model,
    fuse,
    load_config_file,
    make_cache_stats,
    normalize,
    oracle,
    prior_from_stats,
    refine_cross_head,
    refine_soft_nms,
    run_dense,
    run_request,
    run_selector,
    save_config_file,
    select_top_k,
    validate_distribution,
)

__all__ = [
    "CacheLimits",
    "CacheStats",
    "Config",
    "DenseResult",
    "FusedScore",
    "LogitWindow",
    "ModelSpec",
    "RequestResult",
    "ScoreDistribution",
    "SelectorConfig",
    "SfiError",
    "StepRecord",
    "ToyModel",
    "TriggerConfig",
    "compute_allowed",
    "default_config",
    "evidence_from_window",
    "flop_model",
    "fuse",
    "load_config_file",
    "make_cache_stats",
    "normalize",
    "oracle",
    "prior_from_stats",
    "refine_cross_head",
    "refine_soft_nms",
    "run_dense",
    "run_request",
    "run_selector",
    "select_top_k",
    "validate_distribution",
]
