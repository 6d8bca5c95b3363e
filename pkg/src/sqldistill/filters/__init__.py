"""Multi-step candidate filtering: pattern, execution, quality jury, relevance jury."""

from .execution import OracleLintExecutor, SqliteExecutor, execution_filter
from .jury import (
    ConsensusThresholds,
    quality_consensus,
    quality_jury,
    relevance_consensus,
    relevance_jury,
)
from .pipeline import FilterConfig, RejectionStats, run_filter_pipeline
from .rules import DialectRulePack, FilterResult, load_rule_pack, pattern_filter, rules_for_dialect

__all__ = [
    "ConsensusThresholds",
    "DialectRulePack",
    "FilterConfig",
    "FilterResult",
    "OracleLintExecutor",
    "RejectionStats",
    "SqliteExecutor",
    "execution_filter",
    "load_rule_pack",
    "pattern_filter",
    "quality_consensus",
    "quality_jury",
    "relevance_consensus",
    "relevance_jury",
    "rules_for_dialect",
    "run_filter_pipeline",
]
