"""
執行器：命令列子命令背後的編排與持久化
"""

from .commands import (
    RunContext,
    analyze_budget,
    analyze_kl_check,
    analyze_variance,
    cmd_eval,
    cmd_gen,
    cmd_score,
    cmd_select,
    cmd_train,
    compare_determinism,
    compare_strategies,
    compare_teachers,
    metrics_differences,
    resolve_teacher,
    resolve_threads,
    truncate_metrics,
)


__all__ = [
    "RunContext",
    "analyze_budget",
    "analyze_kl_check",
    "analyze_variance",
    "cmd_eval",
    "cmd_gen",
    "cmd_score",
    "cmd_select",
    "cmd_train",
    "compare_determinism",
    "compare_strategies",
    "compare_teachers",
    "metrics_differences",
    "resolve_teacher",
    "resolve_threads",
    "truncate_metrics",
]
