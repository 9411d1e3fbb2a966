"""
分析：梯度變異數量測與分解、反向 KL 梯度恆等式、計算預算比較
"""

from .budget import BudgetCurve, BudgetRow, budget_compare, format_budget_table, token_ratio
from .kl_identity import (
    KlIdentityResult,
    exact_expectation,
    exact_identity_gap,
    kl_identity_check,
    sidak_threshold,
)
from .variance import DominanceResult, VarianceReport, measure_variance, variance_dominance


__all__ = [
    "BudgetCurve",
    "BudgetRow",
    "DominanceResult",
    "KlIdentityResult",
    "VarianceReport",
    "budget_compare",
    "exact_expectation",
    "exact_identity_gap",
    "format_budget_table",
    "kl_identity_check",
    "measure_variance",
    "sidak_threshold",
    "token_ratio",
    "variance_dominance",
]
