#!/usr/bin/env python3
"""
計算預算比較單元測試
"""

import pytest

from tvg_distill.analysis.budget import (
    BudgetCurve,
    BudgetPoint,
    budget_compare,
    format_budget_table,
    token_ratio,
)
from tvg_distill.utils.error_handler import InvalidInputError


def _eval(step, tokens, miou, algo="opd"):
    return {
        "step": step,
        "algo": algo,
        "event": "eval",
        "cumulative_tokens": tokens,
        "cumulative_wallclock_ms": float(step * 10),
        "mean_iou": miou,
        "recall_at": {},
    }


class TestBudgetCurve:
    """測試從指標流建立曲線"""

    def test_from_records_skips_steps(self):
        records = [
            _eval(0, 0, 0.1),
            {"step": 1, "algo": "opd", "tokens_generated": 40},
            _eval(2, 80, 0.4),
        ]
        curve = BudgetCurve.from_records(records)
        assert curve.algo == "opd"
        assert [p.tokens for p in curve.points] == [0, 80]
        assert curve.best_mean_iou == 0.4

    def test_no_eval_records(self):
        with pytest.raises(InvalidInputError):
            BudgetCurve.from_records([{"step": 1, "algo": "opd"}])

    def test_tokens_must_not_decrease(self):
        with pytest.raises(InvalidInputError):
            BudgetCurve("opd", (BudgetPoint(10, 0.0, 0.1), BudgetPoint(5, 1.0, 0.2)))


class TestBudgetCompare:
    """測試達標預算"""

    def _curves(self):
        opd = BudgetCurve.from_records([_eval(0, 0, 0.1), _eval(2, 100, 0.5), _eval(4, 200, 0.7)])
        grpo = BudgetCurve.from_records(
            [_eval(0, 0, 0.1, "grpo"), _eval(2, 400, 0.3, "grpo"), _eval(4, 800, 0.55, "grpo")]
        )
        return [opd, grpo]

    def test_first_reaching(self):
        rows = budget_compare(self._curves(), 0.5)
        assert [(r.algo, r.tokens_to_target) for r in rows] == [("opd", 100), ("grpo", 800)]
        assert rows[0].wallclock_to_target_ms == 20.0
        assert token_ratio(rows, "opd", "grpo") == pytest.approx(0.125)

    def test_not_reached(self):
        rows = budget_compare(self._curves(), 0.6)
        assert not rows[1].reached
        assert rows[1].to_dict()["tokens_to_target"] is None
        assert token_ratio(rows, "opd", "grpo") is None
        assert "not reached" in format_budget_table(rows)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            budget_compare([], 0.5)
