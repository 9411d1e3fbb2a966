#!/usr/bin/env python3
"""
IoU 指標單元測試
"""

import pytest

from tests.fixtures.test_data import TestData
from tvg_distill.env.grammar import DecodeFailure, TemporalInterval
from tvg_distill.env.metrics import (
    EvalReport,
    evaluate,
    format_report_table,
    iou,
    reward_value,
    timestamp_aware_iou,
)
from tvg_distill.utils.error_handler import InvalidInputError


class TestIou:
    """測試閉區間 IoU"""

    @pytest.mark.parametrize("pred,gt,expected", TestData.IOU_CASES)
    def test_cases(self, pred, gt, expected):
        assert iou(TemporalInterval(*pred), TemporalInterval(*gt)) == pytest.approx(expected)

    def test_symmetric(self):
        a, b = TemporalInterval(0, 4), TemporalInterval(3, 9)
        assert iou(a, b) == iou(b, a)

    def test_timestamp_aware(self):
        pred, gt, length, expected = TestData.TIMESTAMP_AWARE_CASE
        value = timestamp_aware_iou(TemporalInterval(*pred), TemporalInterval(*gt), length)
        assert value == pytest.approx(expected)
        assert timestamp_aware_iou(TemporalInterval(3, 7), TemporalInterval(3, 7), 20) == 1.0

    def test_reward_kinds(self):
        gt = TemporalInterval(3, 7)
        assert reward_value("iou", DecodeFailure("x"), gt, 20) == 0.0
        assert reward_value("iou", TemporalInterval(3, 7), gt, 20) == 1.0
        with pytest.raises(InvalidInputError):
            reward_value("f1", gt, gt, 20)


class TestEvaluate:
    """測試評估彙總"""

    def test_recall_and_mean(self):
        gts = [TemporalInterval(3, 7)] * 4
        predictions = [
            TemporalInterval(3, 7),
            TemporalInterval(2, 8),
            TemporalInterval(0, 4),
            DecodeFailure("missing digits"),
        ]
        report = evaluate(predictions, gts, (0.3, 0.5, 0.7))
        assert report.n_instances == 4
        assert report.mean_iou == pytest.approx((1.0 + 5 / 7 + 0.25 + 0.0) / 4)
        assert report.recall_at[0.3] == pytest.approx(0.5)
        assert report.recall_at[0.7] == pytest.approx(0.5)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            evaluate([TemporalInterval(0, 1)], [])

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            evaluate([], [])

    def test_report_dict_round_trip(self):
        report = evaluate([TemporalInterval(3, 7)], [TemporalInterval(3, 7)])
        assert EvalReport.from_dict(report.to_dict()) == report

    def test_table(self):
        report = evaluate([TemporalInterval(3, 7)], [TemporalInterval(3, 7)])
        table = format_report_table(report, "holdout")
        assert "mIoU" in table
        assert "R@0.5" in table
