#!/usr/bin/env python3
"""
梯度變異數分析單元測試
"""

from dataclasses import replace

import numpy as np
import pytest

from tvg_distill.analysis.variance import (
    measure_variance,
    static_support,
    variance_dominance,
)
from tvg_distill.config import GrpoConfig
from tvg_distill.utils.error_handler import InvalidInputError


@pytest.fixture
def opd_report(small_policy, oracle_teacher, instance):
    return measure_variance(
        "opd", small_policy, oracle_teacher, instance, 1000, np.random.default_rng(0), 6
    )


class TestMeasureVariance:
    """測試單軌跡估計量的變異數"""

    def test_decomposition_identity(self, opd_report):
        parts = opd_report.decomposition
        total = parts["sum_var_terms"] + 2.0 * parts["sum_cov_terms"]
        assert total == pytest.approx(parts["total"], rel=1e-8, abs=1e-12)
        assert parts["sum_var_terms"] >= 0.0

    def test_grpo_decomposition_identity(self, small_policy, instance):
        report = measure_variance(
            "grpo", small_policy, GrpoConfig(group_size=4), instance, 1000, np.random.default_rng(1), 6
        )
        parts = report.decomposition
        assert parts["sum_var_terms"] + 2.0 * parts["sum_cov_terms"] == pytest.approx(
            parts["total"], rel=1e-8, abs=1e-12
        )
        assert report.group_size == 4
        assert report.tokens_used >= 4 * 1000

    def test_variance_only_on_support(self, opd_report, small_policy, instance):
        support = static_support(small_policy, instance)
        mask = np.ones(small_policy.layout.size, dtype=bool)
        mask[support] = False
        assert np.all(opd_report.per_coord_var[mask] == 0.0)
        assert opd_report.trace_cov == pytest.approx(opd_report.per_coord_var.sum())

    def test_report_fields(self, opd_report):
        data = opd_report.to_dict()
        assert data["n_samples"] == 1000
        assert "note" in data
        assert opd_report.tokens_used >= 1000
        assert set(opd_report.csv_row()) >= {"sum_var_terms", "sum_cov_terms", "total"}

    def test_threads_do_not_change_result(self, small_policy, oracle_teacher, instance):
        serial = measure_variance(
            "opd", small_policy, oracle_teacher, instance, 1000, np.random.default_rng(2), 6
        )
        threaded = measure_variance(
            "opd", small_policy, oracle_teacher, instance, 1000, np.random.default_rng(2), 6, threads=4
        )
        assert serial.trace_cov == threaded.trace_cov
        assert serial.decomposition == threaded.decomposition

    def test_preconditions(self, small_policy, oracle_teacher, instance):
        rng = np.random.default_rng(0)
        with pytest.raises(InvalidInputError):
            measure_variance("opd", small_policy, oracle_teacher, instance, 999, rng)
        with pytest.raises(InvalidInputError):
            measure_variance("ppo", small_policy, oracle_teacher, instance, 1000, rng)
        with pytest.raises(InvalidInputError):
            measure_variance("opd", small_policy, "iou", instance, 1000, rng)


class TestStaticSupport:
    """測試靜態支撐"""

    def test_size(self, small_policy, instance):
        layout = small_policy.layout
        offsets = layout.offsets()
        dense = sum(
            stop - start
            for name, (start, stop) in offsets.items()
            if name != "readout_weights"
        )
        support = static_support(small_policy, instance)
        assert support.size == dense + layout.max_len * layout.vocab * 3
        assert len(np.unique(support)) == support.size


class TestDominance:
    """測試 bootstrap 變異數比較"""

    def test_scaled_samples_dominate(self, opd_report):
        small = replace(
            opd_report, samples=opd_report.samples * 0.1, trace_cov=opd_report.trace_cov * 0.01
        )
        result = variance_dominance(small, opd_report, 200, np.random.default_rng(3))
        assert result.dominates
        assert result.difference < 0.0
        assert result.to_dict()["n_boot"] == 200

    def test_same_samples_do_not_dominate(self, opd_report):
        result = variance_dominance(opd_report, opd_report, 200, np.random.default_rng(4))
        assert not result.dominates
        assert result.difference == 0.0

    def test_requires_samples(self, opd_report):
        with pytest.raises(InvalidInputError):
            variance_dominance(replace(opd_report, samples=None), opd_report, 10, np.random.default_rng(0))
        with pytest.raises(InvalidInputError):
            variance_dominance(opd_report, opd_report, 0, np.random.default_rng(0))
