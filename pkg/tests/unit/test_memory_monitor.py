#!/usr/bin/env python3
"""
內存快照測試
============

測試運行內存快照的功能，包括：
- 快照欄位
- 警告門檻
- 摘要與峰值
"""

from collections import namedtuple
from datetime import datetime
from unittest.mock import patch

import pytest

from tvg_distill.utils.memory_monitor import MemoryMonitor, MemorySnapshot, take_snapshot


VirtualMemory = namedtuple("VirtualMemory", "total available percent")
MemoryInfo = namedtuple("MemoryInfo", "rss vms")


class TestMemorySnapshot:
    """測試內存快照數據類"""

    def test_memory_snapshot_creation(self):
        """測試內存快照創建"""
        snapshot = MemorySnapshot(
            label="start",
            timestamp=datetime(2026, 1, 1, 12, 0, 0),
            system_total=8 * 1024**3,  # 8GB
            system_available=4 * 1024**3,  # 4GB
            system_percent=50.0,
            process_rss=100 * 1024**2,  # 100MB
            process_vms=200 * 1024**2,  # 200MB
            gc_objects=10000,
        )

        assert snapshot.rss_mb == 100.0
        data = snapshot.to_dict()
        assert data["timestamp"] == "2026-01-01T12:00:00"
        assert data["rss_mb"] == 100.0
        assert data["label"] == "start"

    def test_take_snapshot(self):
        """測試實際收集快照"""
        snapshot = take_snapshot("now")
        assert snapshot.label == "now"
        assert snapshot.process_rss > 0
        assert 0.0 <= snapshot.system_percent <= 100.0

    def test_psutil_failure_propagates(self):
        """測試 psutil 失敗時拋出"""
        with patch("tvg_distill.utils.memory_monitor.psutil.virtual_memory", side_effect=OSError("no /proc")):
            with pytest.raises(OSError):
                take_snapshot("broken")


class TestMemoryMonitor:
    """測試快照累積"""

    def _patched(self, rss_values, percent=40.0):
        process = patch("tvg_distill.utils.memory_monitor.psutil.Process")
        virtual = patch(
            "tvg_distill.utils.memory_monitor.psutil.virtual_memory",
            return_value=VirtualMemory(8 * 1024**3, 4 * 1024**3, percent),
        )
        return process, virtual, [MemoryInfo(rss, 2 * rss) for rss in rss_values]

    def test_summary_and_peak(self):
        """測試峰值與增長"""
        process, virtual, infos = self._patched([100 * 1024**2, 300 * 1024**2, 200 * 1024**2])
        with process as mock_process, virtual:
            mock_process.return_value.memory_info.side_effect = infos
            monitor = MemoryMonitor()
            for label in ("a", "b", "c"):
                monitor.record(label)

        summary = monitor.summary()
        assert monitor.peak_rss == 300 * 1024**2
        assert summary["peak_rss_mb"] == 300.0
        assert summary["rss_growth_mb"] == 100.0
        assert [s["label"] for s in summary["snapshots"]] == ["a", "b", "c"]

    def test_empty_summary(self):
        """測試沒有快照時的摘要"""
        monitor = MemoryMonitor()
        assert monitor.peak_rss == 0
        assert monitor.summary() == {"snapshots": [], "peak_rss_mb": 0.0}

    def test_high_usage_warning(self):
        """測試超過門檻時寫調試警告"""
        process, virtual, infos = self._patched([50 * 1024**2], percent=95.0)
        with process as mock_process, virtual, patch(
            "tvg_distill.utils.memory_monitor.debug_log"
        ) as mock_log:
            mock_process.return_value.memory_info.side_effect = infos
            MemoryMonitor(warning_threshold=0.9).record("hot")
        mock_log.assert_called_once()
        assert "95.0%" in mock_log.call_args.args[0]
