"""
運行內存快照
============

以 psutil 記錄進程常駐內存與系統內存使用率。
執行器在命令開始與結束時各取一次，寫入 MANIFEST；
變異數量測等大樣本步驟另記錄中途快照。
"""

import gc
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Any

import psutil

from ..debug import debug_log
from .error_handler import ErrorHandler, ErrorType


@dataclass
class MemorySnapshot:
    """內存快照數據類"""

    label: str
    timestamp: datetime
    system_total: int  # bytes
    system_available: int  # bytes
    system_percent: float
    process_rss: int  # bytes
    process_vms: int  # bytes
    gc_objects: int

    @property
    def rss_mb(self) -> float:
        return self.process_rss / (1024**2)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["timestamp"] = self.timestamp.isoformat()
        data["rss_mb"] = round(self.rss_mb, 2)
        return data


def take_snapshot(label: str = "") -> MemorySnapshot:
    """收集一次內存快照"""
    try:
        system_memory = psutil.virtual_memory()
        process_memory = psutil.Process().memory_info()
        return MemorySnapshot(
            label=label,
            timestamp=datetime.now(),
            system_total=system_memory.total,
            system_available=system_memory.available,
            system_percent=system_memory.percent,
            process_rss=process_memory.rss,
            process_vms=process_memory.vms,
            gc_objects=len(gc.get_objects()),
        )
    except Exception as e:
        error_id = ErrorHandler.log_error_with_context(
            e, context={"operation": "收集內存快照", "label": label}, error_type=ErrorType.SYSTEM
        )
        debug_log(f"收集內存快照失敗 [錯誤ID: {error_id}]: {e}")
        raise


class MemoryMonitor:
    """累積同一次命令內的快照並給出摘要"""

    def __init__(self, warning_threshold: float = 0.9):
        """
        Args:
            warning_threshold: 系統內存使用率超過此比例時寫調試警告 (0.0-1.0)
        """
        self.warning_threshold = warning_threshold
        self.snapshots: list[MemorySnapshot] = []

    def record(self, label: str) -> MemorySnapshot:
        snapshot = take_snapshot(label)
        self.snapshots.append(snapshot)
        if snapshot.system_percent / 100.0 >= self.warning_threshold:
            debug_log(
                f"系統內存使用率較高: {snapshot.system_percent:.1f}% ({label})", prefix="MEMORY"
            )
        return snapshot

    @property
    def peak_rss(self) -> int:
        return max((s.process_rss for s in self.snapshots), default=0)

    def summary(self) -> dict[str, Any]:
        if not self.snapshots:
            return {"snapshots": [], "peak_rss_mb": 0.0}
        return {
            "snapshots": [s.to_dict() for s in self.snapshots],
            "peak_rss_mb": round(self.peak_rss / (1024**2), 2),
            "rss_growth_mb": round(self.snapshots[-1].rss_mb - self.snapshots[0].rss_mb, 2),
        }
