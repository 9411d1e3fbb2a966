"""
工具模組：錯誤處理、運行目錄管理、內存快照與隨機流
"""

from .error_handler import ErrorHandler, ErrorType, LabError
from .memory_monitor import MemoryMonitor, MemorySnapshot, take_snapshot
from .resource_manager import RunResourceManager, read_jsonl
from .rng import derive_rng


__all__ = [
    "ErrorHandler",
    "ErrorType",
    "LabError",
    "MemoryMonitor",
    "MemorySnapshot",
    "RunResourceManager",
    "derive_rng",
    "read_jsonl",
    "take_snapshot",
]
