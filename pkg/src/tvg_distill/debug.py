#!/usr/bin/env python3
"""
統一調試日誌模組
================

提供實驗室內統一的調試日誌功能。所有調試輸出都寫到 stderr，
只在調試模式啟用時才輸出，stdout 保留給命令結果（表格、JSON）。

使用方法：
```python
from .debug import trainer_debug_log

trainer_debug_log("step=3 algo=opd tokens=192")
```

環境變數控制：
- TVG_DEBUG=true/1/yes/on: 啟用調試模式
- TVG_DEBUG=false/0/no/off: 關閉調試模式（默認）
"""

import os
import sys
from typing import Any


_TRUTHY = ("true", "1", "yes", "on")


def debug_log(message: Any, prefix: str = "DEBUG") -> None:
    """
    輸出調試訊息到標準錯誤

    Args:
        message: 要輸出的調試信息
        prefix: 調試信息的前綴標識，默認為 "DEBUG"
    """
    if os.getenv("TVG_DEBUG", "").lower() not in _TRUTHY:
        return

    try:
        if not isinstance(message, str):
            message = str(message)

        try:
            print(f"[{prefix}] {message}", file=sys.stderr, flush=True)
        except UnicodeEncodeError:
            safe_message = message.encode("ascii", errors="replace").decode("ascii")
            print(f"[{prefix}] {safe_message}", file=sys.stderr, flush=True)
    except Exception:
        # 靜默失敗，不影響主程序
        pass


def env_debug_log(message: Any) -> None:
    """合成環境模組專用的調試日誌"""
    debug_log(message, "ENV")


def policy_debug_log(message: Any) -> None:
    """策略模組專用的調試日誌"""
    debug_log(message, "POLICY")


def trainer_debug_log(message: Any) -> None:
    """訓練器專用的調試日誌"""
    debug_log(message, "TRAIN")


def curriculum_debug_log(message: Any) -> None:
    """課程篩選模組專用的調試日誌"""
    debug_log(message, "TVDF")


def analysis_debug_log(message: Any) -> None:
    """分析模組專用的調試日誌"""
    debug_log(message, "ANALYSIS")


def runner_debug_log(message: Any) -> None:
    """命令列執行器專用的調試日誌"""
    debug_log(message, "RUNNER")


def is_debug_enabled() -> bool:
    """檢查是否啟用了調試模式"""
    return os.getenv("TVG_DEBUG", "").lower() in _TRUTHY


def set_debug_mode(enabled: bool) -> None:
    """設置調試模式（用於測試）"""
    os.environ["TVG_DEBUG"] = "true" if enabled else "false"
