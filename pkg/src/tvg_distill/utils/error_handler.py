"""
統一錯誤處理框架
================

提供實驗室統一的錯誤處理機制，包括：
- 例外類別階層（LabError 及其子類）
- 錯誤類型分類
- 用戶友好錯誤信息（zh-TW / en）
- 錯誤上下文記錄
- 命令列退出碼對應

注意：解碼失敗（DecodeFailure）是數值而非例外，不經過此模組。
"""

import os
import time
import traceback
from enum import Enum
from typing import Any

from ..debug import debug_log


class ErrorType(Enum):
    """錯誤類型枚舉"""

    CONFIGURATION = "config"  # 配置錯誤
    VALIDATION = "validation"  # 輸入驗證錯誤
    NUMERIC = "numeric"  # 數值錯誤（非有限 logits 等）
    FILE_IO = "file_io"  # 文件 I/O 錯誤
    SELECTION = "selection"  # 課程篩選數量不足
    CHECK_FAILURE = "check_failure"  # 一致性 / 決定性檢查失敗
    SYSTEM = "system"  # 系統錯誤


class ErrorSeverity(Enum):
    """錯誤嚴重程度"""

    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class LabError(Exception):
    """實驗室所有可預期錯誤的基底類別"""

    error_type: ErrorType = ErrorType.SYSTEM

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.details = details


class ConfigurationError(LabError):
    """配置無效：未知鍵、非法值、前置條件不成立"""

    error_type = ErrorType.CONFIGURATION


class InvalidInputError(LabError):
    """呼叫參數不符合前置條件（長度不一、空列表、k 越界等）"""

    error_type = ErrorType.VALIDATION


class NumericError(LabError):
    """數值問題：非有限 logits、教師在學生有質量處為零"""

    error_type = ErrorType.NUMERIC


class SelectionError(LabError):
    """可靠樣本池小於篩選預算"""

    error_type = ErrorType.SELECTION

    def __init__(self, message: str, shortfall: int, **details: Any):
        super().__init__(message, shortfall=shortfall, **details)
        self.shortfall = shortfall


class CheckFailure(LabError):
    """數值檢查門檻或決定性比對失敗"""

    error_type = ErrorType.CHECK_FAILURE


_EXIT_CODES = {
    ErrorType.CONFIGURATION: 2,
    ErrorType.CHECK_FAILURE: 3,
}


class ErrorHandler:
    """統一錯誤處理器"""

    _ERROR_MESSAGES = {
        ErrorType.CONFIGURATION: {
            "zh-TW": "配置出現問題",
            "en": "Configuration issue",
        },
        ErrorType.VALIDATION: {
            "zh-TW": "輸入數據驗證失敗",
            "en": "Input validation failed",
        },
        ErrorType.NUMERIC: {
            "zh-TW": "數值計算出現問題",
            "en": "Numerical issue",
        },
        ErrorType.FILE_IO: {
            "zh-TW": "文件讀寫出現問題",
            "en": "File read/write issue",
        },
        ErrorType.SELECTION: {
            "zh-TW": "可靠樣本不足以完成篩選",
            "en": "Not enough reliable samples for selection",
        },
        ErrorType.CHECK_FAILURE: {
            "zh-TW": "數值檢查未通過",
            "en": "Check failed",
        },
        ErrorType.SYSTEM: {
            "zh-TW": "系統出現問題",
            "en": "System issue",
        },
    }

    _ERROR_SOLUTIONS = {
        ErrorType.CONFIGURATION: {
            "zh-TW": ["檢查配置文件的鍵名與數值範圍", "確認 schema_version = 1"],
            "en": [
                "Check config keys and value ranges",
                "Make sure schema_version = 1",
            ],
        },
        ErrorType.FILE_IO: {
            "zh-TW": ["確認輸入文件存在（先執行 gen）", "檢查輸出目錄權限"],
            "en": [
                "Make sure input files exist (run gen first)",
                "Check output directory permissions",
            ],
        },
        ErrorType.SELECTION: {
            "zh-TW": ["降低 curriculum.k_select", "降低 reliability_threshold"],
            "en": [
                "Lower curriculum.k_select",
                "Lower curriculum.reliability_threshold",
            ],
        },
        ErrorType.CHECK_FAILURE: {
            "zh-TW": ["增加樣本數後重試", "比對兩次運行的配置雜湊"],
            "en": [
                "Retry with more samples",
                "Compare the config hashes of both runs",
            ],
        },
    }

    @staticmethod
    def get_current_language() -> str:
        """獲取當前語言設置"""
        language = os.getenv("TVG_LANGUAGE", "zh-TW")
        return language if language in ("zh-TW", "en") else "zh-TW"

    @staticmethod
    def get_error_message(error_type: ErrorType) -> str:
        language = ErrorHandler.get_current_language()
        messages = ErrorHandler._ERROR_MESSAGES.get(error_type, {})
        return messages.get(language, messages.get("zh-TW", "發生未知錯誤"))

    @staticmethod
    def get_error_solutions(error_type: ErrorType) -> list[str]:
        """
        獲取錯誤解決建議

        Args:
            error_type: 錯誤類型

        Returns:
            list[str]: 解決建議列表
        """
        language = ErrorHandler.get_current_language()
        solutions = ErrorHandler._ERROR_SOLUTIONS.get(error_type, {})
        return list(solutions.get(language, solutions.get("zh-TW", [])))

    @staticmethod
    def classify_error(error: Exception) -> ErrorType:
        """
        根據異常類型分類錯誤

        Args:
            error: Python 異常對象

        Returns:
            ErrorType: 錯誤類型
        """
        if isinstance(error, LabError):
            return error.error_type
        if isinstance(error, OSError):
            return ErrorType.FILE_IO
        if isinstance(error, FloatingPointError):
            return ErrorType.NUMERIC
        if isinstance(error, ValueError | TypeError | KeyError):
            return ErrorType.VALIDATION
        return ErrorType.SYSTEM

    @staticmethod
    def exit_code(error: Exception) -> int:
        """命令列退出碼：配置錯誤 2，檢查失敗 3，其他 1"""
        return _EXIT_CODES.get(ErrorHandler.classify_error(error), 1)

    @staticmethod
    def format_user_error(
        error: Exception,
        error_type: ErrorType | None = None,
        context: dict[str, Any] | None = None,
        include_technical: bool = False,
    ) -> str:
        """
        將技術錯誤轉換為用戶友好的錯誤信息

        Args:
            error: Python 異常對象
            error_type: 錯誤類型（可選，會自動分類）
            context: 錯誤上下文信息
            include_technical: 是否包含技術細節

        Returns:
            str: 用戶友好的錯誤信息
        """
        if error_type is None:
            error_type = ErrorHandler.classify_error(error)

        language = ErrorHandler.get_current_language()
        parts = [f"❌ {ErrorHandler.get_error_message(error_type)}: {error!s}"]

        if context:
            if context.get("operation"):
                label = "Operation" if language == "en" else "操作"
                parts.append(f"{label}: {context['operation']}")
            if context.get("file_path"):
                label = "File" if language == "en" else "文件"
                parts.append(f"{label}: {context['file_path']}")

        if include_technical:
            label = "Technical details" if language == "en" else "技術細節"
            parts.append(f"{label}: {type(error).__name__}: {error!s}")

        return "\n".join(parts)

    @staticmethod
    def log_error_with_context(
        error: Exception,
        context: dict[str, Any] | None = None,
        error_type: ErrorType | None = None,
        severity: ErrorSeverity = ErrorSeverity.MEDIUM,
    ) -> str:
        """
        記錄帶上下文的錯誤信息

        Returns:
            str: 錯誤 ID，用於追蹤
        """
        error_id = f"ERR_{int(time.time())}_{id(error) % 10000}"

        if error_type is None:
            error_type = ErrorHandler.classify_error(error)

        debug_log(f"錯誤記錄 [{error_id}]: {error_type.value} - {error!s}")

        if context:
            debug_log(f"錯誤上下文 [{error_id}]: {context}")

        if severity in (ErrorSeverity.HIGH, ErrorSeverity.CRITICAL):
            debug_log(f"錯誤堆棧 [{error_id}]:\n{traceback.format_exc()}")

        return error_id

    @staticmethod
    def create_error_response(
        error: Exception,
        context: dict[str, Any] | None = None,
        include_solutions: bool = True,
    ) -> dict[str, Any]:
        """創建標準化的錯誤響應（寫入報告或 MANIFEST 時使用）"""
        error_type = ErrorHandler.classify_error(error)
        error_id = ErrorHandler.log_error_with_context(error, context, error_type)
        response: dict[str, Any] = {
            "success": False,
            "error_id": error_id,
            "error_type": error_type.value,
            "message": ErrorHandler.format_user_error(error, error_type, context),
            "exit_code": ErrorHandler.exit_code(error),
        }
        if isinstance(error, LabError) and error.details:
            response["details"] = {k: str(v) for k, v in error.details.items()}
        if include_solutions:
            response["solutions"] = ErrorHandler.get_error_solutions(error_type)
        return response
