"""
錯誤處理框架測試模組

測試 ErrorHandler 類的各項功能，包括：
- 錯誤類型自動分類
- 命令列退出碼
- 用戶友好錯誤信息與國際化
- 標準化錯誤響應
"""

from unittest.mock import patch

import pytest

from tvg_distill.utils.error_handler import (
    CheckFailure,
    ConfigurationError,
    ErrorHandler,
    ErrorSeverity,
    ErrorType,
    InvalidInputError,
    NumericError,
    SelectionError,
)


class TestErrorHandler:
    """錯誤處理器測試類"""

    def test_classify_lab_errors(self):
        """測試實驗室例外依類別分類"""
        assert ErrorHandler.classify_error(ConfigurationError("x")) == ErrorType.CONFIGURATION
        assert ErrorHandler.classify_error(InvalidInputError("x")) == ErrorType.VALIDATION
        assert ErrorHandler.classify_error(NumericError("x")) == ErrorType.NUMERIC
        assert ErrorHandler.classify_error(SelectionError("x", shortfall=2)) == ErrorType.SELECTION
        assert ErrorHandler.classify_error(CheckFailure("x")) == ErrorType.CHECK_FAILURE

    def test_classify_builtin_errors(self):
        """測試內建例外分類"""
        assert ErrorHandler.classify_error(FileNotFoundError("missing")) == ErrorType.FILE_IO
        assert ErrorHandler.classify_error(FloatingPointError("nan")) == ErrorType.NUMERIC
        assert ErrorHandler.classify_error(ValueError("bad")) == ErrorType.VALIDATION
        assert ErrorHandler.classify_error(RuntimeError("boom")) == ErrorType.SYSTEM

    @pytest.mark.parametrize(
        ("error", "code"),
        [
            (ConfigurationError("bad key"), 2),
            (CheckFailure("gap"), 3),
            (SelectionError("short", shortfall=1), 1),
            (FileNotFoundError("missing"), 1),
            (RuntimeError("boom"), 1),
        ],
    )
    def test_exit_codes(self, error, code):
        """測試退出碼對應"""
        assert ErrorHandler.exit_code(error) == code

    def test_selection_error_keeps_shortfall(self):
        """測試篩選錯誤保留差額"""
        error = SelectionError("short", shortfall=5)
        assert error.shortfall == 5
        assert error.details["shortfall"] == 5

    def test_format_user_error_chinese(self):
        """測試中文錯誤信息"""
        with patch.dict("os.environ", {"TVG_LANGUAGE": "zh-TW"}):
            message = ErrorHandler.format_user_error(
                ConfigurationError("未知鍵 foo"), context={"operation": "載入配置", "file_path": "a.conf"}
            )
        assert "配置出現問題" in message
        assert "操作: 載入配置" in message
        assert "文件: a.conf" in message

    def test_format_user_error_english(self):
        """測試英文錯誤信息與技術細節"""
        with patch.dict("os.environ", {"TVG_LANGUAGE": "en"}):
            message = ErrorHandler.format_user_error(CheckFailure("gap too large"), include_technical=True)
        assert "Check failed" in message
        assert "Technical details: CheckFailure" in message

    def test_unknown_language_falls_back(self):
        """測試未支援的語言回退到繁體中文"""
        with patch.dict("os.environ", {"TVG_LANGUAGE": "fr"}):
            assert ErrorHandler.get_current_language() == "zh-TW"

    def test_solutions(self):
        """測試解決建議"""
        with patch.dict("os.environ", {"TVG_LANGUAGE": "en"}):
            solutions = ErrorHandler.get_error_solutions(ErrorType.SELECTION)
        assert any("k_select" in s for s in solutions)
        assert ErrorHandler.get_error_solutions(ErrorType.NUMERIC) == []

    def test_log_error_with_context(self):
        """測試錯誤記錄回傳追蹤 ID"""
        error_id = ErrorHandler.log_error_with_context(
            NumericError("inf"), context={"step": 3}, severity=ErrorSeverity.HIGH
        )
        assert error_id.startswith("ERR_")

    def test_create_error_response(self):
        """測試標準化錯誤響應"""
        response = ErrorHandler.create_error_response(
            SelectionError("short", shortfall=3), context={"operation": "select"}
        )
        assert response["success"] is False
        assert response["error_type"] == "selection"
        assert response["exit_code"] == 1
        assert response["details"] == {"shortfall": "3"}
        assert response["solutions"]

    def test_response_without_solutions(self):
        """測試不附帶解決建議"""
        response = ErrorHandler.create_error_response(ValueError("x"), include_solutions=False)
        assert "solutions" not in response
        assert "details" not in response
