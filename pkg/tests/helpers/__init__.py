"""
測試輔助工具模組

包含測試中使用的輔助類和工具函數。
"""
