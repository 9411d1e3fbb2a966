"""
整合測試模組

包含系統整合測試和端到端測試。
"""
