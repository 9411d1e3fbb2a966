"""
單元測試模組

包含各個組件的單元測試。
"""
