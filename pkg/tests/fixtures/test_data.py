#!/usr/bin/env python3
"""
測試數據和常量
"""

from typing import Any


class TestData:
    """測試數據類"""

    __test__ = False

    # 標準夾具
    STANDARD_FIXTURE: dict[str, Any] = {
        "env.video_length": 20,
        "env.n_symbols": 4,
        "env.min_span": 3,
        "env.max_span": 6,
        "policy.d": 8,
        "train.train_size": 512,
        "eval.holdout_size": 128,
    }
    STANDARD_SEEDS = (1, 2, 3)

    # 手算的取樣器結果
    DSUS_N5_K3 = [0, 2, 4]  # 1-based {1, 3, 5}
    BBDS_K7_B5 = [2, 2, 1, 1, 1]
    # 高斯權重 c = 0.9, σ = 0.2 在 δ = 0.9 / 0.5 上：1 / (1 + e^{-2})
    GWDS_PROBS = (0.8808, 0.1192)

    # 指標
    IOU_CASES = [
        # (pred, gt, iou)
        ((3, 7), (3, 7), 1.0),
        ((0, 4), (3, 7), 2 / 8),
        ((0, 2), (3, 7), 0.0),
        ((2, 8), (3, 7), 5 / 7),
    ]
    # [3, 7] 對 [2, 8]，L = 20：5/7 · (1 − 2/40)
    TIMESTAMP_AWARE_CASE = ((2, 8), (3, 7), 20, 5 / 7 * 0.95)

    # 群組正規化
    GROUP_REWARDS = [1.0, 0.0, 0.0, 1.0]
    GROUP_NORMALIZED = [1.0, -1.0, -1.0, 1.0]

    # OP-FKD 詞表大小
    VOCAB = 12
