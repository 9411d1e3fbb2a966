#!/usr/bin/env python3
"""
TVG Distill Lab
===============

在合成時間定位任務上比較群組相對策略最佳化、帶稠密反向 KL token 獎勵的
在線蒸餾、兩種離線蒸餾基線，以及教師驗證的分歧聚焦課程篩選。

主要子套件：
- env：合成實例、動作文法與 IoU 指標
- policy：小型自迴歸類別策略與固定教師
- trainers：GRPO / OPD / OP-RKD / OP-FKD
- curriculum：可靠度驗證、分歧評分、取樣器與多輪編排
- analysis：梯度變異數、KL 恆等式、計算預算比較
- runner：命令列子命令

使用方法：
  tvg-distill gen --config configs/standard_fixture.conf
  tvg-distill train --config configs/standard_fixture.conf --set algo=opd
"""

__version__ = "0.3.0"
__author__ = "tvg-distill-lab contributors"

from .config import ExperimentConfig, load_config
from .utils.error_handler import LabError


__all__ = ["ExperimentConfig", "LabError", "__version__", "load_config"]
