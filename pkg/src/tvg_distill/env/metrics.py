"""
時間定位評估指標
================

IoU 以閉區間的時間格計算（長度 = end − start + 1）。
"""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from ..utils.error_handler import InvalidInputError
from .grammar import DecodeFailure, TemporalInterval


DEFAULT_THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass(frozen=True)
class EvalReport:
    recall_at: Mapping[float, float]
    mean_iou: float
    n_instances: int

    def to_dict(self) -> dict:
        return {
            "n_instances": self.n_instances,
            "mean_iou": self.mean_iou,
            "recall_at": {f"{k:g}": v for k, v in self.recall_at.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        return cls(
            recall_at={float(k): float(v) for k, v in data["recall_at"].items()},
            mean_iou=float(data["mean_iou"]),
            n_instances=int(data["n_instances"]),
        )


def iou(a: TemporalInterval, b: TemporalInterval) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    union = a.length + b.length - inter
    return inter / union


def timestamp_aware_iou(
    pred: TemporalInterval, gt: TemporalInterval, video_length: int
) -> float:
    """IoU 乘上邊界偏移因子 1 − (|Δs| + |Δe|) / (2L)，截斷到 [0, 1]"""
    base = iou(pred, gt)
    if base == 0.0:
        return 0.0
    deviation = abs(pred.start - gt.start) + abs(pred.end - gt.end)
    factor = 1.0 - deviation / (2.0 * video_length)
    return float(min(1.0, max(0.0, base * factor)))


def prediction_iou(
    prediction: TemporalInterval | DecodeFailure, gt: TemporalInterval
) -> float:
    if isinstance(prediction, DecodeFailure):
        return 0.0
    return iou(prediction, gt)


def reward_value(
    kind: str,
    prediction: TemporalInterval | DecodeFailure,
    gt: TemporalInterval,
    video_length: int,
) -> float:
    """訓練獎勵：DecodeFailure 一律為 0"""
    if isinstance(prediction, DecodeFailure):
        return 0.0
    if kind == "iou":
        return iou(prediction, gt)
    if kind == "timestamp_aware_iou":
        return timestamp_aware_iou(prediction, gt, video_length)
    raise InvalidInputError(f"未知的獎勵類型: {kind}")


def summarize_ious(
    ious: Sequence[float], thresholds: Sequence[float] = DEFAULT_THRESHOLDS
) -> EvalReport:
    if len(ious) == 0:
        raise InvalidInputError("評估列表為空")
    values = np.asarray(ious, dtype=np.float64)
    recall = {float(t): float(np.mean(values >= t)) for t in thresholds}
    return EvalReport(
        recall_at=recall, mean_iou=float(np.mean(values)), n_instances=len(values)
    )


def evaluate(
    predictions: Sequence[TemporalInterval | DecodeFailure],
    gts: Sequence[TemporalInterval],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> EvalReport:
    """recall_at[θ] 為 IoU ≥ θ 的比例；mean_iou 為逐對 IoU 的算術平均"""
    if len(predictions) != len(gts):
        raise InvalidInputError(
            f"預測與標註長度不一致: {len(predictions)} != {len(gts)}"
        )
    if not predictions:
        raise InvalidInputError("評估列表為空")
    return summarize_ious(
        [prediction_iou(p, g) for p, g in zip(predictions, gts, strict=True)],
        thresholds,
    )


def format_report_table(report: EvalReport, title: str = "eval") -> str:
    lines = [f"📊 {title}  (n={report.n_instances})", f"  mIoU      {report.mean_iou:.4f}"]
    for threshold, value in sorted(report.recall_at.items()):
        lines.append(f"  R@{threshold:<7g} {value:.4f}")
    return "\n".join(lines)
