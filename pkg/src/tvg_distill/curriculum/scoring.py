"""
教師可靠度驗證與分歧評分
========================

- teacher_reliability：教師 k 次取樣預測與標註的平均 IoU，低於門檻即不可靠
- disagreement_score：沿一條學生軌跡累加每個狀態的 KL(學生 ‖ 教師)
- score_pool：對整個池計算 τᵢ、σᵢ、δᵢ = τᵢ − σᵢ、分歧與可靠旗標

評分結果以 CSV 交換：id, teacher_iou, student_iou, delta, disagreement, reliable。
"""

import csv
import io
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import CurriculumConfig
from ..debug import curriculum_debug_log
from ..env.grammar import max_digits_for
from ..env.instances import GroundingInstance
from ..env.metrics import prediction_iou
from ..policy.model import Policy, as_policy, sample_trajectory
from ..policy.params import PolicyParams
from ..trainers.base import parallel_map
from ..trainers.opd import reverse_kl_from_logs
from ..utils.error_handler import ConfigurationError, InvalidInputError


CSV_COLUMNS = ("id", "teacher_iou", "student_iou", "delta", "disagreement", "reliable")


@dataclass(frozen=True)
class ScoredSample:
    instance: GroundingInstance
    teacher_iou: float
    student_iou: float
    delta: float
    disagreement: float
    reliable: bool

    def __post_init__(self) -> None:
        if self.disagreement < 0:
            raise InvalidInputError(f"分歧分數不可為負: {self.disagreement}")

    @property
    def id(self) -> str:
        return self.instance.id

    def sort_value(self, key: str = "delta") -> float:
        if key == "delta":
            return self.delta
        if key == "disagreement":
            return self.disagreement
        raise InvalidInputError(f"未知的排序鍵: {key}")

    def to_row(self) -> dict[str, str]:
        return {
            "id": self.id,
            "teacher_iou": repr(self.teacher_iou),
            "student_iou": repr(self.student_iou),
            "delta": repr(self.delta),
            "disagreement": repr(self.disagreement),
            "reliable": "true" if self.reliable else "false",
        }

    @classmethod
    def from_row(
        cls, row: Mapping[str, str], instances: Mapping[str, GroundingInstance]
    ) -> "ScoredSample":
        instance = instances.get(row["id"])
        if instance is None:
            raise ConfigurationError(f"評分文件中的 id 不在實例池內: {row['id']}")
        return cls(
            instance=instance,
            teacher_iou=float(row["teacher_iou"]),
            student_iou=float(row["student_iou"]),
            delta=float(row["delta"]),
            disagreement=float(row["disagreement"]),
            reliable=row["reliable"].strip().lower() == "true",
        )


def default_max_len(instance: GroundingInstance) -> int:
    """最長合法輸出：兩段最多位數 + SEP + EOS"""
    return 2 * max_digits_for(instance.video_length) + 2


def topk_prediction_iou(
    policy: Policy | PolicyParams,
    instance: GroundingInstance,
    top_k_preds: int,
    rng: np.random.Generator,
    max_len: int | None = None,
) -> float:
    """k 條獨立取樣（溫度 1）預測對標註的平均 IoU；解碼失敗計 0"""
    if top_k_preds < 1:
        raise InvalidInputError(f"top_k_preds 必須 ≥ 1: {top_k_preds}")
    policy = as_policy(policy)
    max_len = default_max_len(instance) if max_len is None else max_len
    ious = [
        prediction_iou(sample_trajectory(policy, instance, stream, max_len).decoded, instance.gt)
        for stream in rng.spawn(top_k_preds)
    ]
    return float(np.mean(ious))


def teacher_reliability(
    teacher: Policy | PolicyParams,
    instance: GroundingInstance,
    top_k_preds: int,
    threshold: float,
    rng: np.random.Generator,
    max_len: int | None = None,
) -> tuple[float, bool]:
    mean_iou = topk_prediction_iou(teacher, instance, top_k_preds, rng, max_len)
    return mean_iou, mean_iou >= threshold


def disagreement_score(
    student: Policy | PolicyParams,
    teacher: Policy | PolicyParams,
    instance: GroundingInstance,
    rng: np.random.Generator,
    max_len: int | None = None,
) -> float:
    student = as_policy(student)
    teacher = as_policy(teacher)
    max_len = default_max_len(instance) if max_len is None else max_len
    tokens = sample_trajectory(student, instance, rng, max_len).tokens
    student_logp = student.trajectory_log_distributions(instance, tokens)
    teacher_logp = teacher.trajectory_log_distributions(instance, tokens)
    return float(np.sum(reverse_kl_from_logs(student_logp, teacher_logp)))


def score_instance(
    student: Policy,
    teacher: Policy,
    instance: GroundingInstance,
    cfg: CurriculumConfig,
    rng: np.random.Generator,
    max_len: int | None = None,
) -> ScoredSample:
    teacher_rng, student_rng, disagreement_rng = rng.spawn(3)
    teacher_iou, reliable = teacher_reliability(
        teacher, instance, cfg.top_k_preds, cfg.reliability_threshold, teacher_rng, max_len
    )
    student_iou = topk_prediction_iou(student, instance, cfg.top_k_preds, student_rng, max_len)
    return ScoredSample(
        instance=instance,
        teacher_iou=teacher_iou,
        student_iou=student_iou,
        delta=teacher_iou - student_iou,
        disagreement=disagreement_score(student, teacher, instance, disagreement_rng, max_len),
        reliable=reliable if cfg.use_trpv else True,
    )


def score_pool(
    student: Policy | PolicyParams,
    teacher: Policy | PolicyParams,
    pool: Sequence[GroundingInstance],
    cfg: CurriculumConfig,
    rng: np.random.Generator,
    max_len: int | None = None,
    threads: int = 1,
) -> list[ScoredSample]:
    """
    對池中每個實例評分

    第 i 個實例使用 rng 的第 i 個子流，再分成教師、學生、分歧三個子流。
    """
    if not pool:
        raise InvalidInputError("實例池為空")
    student = as_policy(student)
    teacher = as_policy(teacher)
    streams = rng.spawn(len(pool))
    scored = parallel_map(
        lambda item: score_instance(student, teacher, item[0], cfg, item[1], max_len),
        list(zip(pool, streams, strict=True)),
        threads,
    )
    n_reliable = sum(s.reliable for s in scored)
    curriculum_debug_log(f"評分 {len(scored)} 個實例，可靠 {n_reliable} 個")
    return scored


# ---- CSV 交換格式 ----


def scored_to_csv(scored: Sequence[ScoredSample], config_hash: str = "") -> str:
    buffer = io.StringIO()
    buffer.write(f"# config_hash={config_hash}\n")
    writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for sample in scored:
        writer.writerow(sample.to_row())
    return buffer.getvalue()


def read_scored_csv(
    path: str | Path, instances: Sequence[GroundingInstance]
) -> list[ScoredSample]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"評分文件不存在: {path}")
    by_id = {inst.id: inst for inst in instances}
    lines = [
        line for line in path.read_text(encoding="utf-8").splitlines() if not line.startswith("#")
    ]
    return [ScoredSample.from_row(row, by_id) for row in csv.DictReader(lines)]
