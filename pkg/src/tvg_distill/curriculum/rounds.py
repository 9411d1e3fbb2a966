"""
多輪課程
========

每一輪：以目前學生重新評分（可靠度驗證每輪重跑）→ 篩掉不可靠樣本 →
依策略選 k 個 → 在選出的實例上訓練 → 保留集評估。
"""

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from ..config import ExperimentConfig
from ..debug import curriculum_debug_log
from ..env.instances import GroundingInstance
from ..env.metrics import EvalReport
from ..policy.model import ParamPolicy, Policy
from ..policy.params import PolicyParams
from ..trainers.base import MetricsSink, Trainer, TrainerState, evaluate_policy
from ..utils.error_handler import InvalidInputError, SelectionError
from .samplers import select_samples
from .scoring import ScoredSample, score_pool


@dataclass
class RoundReport:
    round: int
    selection_ids: list[str]
    scored: list[ScoredSample]
    eval_report: EvalReport | None
    params: PolicyParams
    step: int
    tokens_generated: int

    @property
    def n_reliable(self) -> int:
        return sum(s.reliable for s in self.scored)

    def summary(self) -> dict:
        return {
            "round": self.round,
            "n_scored": len(self.scored),
            "n_reliable": self.n_reliable,
            "n_selected": len(self.selection_ids),
            "step": self.step,
            "tokens_generated": self.tokens_generated,
            "eval": self.eval_report.to_dict() if self.eval_report else None,
        }


@dataclass
class RoundsResult:
    rounds: list[RoundReport] = field(default_factory=list)
    teacher_report: EvalReport | None = None
    state: TrainerState | None = None

    def mean_ious(self) -> list[float]:
        return [r.eval_report.mean_iou for r in self.rounds if r.eval_report is not None]


def run_rounds(
    student: PolicyParams | TrainerState,
    teacher: Policy,
    pool: Sequence[GroundingInstance],
    holdout: Sequence[GroundingInstance],
    config: ExperimentConfig,
    trainer: Trainer,
    rng: np.random.Generator,
    sink: MetricsSink | None = None,
    on_round: Callable[[RoundReport], None] | None = None,
) -> RoundsResult:
    """
    Raises:
        SelectionError: 某一輪可靠樣本少於 k_select（含差額）
    """
    cfg = config.curriculum
    if cfg.rounds < 1:
        raise InvalidInputError("rounds 必須 ≥ 1")
    if isinstance(student, TrainerState):
        state = student
    else:
        state = TrainerState.initial(student, config.seed)
    threads = trainer.threads
    max_len = config.env.max_len
    result = RoundsResult()

    for index, round_rng in enumerate(rng.spawn(cfg.rounds), start=1):
        score_rng, select_rng = round_rng.spawn(2)
        scored = score_pool(
            ParamPolicy(state.params), teacher, pool, cfg, score_rng, max_len, threads
        )
        try:
            selected = select_samples(scored, cfg, select_rng)
        except SelectionError as exc:
            curriculum_debug_log(f"第 {index} 輪可靠樣本不足，差額 {exc.shortfall}")
            raise
        instances = [s.instance for s in selected]
        trained = trainer.train(
            state, instances, holdout, steps=cfg.steps_per_round, sink=sink
        )
        state = trained.state
        report = RoundReport(
            round=index,
            selection_ids=[s.id for s in selected],
            scored=scored,
            eval_report=trained.final_eval,
            params=state.params,
            step=state.step,
            tokens_generated=state.tokens_generated,
        )
        curriculum_debug_log(
            f"第 {index} 輪：可靠 {report.n_reliable}/{len(scored)}，選出 {len(instances)}"
        )
        result.rounds.append(report)
        if on_round is not None:
            on_round(report)

    if holdout:
        result.teacher_report = evaluate_policy(
            teacher, holdout, max_len, config.eval.thresholds, threads
        )
    result.state = state
    return result
