"""
訓練器共用基礎
==============

- TrainerState：參數快照（θ、π_old、π_ref）與累計計數
- parallel_map：依輸入順序回傳結果的執行緒池
- batch_for_step：由 (seed, epoch) 排列決定每步的實例切片
- Trainer：通用訓練迴圈，負責評估、指標記錄與檢查點回呼
- warm_start / make_base_student：以語法教師熱啟動的基礎學生
"""

import time
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, TypeVar

import numpy as np

from ..config import ExperimentConfig, OffPolicyConfig
from ..debug import trainer_debug_log
from ..env.instances import GroundingInstance
from ..env.metrics import DEFAULT_THRESHOLDS, EvalReport, evaluate
from ..policy.model import Policy, greedy_decode
from ..policy.params import (
    GradientAccumulator,
    PolicyParams,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from ..utils.error_handler import ConfigurationError, InvalidInputError
from ..utils.rng import derive_rng


T = TypeVar("T")
R = TypeVar("R")

MetricsSink = Callable[[dict[str, Any]], None]


@dataclass(frozen=True, eq=False)
class TrainerState:
    params: PolicyParams
    old_params: PolicyParams
    ref_params: PolicyParams
    seed: int
    step: int = 0
    tokens_generated: int = 0
    wallclock_ms: float = 0.0

    @classmethod
    def initial(cls, params: PolicyParams, seed: int) -> "TrainerState":
        """π_old 與 π_ref 都從初始參數開始；π_ref 之後不再變動"""
        return cls(params=params, old_params=params, ref_params=params, seed=seed)

    def advanced(
        self,
        params: PolicyParams,
        old_params: PolicyParams,
        tokens: int,
        wallclock_ms: float,
    ) -> "TrainerState":
        return replace(
            self,
            params=params,
            old_params=old_params,
            step=self.step + 1,
            tokens_generated=self.tokens_generated + tokens,
            wallclock_ms=self.wallclock_ms + wallclock_ms,
        )


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """結果順序與輸入相同，與執行緒數無關"""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as executor:
        return list(executor.map(fn, items))


def ordered_sum(grads: Sequence[GradientAccumulator]) -> GradientAccumulator:
    """固定索引順序的梯度歸約"""
    if not grads:
        raise InvalidInputError("沒有可歸約的梯度")
    total = GradientAccumulator(grads[0].layout)
    for grad in grads:
        total.add(grad)
    return total


def apply_update(
    params: PolicyParams,
    grad: GradientAccumulator,
    lr: float,
    max_grad_norm: float | None = None,
) -> PolicyParams:
    """θ ← θ + lr·g；lr = 0 時原樣回傳"""
    if lr == 0.0:
        return params
    return params.updated(grad.clipped(max_grad_norm), lr)


def batch_for_step(
    pool: Sequence[GroundingInstance],
    seed: int,
    step: int,
    batch_size: int,
    tag: str = "epoch",
) -> list[GroundingInstance]:
    """
    第 step 步的實例切片

    把所有 epoch 的排列串接起來，取位置 [step·b, (step+1)·b)，
    b = min(batch_size, len(pool))。只依賴 (seed, step)，因此可從檢查點續跑。
    """
    if not pool:
        raise InvalidInputError("實例池為空")
    n = len(pool)
    size = min(batch_size, n)
    batch = []
    for position in range(step * size, (step + 1) * size):
        epoch, offset = divmod(position, n)
        order = derive_rng(seed, tag, epoch).permutation(n)
        batch.append(pool[int(order[offset])])
    return batch


def evaluate_policy(
    policy: Policy,
    holdout: Sequence[GroundingInstance],
    max_len: int,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    threads: int = 1,
) -> EvalReport:
    """貪婪解碼後計算 Recall@θ 與 mIoU"""
    predictions = parallel_map(lambda inst: greedy_decode(policy, inst, max_len), holdout, threads)
    return evaluate(predictions, [inst.gt for inst in holdout], thresholds)


# ---- 訓練迴圈 ----


@dataclass
class TrainResult:
    state: TrainerState
    records: list[dict[str, Any]] = field(default_factory=list)
    final_eval: EvalReport | None = None


def eval_record(state: TrainerState, algo: str, report: EvalReport) -> dict[str, Any]:
    return {
        "step": state.step,
        "algo": algo,
        "event": "eval",
        "cumulative_tokens": state.tokens_generated,
        "cumulative_wallclock_ms": round(state.wallclock_ms, 3),
        "mean_iou": report.mean_iou,
        "recall_at": report.to_dict()["recall_at"],
    }


class Trainer:
    """
    通用訓練迴圈

    子類實作 `step(state, instances)`，回傳新狀態與該步指標
    （wallclock_ms 由迴圈補上）。
    """

    algo = "base"

    def __init__(self, config: ExperimentConfig, threads: int = 1):
        self.config = config
        self.threads = max(1, int(threads))

    @property
    def max_len(self) -> int:
        return self.config.env.max_len

    def step(
        self, state: TrainerState, instances: Sequence[GroundingInstance]
    ) -> tuple[TrainerState, dict[str, Any]]:
        raise NotImplementedError

    def evaluate(self, policy: Policy, holdout: Sequence[GroundingInstance]) -> EvalReport:
        return evaluate_policy(
            policy, holdout, self.max_len, self.config.eval.thresholds, self.threads
        )

    def train(
        self,
        state: TrainerState,
        pool: Sequence[GroundingInstance],
        holdout: Sequence[GroundingInstance] = (),
        steps: int | None = None,
        sink: MetricsSink | None = None,
        on_checkpoint: Callable[[TrainerState], None] | None = None,
    ) -> TrainResult:
        from ..policy.model import ParamPolicy

        cfg = self.config
        steps = cfg.train.steps if steps is None else steps
        eval_every = cfg.eval.eval_every
        result = TrainResult(state=state)

        def emit(record: dict[str, Any]) -> None:
            result.records.append(record)
            if sink is not None:
                sink(record)

        def run_eval(current: TrainerState) -> None:
            if not holdout:
                return
            report = self.evaluate(ParamPolicy(current.params), holdout)
            result.final_eval = report
            emit(eval_record(current, self.algo, report))

        if state.step == 0 and eval_every > 0:
            run_eval(state)

        target = state.step + steps
        while state.step < target:
            instances = batch_for_step(pool, state.seed, state.step, cfg.train.batch_size)
            started = time.perf_counter()
            state, metrics = self.step(state, instances)
            elapsed = (time.perf_counter() - started) * 1000.0
            state = replace(state, wallclock_ms=state.wallclock_ms + elapsed)
            metrics["wallclock_ms"] = round(elapsed, 3)
            emit(metrics)
            trainer_debug_log(
                f"step={metrics['step']} algo={self.algo} tokens={metrics['tokens_generated']}"
            )
            if eval_every > 0 and state.step % eval_every == 0:
                run_eval(state)
            every = cfg.train.checkpoint_every
            if on_checkpoint is not None and every > 0 and state.step % every == 0:
                on_checkpoint(state)

        last = result.records[-1] if result.records else {}
        if last.get("event") != "eval" or last.get("step") != state.step:
            run_eval(state)
        result.state = state
        return result


# ---- 訓練器檢查點 ----


def save_trainer_checkpoint(path: str | Path, state: TrainerState, config_hash: str = "") -> Path:
    return save_checkpoint(
        path,
        {
            "params": state.params,
            "old_params": state.old_params,
            "ref_params": state.ref_params,
        },
        kind="trainer",
        meta={
            "seed": state.seed,
            "step": state.step,
            "tokens_generated": state.tokens_generated,
            "wallclock_ms": state.wallclock_ms,
        },
        config_hash=config_hash,
    )


def load_trainer_checkpoint(path: str | Path) -> TrainerState:
    checkpoint = load_checkpoint(path)
    if checkpoint.kind != "trainer":
        raise ConfigurationError(f"不是訓練器檢查點: {path}")
    meta = checkpoint.meta
    blocks = checkpoint.blocks
    return TrainerState(
        params=blocks["params"],
        old_params=blocks["old_params"],
        ref_params=blocks["ref_params"],
        seed=int(meta["seed"]),
        step=int(meta["step"]),
        tokens_generated=int(meta["tokens_generated"]),
        wallclock_ms=float(meta["wallclock_ms"]),
    )


# ---- 基礎學生 ----


def warm_start(
    params: PolicyParams,
    pool: Sequence[GroundingInstance],
    config: ExperimentConfig,
    threads: int = 1,
) -> PolicyParams:
    """對語法教師做數步 OP-FKD，得到懂格式但不懂答案的學生"""
    from ..policy.teachers import GrammarTeacher
    from .offpolicy import offpolicy_step

    train = config.train
    if train.warm_start_steps == 0:
        return params
    teacher = GrammarTeacher(train.warm_start_sharpness)
    cfg = OffPolicyConfig(learning_rate=train.warm_start_lr)
    state = TrainerState.initial(params, config.seed)
    for step in range(train.warm_start_steps):
        batch = batch_for_step(pool, config.seed, step, train.batch_size, tag="warm")
        state, metrics = offpolicy_step(state, batch, teacher, "opfkd", cfg, threads)
        trainer_debug_log(f"warm_start step={step} loss={metrics['mean_loss']:.4f}")
    return state.params


def make_base_student(
    config: ExperimentConfig, pool: Sequence[GroundingInstance], threads: int = 1
) -> PolicyParams:
    """所有訓練器共用的起點：固定種子初始化後熱啟動"""
    params = init_params(config.env, config.policy, derive_rng(config.seed, "init"))
    return warm_start(params, pool, config, threads)


def mean_or_zero(values: Sequence[float] | np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()) if values.size else 0.0
