"""
GRPO 基線
=========

每個實例從 π_old 取樣 G 條軌跡，以群組正規化的序列獎勵 r̂ 與
軌跡層級重要性比 w = πθ(τ)/π_old(τ) 加權分數函數，再減去
β·∇ mean_s KL(πθ(·|s) ‖ π_ref(·|s))（對所有走訪狀態取平均，12 個 token 解析計算）。

r̂ 被均勻地傳播到每個時間步：這正是稀疏信用分配的行為。
"""

from collections.abc import Sequence
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from ..config import GrpoConfig
from ..env.grammar import TemporalInterval
from ..env.instances import GroundingInstance
from ..env.metrics import reward_value
from ..policy.model import (
    ParamPolicy,
    Trajectory,
    backprop,
    reverse_kl_logit_grads,
    sample_trajectory,
    score_logit_grads,
)
from ..policy.params import GradientAccumulator, PolicyParams, check_same_layout
from ..utils.error_handler import InvalidInputError
from ..utils.rng import derive_rng
from .base import (
    Trainer,
    TrainerState,
    apply_update,
    mean_or_zero,
    ordered_sum,
    parallel_map,
)


@dataclass(frozen=True, eq=False)
class GroupBatch:
    instance: GroundingInstance
    trajectories: tuple[Trajectory, ...]
    raw_rewards: np.ndarray | None = None
    normalized_rewards: np.ndarray | None = None

    @property
    def group_size(self) -> int:
        return len(self.trajectories)

    @property
    def tokens_generated(self) -> int:
        return sum(t.length for t in self.trajectories)


def rollout_group(
    old_params: PolicyParams,
    instance: GroundingInstance,
    group_size: int,
    rng: np.random.Generator,
    max_len: int,
    threads: int = 1,
) -> GroupBatch:
    """第 i 條軌跡使用 rng 的第 i 個子流，與執行順序無關"""
    if group_size < 2:
        raise InvalidInputError(f"group_size 必須 ≥ 2: {group_size}")
    streams = rng.spawn(group_size)
    trajectories = parallel_map(
        lambda stream: sample_trajectory(old_params, instance, stream, max_len),
        streams,
        threads,
    )
    return GroupBatch(instance=instance, trajectories=tuple(trajectories))


def score_group(
    batch: GroupBatch, gt: TemporalInterval | None = None, reward_kind: str = "iou"
) -> GroupBatch:
    gt = batch.instance.gt if gt is None else gt
    video_length = batch.instance.video_length
    rewards = np.array(
        [reward_value(reward_kind, t.decoded, gt, video_length) for t in batch.trajectories]
    )
    return replace(batch, raw_rewards=rewards)


def group_normalize(raw_rewards: Sequence[float] | np.ndarray, epsilon: float = 1e-8) -> np.ndarray:
    """(r − mean) / (母體標準差 + ε)；全部相等時回傳精確的零"""
    rewards = np.asarray(raw_rewards, dtype=np.float64)
    if rewards.ndim != 1 or rewards.size < 2:
        raise InvalidInputError("群組正規化需要至少 2 個獎勵")
    if np.ptp(rewards) == 0.0:
        return np.zeros_like(rewards)
    centered = rewards - rewards.mean()
    return centered / (rewards.std() + epsilon)


def normalize_batch(batch: GroupBatch, epsilon: float = 1e-8) -> GroupBatch:
    if batch.raw_rewards is None:
        raise InvalidInputError("群組尚未評分")
    return replace(batch, normalized_rewards=group_normalize(batch.raw_rewards, epsilon))


def _visited_states(batch: GroupBatch) -> int:
    return sum(t.length for t in batch.trajectories)


def grpo_gradient(
    params: PolicyParams,
    old_params: PolicyParams,
    ref_params: PolicyParams,
    batch: GroupBatch,
    beta: float,
) -> GradientAccumulator:
    """
    替代目標的上升梯度

        (1/G) Σᵢ wᵢ·r̂ᵢ·Σₜ ∇log πθ(aₜ|sₜ) − β·∇ mean_s KL(πθ ‖ π_ref)
    """
    try:
        check_same_layout(params, old_params, ref_params)
    except InvalidInputError as exc:
        raise InvalidInputError("params / old_params / ref_params 維度不一致") from exc
    if batch.normalized_rewards is None:
        raise InvalidInputError("群組尚未正規化")

    student = ParamPolicy(params)
    old = ParamPolicy(old_params)
    ref = ParamPolicy(ref_params)
    instance = batch.instance
    group_size = batch.group_size
    n_states = _visited_states(batch)

    grads = []
    for traj, advantage in zip(batch.trajectories, batch.normalized_rewards, strict=True):
        tokens = traj.tokens
        log_dists = student.trajectory_log_distributions(instance, tokens)
        current = log_dists[np.arange(len(tokens)), np.asarray(tokens)]
        ratio = np.exp(current.sum() - old.evaluate_trajectory(instance, tokens).sum())
        weights = np.full(len(tokens), ratio * advantage / group_size)
        logit_grads = score_logit_grads(log_dists, tokens, weights)
        if beta != 0.0:
            ref_dists = ref.trajectory_log_distributions(instance, tokens)
            logit_grads -= (beta / n_states) * reverse_kl_logit_grads(log_dists, ref_dists)
        grads.append(backprop(params, instance, tokens, logit_grads))
    return ordered_sum(grads)


def grpo_surrogate(
    params: PolicyParams,
    old_params: PolicyParams,
    ref_params: PolicyParams,
    batch: GroupBatch,
    beta: float,
) -> float:
    """grpo_gradient 所微分的純量目標，用於有限差分檢查"""
    student = ParamPolicy(params)
    old = ParamPolicy(old_params)
    ref = ParamPolicy(ref_params)
    instance = batch.instance
    value = 0.0
    kl_total = 0.0
    for traj, advantage in zip(batch.trajectories, batch.normalized_rewards, strict=True):
        log_dists = student.trajectory_log_distributions(instance, traj.tokens)
        current = log_dists[np.arange(traj.length), np.asarray(traj.tokens)].sum()
        ratio = np.exp(current - old.evaluate_trajectory(instance, traj.tokens).sum())
        value += ratio * advantage / batch.group_size
        ref_dists = ref.trajectory_log_distributions(instance, traj.tokens)
        kl_total += float(np.sum(np.exp(log_dists) * (log_dists - ref_dists)))
    return float(value - beta * kl_total / _visited_states(batch))


def grpo_step(
    state: TrainerState,
    instances: Sequence[GroundingInstance],
    cfg: GrpoConfig,
    max_len: int,
    threads: int = 1,
) -> tuple[TrainerState, dict[str, Any]]:
    """
    一次 SGD 上升步

    每個實例位置 j 使用 derive_rng(seed, "grpo", step, j) 產生群組；
    梯度依位置順序歸約後取平均。更新後 π_old ← θ。
    """
    if not instances:
        raise InvalidInputError("訓練切片為空")

    def process(position: int) -> tuple[GradientAccumulator, GroupBatch]:
        instance = instances[position]
        rng = derive_rng(state.seed, "grpo", state.step, position)
        batch = rollout_group(state.old_params, instance, cfg.group_size, rng, max_len)
        batch = normalize_batch(score_group(batch, reward_kind=cfg.reward), cfg.norm_epsilon)
        grad = grpo_gradient(state.params, state.old_params, state.ref_params, batch, cfg.beta)
        return grad, batch

    results = parallel_map(process, range(len(instances)), threads)
    grad = ordered_sum([g for g, _ in results]).scaled(1.0 / len(instances))
    batches = [b for _, b in results]

    params = apply_update(state.params, grad, cfg.learning_rate, cfg.max_grad_norm)
    tokens = sum(b.tokens_generated for b in batches)
    new_state = state.advanced(params, params, tokens, 0.0)
    metrics = {
        "step": new_state.step,
        "algo": "grpo",
        "mean_reward": mean_or_zero(np.concatenate([b.raw_rewards for b in batches])),
        "grad_norm": grad.norm(),
        "tokens_generated": tokens,
    }
    return new_state, metrics


class GrpoTrainer(Trainer):
    algo = "grpo"

    def step(
        self, state: TrainerState, instances: Sequence[GroundingInstance]
    ) -> tuple[TrainerState, dict[str, Any]]:
        return grpo_step(state, instances, self.config.grpo, self.max_len, self.threads)
