"""
在線策略蒸餾
============

每個實例只取樣一條學生軌跡；固定教師只做教師強制評分，從不生成 token。
每個 token 的稠密獎勵 r_t = −(log πθ(aₜ|sₜ) − log π_tea(aₜ|sₜ))，
更新方向為 Σₜ sg(r_t)·(πθ/π_old)(aₜ|sₜ)·∇θ log πθ(aₜ|sₜ)。

r_t 預設在目前參數下重新計算；`reward_at_sampling` 改用取樣當下的值。
"""

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..config import ExperimentConfig, OpdConfig
from ..env.instances import GroundingInstance
from ..policy.model import (
    ParamPolicy,
    Policy,
    Trajectory,
    backprop,
    sample_trajectory,
    score_logit_grads,
)
from ..policy.params import GradientAccumulator, PolicyParams
from ..utils.error_handler import InvalidInputError, NumericError
from ..utils.rng import derive_rng
from .base import Trainer, TrainerState, apply_update, ordered_sum, parallel_map


def dense_rewards(
    student_logp: Sequence[float] | np.ndarray, teacher_logp: Sequence[float] | np.ndarray
) -> np.ndarray:
    student = np.asarray(student_logp, dtype=np.float64)
    teacher = np.asarray(teacher_logp, dtype=np.float64)
    if student.shape != teacher.shape:
        raise InvalidInputError(
            f"學生與教師 log 機率長度不一致: {student.shape} != {teacher.shape}"
        )
    return -(student - teacher)


@dataclass(frozen=True, eq=False)
class DenseRewardTrajectory:
    instance: GroundingInstance
    trajectory: Trajectory
    teacher_logp: np.ndarray
    rewards: np.ndarray

    def __post_init__(self) -> None:
        n = self.trajectory.length
        if len(self.teacher_logp) != n or len(self.rewards) != n:
            raise InvalidInputError("稠密獎勵長度必須等於 token 數")

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.trajectory.tokens

    @classmethod
    def scored(
        cls, instance: GroundingInstance, trajectory: Trajectory, teacher: Policy
    ) -> "DenseRewardTrajectory":
        """以取樣時的學生 log 機率與教師強制評分建立"""
        teacher_logp = teacher.evaluate_trajectory(instance, trajectory.tokens)
        return cls(
            instance=instance,
            trajectory=trajectory,
            teacher_logp=teacher_logp,
            rewards=dense_rewards(trajectory.logp_sampler, teacher_logp),
        )


def _current_terms(
    params: PolicyParams, old_params: PolicyParams, traj: DenseRewardTrajectory
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    instance = traj.instance
    tokens = traj.tokens
    log_dists = ParamPolicy(params).trajectory_log_distributions(instance, tokens)
    current = log_dists[np.arange(len(tokens)), np.asarray(tokens)]
    ratio = np.exp(current - ParamPolicy(old_params).evaluate_trajectory(instance, tokens))
    return log_dists, current, ratio


def opd_gradient(
    params: PolicyParams,
    old_params: PolicyParams,
    traj: DenseRewardTrajectory,
    reward_at_sampling: bool = False,
) -> GradientAccumulator:
    log_dists, current, ratio = _current_terms(params, old_params, traj)
    rewards = traj.rewards if reward_at_sampling else dense_rewards(current, traj.teacher_logp)
    logit_grads = score_logit_grads(log_dists, traj.tokens, rewards * ratio)
    return backprop(params, traj.instance, traj.tokens, logit_grads)


def opd_surrogate(
    params: PolicyParams,
    old_params: PolicyParams,
    traj: DenseRewardTrajectory,
    rewards: np.ndarray | None = None,
) -> float:
    """Σₜ r_t·exp(log πθ − log π_old)，r_t 視為常數"""
    _, _, ratio = _current_terms(params, old_params, traj)
    rewards = traj.rewards if rewards is None else rewards
    return float(np.sum(rewards * ratio))


def reverse_kl_at_state(
    student_dist: Sequence[float] | np.ndarray, teacher_dist: Sequence[float] | np.ndarray
) -> float:
    """KL(p_stu ‖ p_tea)，恆 ≥ 0"""
    p = np.asarray(student_dist, dtype=np.float64)
    q = np.asarray(teacher_dist, dtype=np.float64)
    if p.shape != q.shape:
        raise InvalidInputError("兩個分佈長度不一致")
    support = p > 0
    if np.any(q[support] <= 0):
        raise NumericError("教師在學生有質量的 token 上機率為零")
    kl = float(np.sum(p[support] * (np.log(p[support]) - np.log(q[support]))))
    return max(0.0, kl)


def reverse_kl_from_logs(student_logp: np.ndarray, teacher_logp: np.ndarray) -> np.ndarray:
    """逐狀態的 KL(p ‖ q)，輸入為 [T, V] 的 log 分佈"""
    p = np.exp(student_logp)
    return np.maximum(0.0, np.sum(p * (student_logp - teacher_logp), axis=-1))


def opd_step(
    state: TrainerState,
    instances: Sequence[GroundingInstance],
    teacher: Policy,
    cfg: OpdConfig,
    max_len: int,
    threads: int = 1,
) -> tuple[TrainerState, dict[str, Any]]:
    """
    一次在線蒸餾步

    每個實例：從 π_old 取樣一條軌跡、教師強制評分、計算稠密獎勵並累積梯度。
    π_old 每 old_refresh_every 步刷新為 θ。
    """
    if not instances:
        raise InvalidInputError("訓練切片為空")

    def process(position: int) -> tuple[GradientAccumulator, DenseRewardTrajectory]:
        instance = instances[position]
        rng = derive_rng(state.seed, "opd", state.step, position)
        trajectory = sample_trajectory(state.old_params, instance, rng, max_len)
        scored = DenseRewardTrajectory.scored(instance, trajectory, teacher)
        grad = opd_gradient(state.params, state.old_params, scored, cfg.reward_at_sampling)
        return grad, scored

    results = parallel_map(process, range(len(instances)), threads)
    grad = ordered_sum([g for g, _ in results]).scaled(1.0 / len(instances))
    trajectories = [t for _, t in results]

    params = apply_update(state.params, grad, cfg.learning_rate, cfg.max_grad_norm)
    refresh = (state.step + 1) % cfg.old_refresh_every == 0
    old_params = params if refresh else state.old_params
    tokens = sum(t.trajectory.length for t in trajectories)
    rewards = np.concatenate([t.rewards for t in trajectories])
    new_state = state.advanced(params, old_params, tokens, 0.0)
    mean_reward = float(rewards.mean())
    metrics = {
        "step": new_state.step,
        "algo": "opd",
        "mean_dense_reward": mean_reward,
        "kl_proxy": -mean_reward,
        "grad_norm": grad.norm(),
        "tokens_generated": tokens,
    }
    return new_state, metrics


class OpdTrainer(Trainer):
    algo = "opd"

    def __init__(self, config: ExperimentConfig, teacher: Policy, threads: int = 1):
        super().__init__(config, threads)
        self.teacher = teacher

    def step(
        self, state: TrainerState, instances: Sequence[GroundingInstance]
    ) -> tuple[TrainerState, dict[str, Any]]:
        return opd_step(state, instances, self.teacher, self.config.opd, self.max_len, self.threads)
