"""
離線策略蒸餾基線
================

兩者都只在固定語料軌跡（標註的正規編碼）上做教師強制，不取樣：

- OP-RKD：與在線蒸餾相同的稠密反向 KL 獎勵，但 τ 來自語料
- OP-FKD：逐狀態的全詞表正向 KL，ℓ_t = KL(P_tea ‖ P_stu)，
  logit 上升方向為 q − p
"""

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..config import ExperimentConfig, OffPolicyConfig
from ..env.grammar import decode_tokens, encode_interval
from ..env.instances import GroundingInstance
from ..policy.model import ParamPolicy, Policy, Trajectory, backprop
from ..policy.params import GradientAccumulator, PolicyParams
from ..utils.error_handler import InvalidInputError
from .base import Trainer, TrainerState, apply_update, ordered_sum, parallel_map
from .opd import DenseRewardTrajectory, dense_rewards, opd_gradient, opd_surrogate


VARIANTS = ("oprkd", "opfkd")


@dataclass(frozen=True)
class CorpusTrajectory:
    instance: GroundingInstance
    tokens: tuple[int, ...]
    origin: str = "corpus"

    def __post_init__(self) -> None:
        decoded = decode_tokens(self.tokens, self.instance.video_length)
        if decoded != self.instance.gt:
            raise InvalidInputError(f"語料軌跡無法解碼為標註: {decoded}")


def encode_gt(instance: GroundingInstance) -> CorpusTrajectory:
    return CorpusTrajectory(instance=instance, tokens=encode_interval(instance.gt))


def _as_dense(
    params: PolicyParams,
    old_params: PolicyParams,
    corpus_traj: CorpusTrajectory,
    teacher: Policy,
) -> DenseRewardTrajectory:
    instance = corpus_traj.instance
    tokens = corpus_traj.tokens
    student_logp = ParamPolicy(params).evaluate_trajectory(instance, tokens)
    teacher_logp = teacher.evaluate_trajectory(instance, tokens)
    trajectory = Trajectory(
        tokens=tokens,
        logp_sampler=ParamPolicy(old_params).evaluate_trajectory(instance, tokens),
        decoded=instance.gt,
    )
    return DenseRewardTrajectory(
        instance=instance,
        trajectory=trajectory,
        teacher_logp=teacher_logp,
        rewards=dense_rewards(student_logp, teacher_logp),
    )


def oprkd_gradient(
    params: PolicyParams,
    old_params: PolicyParams,
    corpus_traj: CorpusTrajectory,
    teacher: Policy,
) -> GradientAccumulator:
    """與 opd_gradient 公式相同，只差軌跡來源"""
    return opd_gradient(params, old_params, _as_dense(params, old_params, corpus_traj, teacher))


def oprkd_surrogate(
    params: PolicyParams,
    old_params: PolicyParams,
    corpus_traj: CorpusTrajectory,
    teacher: Policy,
    rewards: np.ndarray,
) -> float:
    return opd_surrogate(
        params, old_params, _as_dense(params, old_params, corpus_traj, teacher), rewards
    )


def _log_dists(
    params: PolicyParams, corpus_traj: CorpusTrajectory, teacher: Policy
) -> tuple[np.ndarray, np.ndarray]:
    instance = corpus_traj.instance
    student = ParamPolicy(params).trajectory_log_distributions(instance, corpus_traj.tokens)
    target = teacher.trajectory_log_distributions(instance, corpus_traj.tokens)
    return student, target


def opfkd_loss(
    params: PolicyParams, corpus_traj: CorpusTrajectory, teacher: Policy
) -> np.ndarray:
    """逐狀態 Σ_w P_tea(w)·(log P_tea(w) − log P_stu(w))"""
    student, target = _log_dists(params, corpus_traj, teacher)
    losses = np.sum(np.exp(target) * (target - student), axis=-1)
    return np.maximum(0.0, losses)


def opfkd_gradient(
    params: PolicyParams, corpus_traj: CorpusTrajectory, teacher: Policy
) -> GradientAccumulator:
    """−Σₜ ℓ_t 的上升梯度"""
    student, target = _log_dists(params, corpus_traj, teacher)
    logit_grads = np.exp(target) - np.exp(student)
    return backprop(params, corpus_traj.instance, corpus_traj.tokens, logit_grads)


def offpolicy_step(
    state: TrainerState,
    instances: Sequence[GroundingInstance],
    teacher: Policy,
    variant: str,
    cfg: OffPolicyConfig,
    threads: int = 1,
) -> tuple[TrainerState, dict[str, Any]]:
    """語料上的教師強制步；不取樣，tokens_generated 恆為 0"""
    if variant not in VARIANTS:
        raise InvalidInputError(f"未知的離線蒸餾變體: {variant}")
    if not instances:
        raise InvalidInputError("訓練切片為空")

    def process(instance: GroundingInstance) -> tuple[GradientAccumulator, np.ndarray]:
        corpus = encode_gt(instance)
        if variant == "opfkd":
            return opfkd_gradient(state.params, corpus, teacher), opfkd_loss(
                state.params, corpus, teacher
            )
        dense = _as_dense(state.params, state.old_params, corpus, teacher)
        return opd_gradient(state.params, state.old_params, dense), -dense.rewards

    results = parallel_map(process, instances, threads)
    grad = ordered_sum([g for g, _ in results]).scaled(1.0 / len(instances))
    losses = np.concatenate([loss for _, loss in results])

    params = apply_update(state.params, grad, cfg.learning_rate, cfg.max_grad_norm)
    new_state = state.advanced(params, params, 0, 0.0)
    metrics = {
        "step": new_state.step,
        "algo": variant,
        "mean_loss": float(losses.mean()),
        "grad_norm": grad.norm(),
        "tokens_generated": 0,
    }
    return new_state, metrics


class OffPolicyTrainer(Trainer):
    def __init__(
        self, config: ExperimentConfig, teacher: Policy, variant: str, threads: int = 1
    ):
        super().__init__(config, threads)
        if variant not in VARIANTS:
            raise InvalidInputError(f"未知的離線蒸餾變體: {variant}")
        self.teacher = teacher
        self.algo = variant

    def step(
        self, state: TrainerState, instances: Sequence[GroundingInstance]
    ) -> tuple[TrainerState, dict[str, Any]]:
        return offpolicy_step(
            state, instances, self.teacher, self.algo, self.config.offpolicy, self.threads
        )
