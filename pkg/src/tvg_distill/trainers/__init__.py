"""
訓練器：GRPO、在線蒸餾、兩種離線蒸餾基線
"""

from ..config import ExperimentConfig
from ..policy.model import Policy
from ..utils.error_handler import ConfigurationError
from .base import (
    Trainer,
    TrainerState,
    TrainResult,
    batch_for_step,
    evaluate_policy,
    load_trainer_checkpoint,
    make_base_student,
    parallel_map,
    save_trainer_checkpoint,
    warm_start,
)
from .grpo import (
    GroupBatch,
    GrpoTrainer,
    group_normalize,
    grpo_gradient,
    grpo_step,
    rollout_group,
    score_group,
)
from .offpolicy import (
    CorpusTrajectory,
    OffPolicyTrainer,
    encode_gt,
    offpolicy_step,
    opfkd_gradient,
    opfkd_loss,
    oprkd_gradient,
)
from .opd import (
    DenseRewardTrajectory,
    OpdTrainer,
    dense_rewards,
    opd_gradient,
    opd_step,
    reverse_kl_at_state,
)


def make_trainer(
    config: ExperimentConfig, teacher: Policy | None = None, threads: int = 1
) -> Trainer:
    """依 config.algo 建立訓練器；蒸餾類訓練器需要教師"""
    if config.algo == "grpo":
        return GrpoTrainer(config, threads)
    if teacher is None:
        raise ConfigurationError(f"algo = {config.algo} 需要教師")
    if config.algo == "opd":
        return OpdTrainer(config, teacher, threads)
    return OffPolicyTrainer(config, teacher, config.algo, threads)


__all__ = [
    "CorpusTrajectory",
    "DenseRewardTrajectory",
    "GroupBatch",
    "GrpoTrainer",
    "OffPolicyTrainer",
    "OpdTrainer",
    "TrainResult",
    "Trainer",
    "TrainerState",
    "batch_for_step",
    "dense_rewards",
    "encode_gt",
    "evaluate_policy",
    "group_normalize",
    "grpo_gradient",
    "grpo_step",
    "load_trainer_checkpoint",
    "make_base_student",
    "make_trainer",
    "offpolicy_step",
    "opd_gradient",
    "opd_step",
    "opfkd_gradient",
    "opfkd_loss",
    "oprkd_gradient",
    "parallel_map",
    "reverse_kl_at_state",
    "rollout_group",
    "save_trainer_checkpoint",
    "score_group",
    "warm_start",
]
