"""
小型自迴歸類別策略：參數、取樣、教師強制評分、解析梯度與固定教師
"""

from .model import (
    ParamPolicy,
    Policy,
    PolicyState,
    Trajectory,
    backprop,
    evaluate_trajectory,
    grad_log_prob,
    greedy_decode,
    log_prob,
    readout_features,
    sample_trajectory,
    state_features,
    token_distribution,
)
from .params import (
    GradientAccumulator,
    ParamLayout,
    PolicyParams,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sharpened_copy,
    zero_params,
)
from .teachers import (
    GrammarTeacher,
    OracleTeacher,
    load_policy,
    make_oracle_teacher,
    save_teacher,
)


__all__ = [
    "GradientAccumulator",
    "GrammarTeacher",
    "OracleTeacher",
    "ParamLayout",
    "ParamPolicy",
    "Policy",
    "PolicyParams",
    "PolicyState",
    "Trajectory",
    "backprop",
    "evaluate_trajectory",
    "grad_log_prob",
    "greedy_decode",
    "init_params",
    "load_checkpoint",
    "load_policy",
    "log_prob",
    "make_oracle_teacher",
    "readout_features",
    "sample_trajectory",
    "save_checkpoint",
    "save_teacher",
    "sharpened_copy",
    "state_features",
    "token_distribution",
    "zero_params",
]
