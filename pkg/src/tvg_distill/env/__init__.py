"""
合成時間定位環境：實例、動作詞表與文法、IoU 指標
"""

from .grammar import (
    EOS,
    SEP,
    TOKEN_NAMES,
    VOCAB_SIZE,
    DecodeFailure,
    TemporalInterval,
    decode_trajectory,
    encode_interval,
    tokens_from_names,
)
from .instances import (
    GroundingInstance,
    generate_instance,
    generate_pools,
    query_run,
    read_pool,
    write_pool,
)
from .metrics import (
    DEFAULT_THRESHOLDS,
    EvalReport,
    evaluate,
    iou,
    reward_value,
    summarize_ious,
    timestamp_aware_iou,
)


__all__ = [
    "DEFAULT_THRESHOLDS",
    "EOS",
    "SEP",
    "TOKEN_NAMES",
    "VOCAB_SIZE",
    "DecodeFailure",
    "EvalReport",
    "GroundingInstance",
    "TemporalInterval",
    "decode_trajectory",
    "encode_interval",
    "evaluate",
    "generate_instance",
    "generate_pools",
    "iou",
    "query_run",
    "read_pool",
    "reward_value",
    "summarize_ious",
    "timestamp_aware_iou",
    "tokens_from_names",
    "write_pool",
]
