"""
教師驗證的分歧聚焦課程：可靠度驗證、分歧評分、四種取樣器、難度取樣與多輪編排
"""

from .rounds import RoundReport, RoundsResult, run_rounds
from .samplers import (
    bbds_allocations,
    base_model_ious,
    difficulty_gaussian_sample,
    difficulty_probabilities,
    gaussian_weights,
    read_selection,
    sample_bbds,
    sample_dsus,
    sample_gwds,
    sample_topk,
    select_samples,
    selection_to_text,
)
from .scoring import (
    ScoredSample,
    disagreement_score,
    read_scored_csv,
    score_pool,
    scored_to_csv,
    teacher_reliability,
)


__all__ = [
    "RoundReport",
    "RoundsResult",
    "ScoredSample",
    "base_model_ious",
    "bbds_allocations",
    "difficulty_gaussian_sample",
    "difficulty_probabilities",
    "disagreement_score",
    "gaussian_weights",
    "read_scored_csv",
    "read_selection",
    "run_rounds",
    "sample_bbds",
    "sample_dsus",
    "sample_gwds",
    "sample_topk",
    "score_pool",
    "scored_to_csv",
    "select_samples",
    "selection_to_text",
    "teacher_reliability",
]
