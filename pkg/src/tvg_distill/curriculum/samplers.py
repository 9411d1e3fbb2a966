"""
課程篩選策略
============

| 策略  | 規則                                                         |
|-------|--------------------------------------------------------------|
| dsus  | 依 δ 降序排序後取等距索引 j_t = round(1 + (n−1)·t/(k−1))       |
| topk  | δ 最大的 k 個                                                |
| bbds  | δ 值域等寬分 B 桶，k_b = ⌊k/B⌋ + [b < k mod B]，桶內等距取樣    |
| gwds  | pᵢ ∝ exp(−(δᵢ − c)² / 2σ²)，依序無放回抽樣並重新正規化         |

排序一律為 δ 降序、再以實例 id 升序打破平手。
難度取樣器以同樣的高斯權重作用在基礎模型 IoU 上，用於建立 GRPO 訓練池。
"""

from collections.abc import Sequence
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.special import softmax

from ..config import CurriculumConfig
from ..debug import curriculum_debug_log
from ..env.instances import GroundingInstance
from ..env.metrics import prediction_iou
from ..policy.model import Policy, greedy_decode
from ..trainers.base import parallel_map
from ..utils.error_handler import InvalidInputError, SelectionError
from ..utils.rng import sample_index
from .scoring import ScoredSample


def ranked(scored: Sequence[ScoredSample], key: str = "delta") -> list[ScoredSample]:
    return sorted(scored, key=lambda s: (-s.sort_value(key), s.id))


def _check_budget(k: int, n: int, minimum: int = 1) -> None:
    if k < minimum:
        raise InvalidInputError(f"k 必須 ≥ {minimum}: {k}")
    if k > n:
        raise InvalidInputError(f"k ({k}) 超過可選樣本數 ({n})")


def even_spaced_indices(n: int, k: int) -> list[int]:
    """1-based 的 round(1 + (n−1)·t/(k−1))（四捨五入到偶數）轉成 0-based；k = 1 時只取第一個"""
    if k == 0:
        return []
    if k == 1:
        return [0]
    return [round(1 + Fraction(n - 1) * t / (k - 1)) - 1 for t in range(k)]


def sample_dsus(
    scored: Sequence[ScoredSample], k: int, key: str = "delta"
) -> list[ScoredSample]:
    _check_budget(k, len(scored), minimum=2)
    order = ranked(scored, key)
    return [order[j] for j in even_spaced_indices(len(order), k)]


def sample_topk(
    scored: Sequence[ScoredSample], k: int, key: str = "delta"
) -> list[ScoredSample]:
    _check_budget(k, len(scored))
    return ranked(scored, key)[:k]


def bbds_allocations(k: int, buckets: int) -> list[int]:
    if buckets < 1:
        raise InvalidInputError(f"桶數必須 ≥ 1: {buckets}")
    base, extra = divmod(k, buckets)
    return [base + (1 if b < extra else 0) for b in range(buckets)]


def bucketize(values: Sequence[float], buckets: int) -> list[int]:
    """等寬分桶；最後一桶包含最大值"""
    values = np.asarray(values, dtype=np.float64)
    low, high = float(values.min()), float(values.max())
    width = (high - low) / buckets
    index = np.floor((values - low) / width).astype(int)
    return [int(i) for i in np.clip(index, 0, buckets - 1)]


def sample_bbds(
    scored: Sequence[ScoredSample], k: int, buckets: int, key: str = "delta"
) -> list[ScoredSample]:
    """
    分桶平衡取樣

    桶內樣本不足時全取，差額移到下一個非空桶；掃完仍有差額時
    再依桶序補上未選的樣本。δ 全部相等時退化為單一桶。
    """
    _check_budget(k, len(scored))
    order = ranked(scored, key)
    values = [s.sort_value(key) for s in order]
    if max(values) == min(values):
        return order[:k]

    members: list[list[ScoredSample]] = [[] for _ in range(buckets)]
    for sample, bucket in zip(order, bucketize(values, buckets), strict=True):
        members[bucket].append(sample)

    selected: list[ScoredSample] = []
    chosen: set[str] = set()
    carry = 0
    for bucket, allocation in zip(members, bbds_allocations(k, buckets), strict=True):
        want = allocation + carry
        take = min(want, len(bucket))
        for j in even_spaced_indices(len(bucket), take):
            selected.append(bucket[j])
            chosen.add(bucket[j].id)
        carry = want - take

    for bucket in members:
        for sample in bucket:
            if carry == 0:
                break
            if sample.id not in chosen:
                selected.append(sample)
                chosen.add(sample.id)
                carry -= 1
    return selected


def gaussian_weights(values: Sequence[float], center: float, sigma: float) -> np.ndarray:
    """exp(−(x − c)² / 2σ²) / Z"""
    if sigma <= 0:
        raise InvalidInputError(f"sigma 必須 > 0: {sigma}")
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InvalidInputError("權重列表為空")
    return softmax(-((values - center) ** 2) / (2.0 * sigma**2))


def draw_without_replacement(
    probs: np.ndarray, k: int, rng: np.random.Generator
) -> list[int]:
    """依序抽樣，每次抽後把已選項目歸零並重新正規化"""
    weights = np.array(probs, dtype=np.float64)
    picks: list[int] = []
    for _ in range(k):
        total = weights.sum()
        if total <= 0:
            remaining = np.array([i not in picks for i in range(len(weights))], dtype=float)
            current = remaining / remaining.sum()
        else:
            current = weights / total
        index = sample_index(current, rng)
        picks.append(index)
        weights[index] = 0.0
    return picks


def sample_gwds(
    scored: Sequence[ScoredSample],
    k: int,
    center: float,
    sigma: float,
    rng: np.random.Generator,
    key: str = "delta",
) -> list[ScoredSample]:
    _check_budget(k, len(scored))
    order = ranked(scored, key)
    probs = gaussian_weights([s.sort_value(key) for s in order], center, sigma)
    return [order[i] for i in draw_without_replacement(probs, k, rng)]


def difficulty_probabilities(ious: Sequence[float], mu: float, sigma: float) -> np.ndarray:
    return gaussian_weights(ious, mu, sigma)


def difficulty_gaussian_sample(
    pool: Sequence[GroundingInstance],
    ious: Sequence[float],
    k: int,
    mu: float,
    sigma: float,
    rng: np.random.Generator,
) -> list[GroundingInstance]:
    """以基礎模型 IoU 為中心 μ 的高斯權重無放回取 k 個實例"""
    if len(pool) != len(ious):
        raise InvalidInputError("實例數與 IoU 數不一致")
    _check_budget(k, len(pool))
    probs = difficulty_probabilities(ious, mu, sigma)
    return [pool[i] for i in draw_without_replacement(probs, k, rng)]


def base_model_ious(
    policy: Policy, pool: Sequence[GroundingInstance], max_len: int, threads: int = 1
) -> list[float]:
    """基礎模型的貪婪解碼 IoU"""
    return parallel_map(
        lambda inst: prediction_iou(greedy_decode(policy, inst, max_len), inst.gt), pool, threads
    )


def select_samples(
    scored: Sequence[ScoredSample], cfg: CurriculumConfig, rng: np.random.Generator
) -> list[ScoredSample]:
    """
    只在可靠樣本中依 cfg.strategy 選 k 個

    Raises:
        SelectionError: 可靠樣本少於 k
    """
    reliable = [s for s in scored if s.reliable]
    k = cfg.k_select
    if len(reliable) < k:
        raise SelectionError(
            f"可靠樣本 {len(reliable)} 個，少於篩選預算 {k}",
            shortfall=k - len(reliable),
        )
    if not cfg.use_dbtp:
        order = sorted(reliable, key=lambda s: s.id)
        picks = rng.permutation(len(order))[:k]
        return [order[int(i)] for i in picks]

    key = cfg.sort_key
    if cfg.strategy == "dsus":
        selected = sample_dsus(reliable, k, key)
    elif cfg.strategy == "topk":
        selected = sample_topk(reliable, k, key)
    elif cfg.strategy == "bbds":
        selected = sample_bbds(reliable, k, cfg.bbds_buckets, key)
    else:
        selected = sample_gwds(reliable, k, cfg.gwds_center, cfg.gwds_sigma, rng, key)
    curriculum_debug_log(f"策略 {cfg.strategy} 從 {len(reliable)} 個可靠樣本選出 {len(selected)} 個")
    return selected


# ---- 選擇清單 ----


def selection_to_text(ids: Sequence[str], config_hash: str = "") -> str:
    return f"# config_hash={config_hash}\n" + "".join(f"{i}\n" for i in ids)


def read_selection(path: str | Path) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"選擇清單不存在: {path}")
    return [
        line.strip()
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip() and not line.startswith("#")
    ]
