"""
梯度估計量的變異數
==================

在凍結的參數點上抽取 n 個獨立的單軌跡梯度估計：

- opd：Σₜ rₜ·∇log πθ(aₜ|sₜ)，rₜ 為稠密反向 KL 獎勵
- grpo：r̂₀·Σₜ ∇log πθ(aₜ|sₜ)，r̂₀ 來自一個獨立 G 群組中第一條軌跡的群組正規化獎勵
  （單軌跡貢獻，不除以 G；tokens_used 計入整個群組）

全參數的逐座標變異數只在該實例的靜態支撐上儲存（其餘座標恆為零）。
在 output_weights 切片上把 Var(Σₜ Xₜ) 分解為 Σₜ Var(Xₜ) 與 2·Σ_{t<t'} Cov(Xₜ, Xₜ')，
以 S1[t]、S2[t, t'] 累加和計算（較短軌跡以零補齊），與總變異數同一組樣本。
"""

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..config import GrpoConfig
from ..debug import analysis_debug_log
from ..env.instances import GroundingInstance
from ..policy.model import ParamPolicy, Policy, backprop, readout_index, score_logit_grads
from ..policy.params import PolicyParams
from ..trainers.base import parallel_map
from ..trainers.grpo import normalize_batch, rollout_group, score_group
from ..trainers.opd import dense_rewards
from ..utils.error_handler import InvalidInputError


ESTIMATORS = ("grpo", "opd")
MIN_SAMPLES = 1000
REPORT_NOTE = (
    "single-trajectory estimator contributions; grpo uses r̂ of trajectory 0 of an "
    "independent group of size G without 1/G scaling, tokens_used counts the whole group"
)


@dataclass
class VarianceReport:
    estimator: str
    n_samples: int
    trace_cov: float
    per_coord_var: np.ndarray
    decomposition: dict[str, float]
    mean_grad_sq_norm: float
    relative_variance: float | None
    tokens_used: int
    group_size: int | None = None
    samples: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "estimator": self.estimator,
            "n_samples": self.n_samples,
            "trace_cov": self.trace_cov,
            "decomposition": dict(self.decomposition),
            "mean_grad_sq_norm": self.mean_grad_sq_norm,
            "relative_variance": self.relative_variance,
            "tokens_used": self.tokens_used,
            "group_size": self.group_size,
            "n_coords": int(self.per_coord_var.size),
            "max_coord_var": float(self.per_coord_var.max()) if self.per_coord_var.size else 0.0,
            "note": REPORT_NOTE,
        }

    def csv_row(self) -> dict[str, Any]:
        decomposition = self.decomposition
        return {
            "estimator": self.estimator,
            "n_samples": self.n_samples,
            "trace_cov": self.trace_cov,
            "sum_var_terms": decomposition["sum_var_terms"],
            "sum_cov_terms": decomposition["sum_cov_terms"],
            "total": decomposition["total"],
            "mean_grad_sq_norm": self.mean_grad_sq_norm,
            "tokens_used": self.tokens_used,
        }


def static_support(params: PolicyParams, instance: GroundingInstance) -> np.ndarray:
    """該實例的梯度可能非零的扁平座標；讀出區塊只有三個特徵欄"""
    layout = params.layout
    offsets = layout.offsets()
    parts = [
        np.arange(*offsets[name])
        for name in ("context_embed", "token_embed", "output_weights", "output_bias")
    ]
    start, _ = offsets["readout_weights"]
    rows = np.arange(layout.max_len * layout.vocab) * layout.readout_dim
    columns = readout_index(instance)
    parts.append(start + (rows[:, None] + columns[None, :]).ravel())
    return np.concatenate(parts)


def _slice_terms(logit_grads: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """每個時間步對 output_weights 的貢獻 Xₜ = outer(gₜ, fₜ)，攤平成 [T, V·d_state]"""
    return (logit_grads[:, :, None] * feats[:, None, :]).reshape(len(logit_grads), -1)


def _draw_sample(
    estimator: str,
    params: PolicyParams,
    context: Policy | GrpoConfig,
    instance: GroundingInstance,
    rng: np.random.Generator,
    max_len: int,
) -> tuple[np.ndarray, np.ndarray, int]:
    student = ParamPolicy(params)
    if estimator == "opd":
        trajectory = student.sample_trajectory(instance, rng, max_len)
        tokens = trajectory.tokens
        log_dists = student.trajectory_log_distributions(instance, tokens)
        current = log_dists[np.arange(len(tokens)), np.asarray(tokens)]
        rewards = dense_rewards(current, context.evaluate_trajectory(instance, tokens))
        weights = rewards
        tokens_used = len(tokens)
    else:
        batch = rollout_group(params, instance, context.group_size, rng, max_len)
        batch = normalize_batch(score_group(batch, reward_kind=context.reward), context.norm_epsilon)
        tokens = batch.trajectories[0].tokens
        log_dists = student.trajectory_log_distributions(instance, tokens)
        weights = np.full(len(tokens), batch.normalized_rewards[0])
        tokens_used = batch.tokens_generated
    logit_grads = score_logit_grads(log_dists, tokens, weights)
    full = backprop(params, instance, tokens, logit_grads).vector
    terms = _slice_terms(logit_grads, student.features(instance, tokens))
    return full, terms, tokens_used


def measure_variance(
    estimator: str,
    frozen_params: PolicyParams,
    context: Policy | GrpoConfig | str,
    instance: GroundingInstance,
    n_samples: int,
    rng: np.random.Generator,
    max_len: int | None = None,
    threads: int = 1,
) -> VarianceReport:
    """
    Args:
        estimator: "grpo" 或 "opd"
        context: opd 為教師策略；grpo 為 GrpoConfig 或獎勵類型字串
        n_samples: 至少 1000
    """
    if estimator not in ESTIMATORS:
        raise InvalidInputError(f"未知的估計量: {estimator}")
    if n_samples < MIN_SAMPLES:
        raise InvalidInputError(f"n_samples 必須 ≥ {MIN_SAMPLES}: {n_samples}")
    if estimator == "grpo" and isinstance(context, str):
        context = GrpoConfig(reward=context)
    if estimator == "opd" and not isinstance(context, Policy):
        raise InvalidInputError("opd 估計量需要教師策略")
    max_len = frozen_params.layout.max_len if max_len is None else max_len

    support = static_support(frozen_params, instance)
    draws = parallel_map(
        lambda stream: _draw_sample(estimator, frozen_params, context, instance, stream, max_len),
        rng.spawn(n_samples),
        threads,
    )

    width = draws[0][1].shape[1]
    samples = np.empty((n_samples, support.size))
    s1 = np.zeros((max_len, width))
    s2 = np.zeros((max_len, max_len))
    sum_y = np.zeros(width)
    sum_y_sq = 0.0
    tokens_used = 0
    for i, (full, terms, used) in enumerate(draws):
        samples[i] = full[support]
        length = len(terms)
        s1[:length] += terms
        s2[:length, :length] += terms @ terms.T
        y = terms.sum(axis=0)
        sum_y += y
        sum_y_sq += float(y @ y)
        tokens_used += used

    n = float(n_samples)
    cross = (s2 - (s1 @ s1.T) / n) / (n - 1.0)
    sum_var = float(np.trace(cross))
    sum_cov = float(np.sum(np.triu(cross, k=1)))
    total = (sum_y_sq - float(sum_y @ sum_y) / n) / (n - 1.0)

    coord_var = samples.var(axis=0, ddof=1)
    per_coord_var = np.zeros(frozen_params.layout.size)
    per_coord_var[support] = coord_var
    mean = samples.mean(axis=0)
    mean_sq = float(mean @ mean)
    trace = float(coord_var.sum())
    analysis_debug_log(f"{estimator}: n={n_samples} trace={trace:.6g} tokens={tokens_used}")
    return VarianceReport(
        estimator=estimator,
        n_samples=n_samples,
        trace_cov=trace,
        per_coord_var=per_coord_var,
        decomposition={"sum_var_terms": sum_var, "sum_cov_terms": sum_cov, "total": total},
        mean_grad_sq_norm=mean_sq,
        relative_variance=trace / mean_sq if mean_sq > 0 else None,
        tokens_used=tokens_used,
        group_size=context.group_size if estimator == "grpo" else None,
        samples=samples,
    )


def _bootstrap_traces(samples: np.ndarray, n_boot: int, rng: np.random.Generator) -> np.ndarray:
    n = samples.shape[0]
    squares = samples**2
    counts = rng.multinomial(n, np.full(n, 1.0 / n), size=n_boot).astype(np.float64)
    first = counts @ samples / n
    second = counts @ squares / n
    return ((second - first**2) * n / (n - 1.0)).sum(axis=1)


@dataclass(frozen=True)
class DominanceResult:
    difference: float
    ci_low: float
    ci_high: float
    prob_less: float
    n_boot: int

    @property
    def dominates(self) -> bool:
        """95% 區間整體小於零：第一個估計量的 trace 嚴格較小"""
        return self.ci_high < 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "difference": self.difference,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "prob_less": self.prob_less,
            "n_boot": self.n_boot,
            "dominates": self.dominates,
        }


def variance_dominance(
    a: VarianceReport, b: VarianceReport, n_boot: int, rng: np.random.Generator
) -> DominanceResult:
    """trace(a) − trace(b) 的 bootstrap 分佈（兩組樣本獨立重抽）"""
    if a.samples is None or b.samples is None:
        raise InvalidInputError("報告缺少樣本，無法 bootstrap")
    if n_boot < 1:
        raise InvalidInputError("n_boot 必須 ≥ 1")
    rng_a, rng_b = rng.spawn(2)
    diff = _bootstrap_traces(a.samples, n_boot, rng_a) - _bootstrap_traces(b.samples, n_boot, rng_b)
    low, high = np.percentile(diff, [2.5, 97.5])
    return DominanceResult(
        difference=a.trace_cov - b.trace_cov,
        ci_low=float(low),
        ci_high=float(high),
        prob_less=float(np.mean(diff < 0.0)),
        n_boot=n_boot,
    )
