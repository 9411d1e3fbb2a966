"""
反向 KL 梯度恆等式檢查
======================

在單一狀態上，a ~ πθ 的 rₐ·∇log πθ(a|s) 期望值等於 −∇ KL(πθ ‖ π_tea)。
比較在 logit 空間進行：rₐ·(e_a − p) 的蒙地卡羅平均對上解析的
−p ⊙ (log p − log q − KL)；參數空間的版本由同一個線性鏈鎖映射得到。
"""

from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.special import log_softmax
from scipy.stats import norm

from ..debug import analysis_debug_log
from ..policy.model import ParamPolicy, Policy, PolicyState, backprop, reverse_kl_logit_grads
from ..policy.params import PolicyParams
from ..utils.error_handler import InvalidInputError


MIN_SAMPLES = 10_000
FAMILY_ALPHA = 0.01


def sidak_threshold(n_coords: int, alpha: float = FAMILY_ALPHA) -> float:
    """每個座標的雙尾 z 門檻，使 n_coords 個座標合計誤報率為 alpha"""
    per_coord = 1.0 - (1.0 - alpha) ** (1.0 / n_coords)
    return float(norm.ppf(1.0 - per_coord / 2.0))


def analytic_logit_gradient(student_logp: np.ndarray, teacher_logp: np.ndarray) -> np.ndarray:
    """−∇_logits KL(p ‖ q)"""
    return -reverse_kl_logit_grads(student_logp, teacher_logp)


def exact_expectation(student_logits: np.ndarray, teacher_logits: np.ndarray) -> np.ndarray:
    """列舉所有 token：Σₐ pₐ·rₐ·(e_a − p)"""
    logp = log_softmax(np.asarray(student_logits, dtype=np.float64))
    logq = log_softmax(np.asarray(teacher_logits, dtype=np.float64))
    p = np.exp(logp)
    expectation = np.zeros_like(p)
    for a in range(len(p)):
        score = -p.copy()
        score[a] += 1.0
        expectation += p[a] * (logq[a] - logp[a]) * score
    return expectation


def exact_identity_gap(student_logits: np.ndarray, teacher_logits: np.ndarray) -> float:
    """列舉期望與解析梯度的最大絕對差"""
    logp = log_softmax(np.asarray(student_logits, dtype=np.float64))
    logq = log_softmax(np.asarray(teacher_logits, dtype=np.float64))
    gap = exact_expectation(student_logits, teacher_logits) - analytic_logit_gradient(logp, logq)
    return float(np.max(np.abs(gap)))


@dataclass
class KlIdentityResult:
    mc_gradient: np.ndarray
    analytic_gradient: np.ndarray
    mc_param_gradient: np.ndarray
    analytic_param_gradient: np.ndarray
    z_scores: np.ndarray
    max_z_score: float
    threshold: float
    n_samples: int

    @property
    def passed(self) -> bool:
        return self.max_z_score <= self.threshold

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_samples": self.n_samples,
            "mc_gradient": self.mc_gradient.tolist(),
            "analytic_gradient": self.analytic_gradient.tolist(),
            "z_scores": self.z_scores.tolist(),
            "max_z_score": self.max_z_score,
            "threshold": self.threshold,
            "passed": self.passed,
            "param_gradient_max_abs_diff": float(
                np.max(np.abs(self.mc_param_gradient - self.analytic_param_gradient))
            ),
        }


def _z_scores(mean: np.ndarray, std_err: np.ndarray, target: np.ndarray) -> np.ndarray:
    diff = mean - target
    z = np.zeros_like(diff)
    positive = std_err > 0
    z[positive] = np.abs(diff[positive]) / std_err[positive]
    z[~positive & (np.abs(diff) > 1e-12)] = np.inf
    return z


def kl_identity_check(
    params: PolicyParams,
    teacher: Policy,
    state: PolicyState,
    n_samples: int,
    rng: np.random.Generator,
    threshold: float | None = None,
) -> KlIdentityResult:
    """
    Args:
        n_samples: 至少 10,000
        threshold: 最大 |z| 門檻；預設為 12 個座標的 Šidák 校正值（1% 整體誤報率）
    """
    if n_samples < MIN_SAMPLES:
        raise InvalidInputError(f"n_samples 必須 ≥ {MIN_SAMPLES}: {n_samples}")
    student = ParamPolicy(params)
    logp = student.log_distribution(state)
    logq = teacher.log_distribution(state)
    p = np.exp(logp)

    cdf = np.cumsum(p)
    draws = np.minimum(
        np.searchsorted(cdf, rng.random(n_samples) * cdf[-1], side="right"), len(p) - 1
    )
    rewards = logq[draws] - logp[draws]
    samples = -np.outer(rewards, p)
    samples[np.arange(n_samples), draws] += rewards

    mean = samples.mean(axis=0)
    std_err = samples.std(axis=0, ddof=1) / np.sqrt(n_samples)
    analytic = analytic_logit_gradient(logp, logq)
    z = _z_scores(mean, std_err, analytic)
    threshold = sidak_threshold(len(p)) if threshold is None else threshold

    def to_params(logit_row: np.ndarray) -> np.ndarray:
        grads = np.zeros((len(state.prefix) + 1, len(p)))
        grads[-1] = logit_row
        return backprop(params, state.instance, state.prefix, grads).vector

    result = KlIdentityResult(
        mc_gradient=mean,
        analytic_gradient=analytic,
        mc_param_gradient=to_params(mean),
        analytic_param_gradient=to_params(analytic),
        z_scores=z,
        max_z_score=float(np.max(z)),
        threshold=threshold,
        n_samples=n_samples,
    )
    analysis_debug_log(f"KL 恆等式: max|z|={result.max_z_score:.3f} 門檻={threshold:.3f}")
    return result
