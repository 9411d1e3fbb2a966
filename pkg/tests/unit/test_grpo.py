#!/usr/bin/env python3
"""
GRPO 基線單元測試
"""

import itertools
from dataclasses import replace

import numpy as np
import pytest

from tests.fixtures.test_data import TestData
from tests.helpers.test_utils import TestUtils
from tvg_distill.analysis import sidak_threshold
from tvg_distill.config import EnvConfig, GrpoConfig, PolicyConfig
from tvg_distill.env.grammar import EOS, SEP, VOCAB_SIZE, decode_tokens, encode_interval
from tvg_distill.env.instances import generate_instance
from tvg_distill.env.metrics import reward_value
from tvg_distill.policy.model import ParamPolicy, Trajectory, backprop, score_logit_grads
from tvg_distill.policy.params import PolicyParams, init_params
from tvg_distill.trainers.base import TrainerState, apply_update
from tvg_distill.trainers.grpo import (
    GroupBatch,
    group_normalize,
    grpo_gradient,
    grpo_step,
    grpo_surrogate,
    normalize_batch,
    rollout_group,
    score_group,
)
from tvg_distill.utils.error_handler import InvalidInputError
from tvg_distill.utils.rng import derive_rng


FD_SEEDS = range(50)
MICRO_ENV = EnvConfig(video_length=4, n_symbols=2, min_span=1, max_span=2, max_len=4)


def _perturbed(params, seed, scale=0.05):
    noise = np.random.default_rng(seed).normal(0.0, scale, params.layout.size)
    return params.updated(noise, 1.0)


def _grammar_leaning(params):
    """在常數讀出欄上偏好「數字 SEP 數字 EOS」，讓群組獎勵有變化"""
    readout = params.readout_weights.copy()
    const = 2 * params.layout.video_length
    digits = list(range(params.layout.video_length))
    readout[0, digits, const] += 3.0
    readout[1, SEP, const] += 4.0
    readout[2, digits, const] += 3.0
    readout[3, EOS, const] += 4.0
    return PolicyParams(
        context_embed=params.context_embed,
        token_embed=params.token_embed,
        output_weights=params.output_weights,
        output_bias=params.output_bias,
        readout_weights=readout,
    )


def _all_trajectories(max_len):
    """長度 ≤ max_len、EOS 只出現在結尾或被截斷的全部 token 序列"""
    non_eos = [v for v in range(VOCAB_SIZE) if v != EOS]
    for length in range(1, max_len):
        for body in itertools.product(non_eos, repeat=length - 1):
            yield (*body, EOS)
    for body in itertools.product(non_eos, repeat=max_len - 1):
        for last in range(VOCAB_SIZE):
            yield (*body, last)


def _trajectory(params, instance, tokens):
    return Trajectory(
        tokens=tuple(tokens),
        logp_sampler=ParamPolicy(params).evaluate_trajectory(instance, tokens),
        decoded=decode_tokens(tokens, instance.video_length),
    )


class TestGroupNormalize:
    """測試群組正規化"""

    def test_known_rewards(self):
        normalized = group_normalize(TestData.GROUP_REWARDS)
        np.testing.assert_allclose(normalized, TestData.GROUP_NORMALIZED, atol=1e-6)

    def test_constant_group_is_exact_zero(self):
        normalized = group_normalize([0.4, 0.4, 0.4])
        assert np.all(normalized == 0.0)

    def test_zero_mean_unit_scale(self):
        normalized = group_normalize([0.1, 0.9, 0.3, 0.0, 0.5])
        assert normalized.mean() == pytest.approx(0.0, abs=1e-12)
        assert normalized.std() == pytest.approx(1.0, abs=1e-6)

    def test_single_reward_rejected(self):
        with pytest.raises(InvalidInputError):
            group_normalize([1.0])


class TestRollout:
    """測試群組取樣"""

    def test_group_size_precondition(self, small_policy, instance):
        with pytest.raises(InvalidInputError):
            rollout_group(small_policy, instance, 1, np.random.default_rng(0), 6)

    def test_threads_do_not_change_trajectories(self, small_policy, instance):
        serial = rollout_group(small_policy, instance, 6, np.random.default_rng(2), 6, threads=1)
        threaded = rollout_group(small_policy, instance, 6, np.random.default_rng(2), 6, threads=4)
        assert [t.tokens for t in serial.trajectories] == [t.tokens for t in threaded.trajectories]

    def test_scoring_uses_ground_truth(self, small_policy, instance):
        batch = score_group(rollout_group(small_policy, instance, 4, np.random.default_rng(5), 6))
        assert batch.raw_rewards.shape == (4,)
        assert np.all((batch.raw_rewards >= 0.0) & (batch.raw_rewards <= 1.0))
        assert batch.tokens_generated == sum(t.length for t in batch.trajectories)


class TestGrpoGradient:
    """測試替代目標梯度"""

    def _batch(self, params, instance):
        batch = rollout_group(params, instance, 4, np.random.default_rng(8), 6)
        batch = score_group(batch)
        return replace(batch, normalized_rewards=np.array([1.2, -0.4, 0.3, -1.1]))

    @pytest.mark.parametrize("beta", [0.0, 0.1])
    @pytest.mark.parametrize("seed", FD_SEEDS)
    def test_matches_finite_differences(self, env_cfg, seed, beta):
        """實例、參數與取樣軌跡都隨種子變化"""
        instance, old, params = TestUtils.gradient_fixture(env_cfg, seed)
        ref = _perturbed(old, 3000 + seed)
        rng = np.random.default_rng(seed)
        batch = score_group(rollout_group(old, instance, 4, rng, env_cfg.max_len))
        batch = replace(batch, normalized_rewards=rng.normal(0.0, 1.0, 4))
        analytic = grpo_gradient(params, old, ref, batch, beta).vector
        coords = TestUtils.sample_coords(params, rng)
        numeric = TestUtils.finite_difference(
            lambda p: grpo_surrogate(p, old, ref, batch, beta), params, coords, eps=1e-5
        )
        assert TestUtils.relative_error(analytic[coords], numeric) < 1e-4

    def test_zero_advantage_and_beta_gives_zero(self, small_policy, instance):
        batch = normalize_batch(score_group(rollout_group(small_policy, instance, 3, np.random.default_rng(0), 6)))
        batch = replace(batch, normalized_rewards=np.zeros(3))
        grad = grpo_gradient(small_policy, small_policy, small_policy, batch, 0.0)
        assert grad.norm() == 0.0

    def test_single_correct_rollout_gains_probability(self, small_policy, instance):
        """β=0、群組中只有一條解碼為標註：小步更新後它的 log 機率上升"""
        candidates = [encode_interval(instance.gt), (EOS,), (SEP, EOS), (SEP, SEP, EOS)]
        trajectories = tuple(_trajectory(small_policy, instance, t) for t in candidates)
        batch = normalize_batch(score_group(GroupBatch(instance, trajectories)))
        np.testing.assert_array_equal(batch.raw_rewards, [1.0, 0.0, 0.0, 0.0])

        grad = grpo_gradient(small_policy, small_policy, small_policy, batch, 0.0)
        updated = apply_update(small_policy, grad, 1e-3, None)
        before = ParamPolicy(small_policy).evaluate_trajectory(instance, candidates[0]).sum()
        after = ParamPolicy(updated).evaluate_trajectory(instance, candidates[0]).sum()
        assert after > before

    def test_layout_mismatch(self, small_policy, env_cfg, instance):
        other = init_params(env_cfg, PolicyConfig(d=3), np.random.default_rng(0))
        batch = self._batch(small_policy, instance)
        with pytest.raises(InvalidInputError):
            grpo_gradient(small_policy, other, small_policy, batch, 0.0)

    def test_requires_normalized_rewards(self, small_policy, instance):
        batch = score_group(rollout_group(small_policy, instance, 3, np.random.default_rng(0), 6))
        with pytest.raises(InvalidInputError):
            grpo_gradient(small_policy, small_policy, small_policy, batch, 0.0)


@pytest.mark.slow
class TestGrpoUnbiased:
    """微型世界（video_length=4, max_len=4）上與窮舉期望比較"""

    def test_enumeration_covers_all_trajectories(self):
        assert len(list(_all_trajectories(4))) == 1 + 11 + 121 + 11**3 * 12

    def test_matches_exact_enumeration(self):
        """
        G=2、β=0：E[(1/G) Σᵢ wᵢ r̂ᵢ ∇log πθ(τᵢ)] 由對稱性等於
        Σ_τ πθ(τ)·E_{τ'}[r̂(τ; τ')]·∇log πθ(τ)
        """
        eps = 1e-8
        instance = generate_instance(3, MICRO_ENV)
        old = _grammar_leaning(TestUtils.random_policy(MICRO_ENV, 21, d=2))
        params = _perturbed(old, 22)
        student = ParamPolicy(params)
        sampler = ParamPolicy(old)
        length = instance.video_length

        trajectories = list(_all_trajectories(MICRO_ENV.max_len))
        rewards = np.array(
            [reward_value("iou", decode_tokens(t, length), instance.gt, length) for t in trajectories]
        )
        p_old = np.exp([sampler.evaluate_trajectory(instance, t).sum() for t in trajectories])
        assert p_old.sum() == pytest.approx(1.0, abs=1e-9)

        values, inverse = np.unique(rewards, return_inverse=True)
        value_probs = np.bincount(inverse, weights=p_old, minlength=len(values))
        assert 0.05 < 1.0 - value_probs[values == 0.0].sum() < 0.95
        advantages = np.array(
            [
                sum(q * group_normalize([v, other], eps)[0] for other, q in zip(values, value_probs))
                for v in values
            ]
        )

        exact = np.zeros(params.layout.size)
        for tokens, index in zip(trajectories, inverse):
            advantage = advantages[index]
            if advantage == 0.0:
                continue
            log_dists = student.trajectory_log_distributions(instance, tokens)
            p_theta = np.exp(log_dists[np.arange(len(tokens)), np.asarray(tokens)].sum())
            logit_grads = score_logit_grads(log_dists, tokens, np.full(len(tokens), p_theta * advantage))
            exact += backprop(params, instance, tokens, logit_grads).vector

        n_groups = 50_000
        rng = np.random.default_rng(23)
        total = np.zeros(params.layout.size)
        total_sq = np.zeros(params.layout.size)
        for _ in range(n_groups):
            batch = rollout_group(old, instance, 2, rng, MICRO_ENV.max_len)
            batch = normalize_batch(score_group(batch), eps)
            sample = grpo_gradient(params, old, old, batch, 0.0).vector
            total += sample
            total_sq += sample * sample

        mean = total / n_groups
        var = np.maximum(total_sq - n_groups * mean * mean, 0.0) / (n_groups - 1)
        se = np.sqrt(var / n_groups)
        active = se > 0.0
        assert np.all(np.abs(exact[~active]) < 1e-12)
        z = sidak_threshold(int(active.sum()), 0.001)
        worst = np.max(np.abs(mean[active] - exact[active]) / se[active])
        assert worst <= z, f"max |z| = {worst:.2f} > {z:.2f}"


class TestGrpoStep:
    """測試單步更新"""

    def test_step_bookkeeping(self, small_policy, small_pool):
        state = TrainerState.initial(small_policy, seed=4)
        cfg = GrpoConfig(group_size=4, learning_rate=0.1)
        new_state, metrics = grpo_step(state, small_pool[:3], cfg, max_len=6)
        assert new_state.step == 1
        assert metrics["step"] == 1
        assert metrics["algo"] == "grpo"
        assert 3 * 4 <= metrics["tokens_generated"] <= 3 * 4 * 6
        assert new_state.tokens_generated == metrics["tokens_generated"]
        assert new_state.old_params.equals(new_state.params)
        assert new_state.ref_params.equals(small_policy)

    def test_tokens_generated_by_counting(self, small_policy, small_pool):
        """tokens_generated = G × 平均長度 × 實例數，逐條重放計數"""
        state = TrainerState.initial(small_policy, seed=4)
        cfg = GrpoConfig(group_size=4, learning_rate=0.1)
        instances = small_pool[:3]
        _, metrics = grpo_step(state, instances, cfg, max_len=6)

        lengths = []
        for position, instance in enumerate(instances):
            rng = derive_rng(4, "grpo", 0, position)
            batch = rollout_group(small_policy, instance, cfg.group_size, rng, 6)
            lengths.extend(t.length for t in batch.trajectories)
        assert len(lengths) == cfg.group_size * len(instances)
        assert metrics["tokens_generated"] == sum(lengths)
        assert metrics["tokens_generated"] == pytest.approx(
            cfg.group_size * np.mean(lengths) * len(instances)
        )

    def test_zero_learning_rate_keeps_params(self, small_policy, small_pool):
        state = TrainerState.initial(small_policy, seed=4)
        new_state, _ = grpo_step(state, small_pool[:2], GrpoConfig(group_size=2, learning_rate=0.0), 6)
        assert new_state.params.equals(small_policy)

    def test_threads_do_not_change_update(self, small_policy, small_pool):
        state = TrainerState.initial(small_policy, seed=4)
        cfg = GrpoConfig(group_size=4, learning_rate=0.3)
        serial, _ = grpo_step(state, small_pool[:4], cfg, 6, threads=1)
        threaded, _ = grpo_step(state, small_pool[:4], cfg, 6, threads=4)
        assert serial.params.equals(threaded.params)

    def test_empty_batch(self, small_policy):
        with pytest.raises(InvalidInputError):
            grpo_step(TrainerState.initial(small_policy, 0), [], GrpoConfig(), 6)
