#!/usr/bin/env python3
"""
固定教師單元測試
"""

import numpy as np
import pytest

from tvg_distill.config import TeacherSpec
from tvg_distill.env.grammar import TemporalInterval, valid_next_tokens
from tvg_distill.env.instances import generate_pools
from tvg_distill.policy.model import ParamPolicy, PolicyState, greedy_decode
from tvg_distill.policy.teachers import (
    GrammarTeacher,
    OracleTeacher,
    load_policy,
    make_oracle_teacher,
    save_teacher,
    shifted_interval,
)
from tvg_distill.utils.error_handler import InvalidInputError


class TestOracleTeacher:
    """測試構造式教師"""

    def test_greedy_decode_recovers_ground_truth(self, oracle_teacher, small_pool):
        for inst in small_pool:
            assert greedy_decode(oracle_teacher, inst, 6) == inst.gt

    def test_sharpness_sets_the_margin(self, oracle_teacher, instance):
        logits = oracle_teacher.logits(PolicyState(instance))
        assert logits.max() == 4.0
        assert np.count_nonzero(logits) == 1

    def test_full_corruption_targets_shifted_interval(self, small_pool):
        teacher = OracleTeacher(sharpness=8.0, corruption_rate=1.0, corruption_seed=3)
        for inst in small_pool:
            assert teacher.is_corrupted(inst)
            assert greedy_decode(teacher, inst, 6) == shifted_interval(inst.gt, inst.video_length)

    def test_corruption_rate_is_respected(self, env_cfg):
        pool, _ = generate_pools(2, env_cfg, 300, 0)
        teacher = OracleTeacher(sharpness=8.0, corruption_rate=0.3, corruption_seed=11)
        fraction = np.mean([teacher.is_corrupted(inst) for inst in pool])
        assert 0.2 < fraction < 0.4

    @pytest.mark.parametrize(
        "gt,expected",
        [((3, 7), (8, 12)), ((14, 18), (9, 13)), ((2, 17), (7, 19))],
    )
    def test_shifted_interval(self, gt, expected):
        assert shifted_interval(TemporalInterval(*gt), 20) == TemporalInterval(*expected)

    def test_invalid_arguments(self):
        with pytest.raises(InvalidInputError):
            OracleTeacher(sharpness=0.0)
        with pytest.raises(InvalidInputError):
            OracleTeacher(sharpness=1.0, corruption_rate=2.0)

    def test_factory_accepts_mapping_and_spec(self):
        rng = np.random.default_rng(0)
        from_mapping = make_oracle_teacher({"sharpness": 5.0}, rng)
        from_spec = make_oracle_teacher(TeacherSpec(sharpness=6.0, corruption_rate=0.2), rng)
        assert from_mapping.sharpness == 5.0
        assert from_mapping.corruption_rate == 0.0
        assert from_spec.corruption_rate == 0.2


class TestGrammarTeacher:
    """測試格式先驗教師"""

    def test_mass_on_valid_tokens(self, instance):
        teacher = GrammarTeacher(sharpness=10.0)
        for prefix in [(), (1,), (1, 10), (1, 10, 1)]:
            dist = teacher.token_distribution(PolicyState(instance, prefix))
            allowed = list(valid_next_tokens(prefix, instance.video_length))
            assert dist[allowed].sum() > 0.99

    def test_greedy_is_well_formed(self, instance):
        decoded = greedy_decode(GrammarTeacher(sharpness=3.0), instance, 6)
        assert decoded == TemporalInterval(0, 0)


class TestTeacherPersistence:
    """測試教師存取"""

    def test_oracle_round_trip(self, temp_dir):
        teacher = OracleTeacher(sharpness=7.0, corruption_rate=0.25, corruption_seed=42)
        loaded = load_policy(save_teacher(temp_dir / "t.ckpt", teacher))
        assert isinstance(loaded, OracleTeacher)
        assert loaded.describe() == teacher.describe()

    def test_grammar_round_trip(self, temp_dir):
        loaded = load_policy(save_teacher(temp_dir / "g.ckpt", GrammarTeacher(2.0)))
        assert isinstance(loaded, GrammarTeacher)
        assert loaded.sharpness == 2.0

    def test_param_round_trip(self, small_policy, temp_dir):
        loaded = load_policy(save_teacher(temp_dir / "p.ckpt", ParamPolicy(small_policy)))
        assert isinstance(loaded, ParamPolicy)
        assert loaded.params.equals(small_policy)

    def test_unsupported_teacher(self, temp_dir):
        from tvg_distill.policy.model import Policy

        with pytest.raises(InvalidInputError):
            save_teacher(temp_dir / "x.ckpt", Policy())
