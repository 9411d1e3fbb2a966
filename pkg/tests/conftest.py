#!/usr/bin/env python3
"""
測試配置和共用 fixtures
"""

import os
import shutil
import tempfile
from collections.abc import Generator
from pathlib import Path

import pytest

from tests.helpers.test_utils import TestUtils
from tvg_distill.config import EnvConfig, ExperimentConfig, load_config
from tvg_distill.env.instances import GroundingInstance, generate_instance, generate_pools
from tvg_distill.policy.params import PolicyParams
from tvg_distill.policy.teachers import OracleTeacher


REPO_ROOT = Path(__file__).resolve().parent.parent
STANDARD_FIXTURE = REPO_ROOT / "configs" / "standard_fixture.conf"


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """創建臨時目錄 fixture"""
    temp_path = Path(tempfile.mkdtemp())
    yield temp_path
    shutil.rmtree(temp_path, ignore_errors=True)


@pytest.fixture
def env_cfg() -> EnvConfig:
    """小型世界：video_length 12 讓 max_digits = 2"""
    return EnvConfig(video_length=12, n_symbols=3, min_span=2, max_span=4, max_len=6)


@pytest.fixture
def instance(env_cfg: EnvConfig) -> GroundingInstance:
    return generate_instance(7, env_cfg)


@pytest.fixture
def small_pool(env_cfg: EnvConfig) -> list[GroundingInstance]:
    train, _ = generate_pools(3, env_cfg, 16, 0)
    return train


@pytest.fixture
def small_policy(env_cfg: EnvConfig) -> PolicyParams:
    return TestUtils.random_policy(env_cfg, 11)


@pytest.fixture
def oracle_teacher() -> OracleTeacher:
    return OracleTeacher(sharpness=4.0)


@pytest.fixture
def small_config(temp_dir: Path) -> ExperimentConfig:
    """數秒內跑完的端到端配置"""
    return ExperimentConfig().with_overrides(
        {
            "output_dir": str(temp_dir / "run"),
            "env.video_length": 12,
            "env.n_symbols": 3,
            "env.min_span": 2,
            "env.max_span": 4,
            "env.max_len": 6,
            "policy.d": 4,
            "train.train_size": 24,
            "train.steps": 6,
            "train.batch_size": 4,
            "train.checkpoint_every": 2,
            "train.warm_start_steps": 2,
            "eval.holdout_size": 8,
            "eval.eval_every": 2,
            "grpo.group_size": 4,
            "curriculum.k_select": 4,
            "curriculum.top_k_preds": 2,
            "curriculum.steps_per_round": 2,
        }
    )


@pytest.fixture
def standard_config() -> ExperimentConfig:
    return load_config(STANDARD_FIXTURE)


@pytest.fixture(autouse=True)
def setup_test_env():
    """自動設置測試環境"""
    original_debug = os.environ.get("TVG_DEBUG")
    original_threads = os.environ.pop("TVG_THREADS", None)
    os.environ["TVG_DEBUG"] = "true"

    yield

    if original_debug is not None:
        os.environ["TVG_DEBUG"] = original_debug
    else:
        os.environ.pop("TVG_DEBUG", None)
    if original_threads is not None:
        os.environ["TVG_THREADS"] = original_threads
    else:
        os.environ.pop("TVG_THREADS", None)

    from tvg_distill.config import reset_runtime_settings

    reset_runtime_settings()
