"""
固定教師
========

- OracleTeacher：對每個狀態把 sharpness 的 logit 放在「朝目標區間前進」
  的 token 上。目標通常是標註；依 (實例 id, 腐化種子) 的雜湊，
  以 corruption_rate 的機率改為平移 video_length // 4 的區間，
  讓教師在這些實例上穩定地錯誤。
- GrammarTeacher：不知道標註，只在所有文法上合法的下一個 token 上
  放 sharpness 的 logit，用來熱啟動懂格式但不懂答案的基礎學生。

兩者都不可更新，與 ParamPolicy 共享 Policy 契約。
"""

from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np

from ..env.grammar import TemporalInterval, oracle_next_token, valid_next_tokens
from ..env.instances import GroundingInstance
from ..utils.error_handler import ConfigurationError, InvalidInputError
from ..utils.rng import stable_uniform
from .model import ParamPolicy, Policy
from .params import load_checkpoint, save_checkpoint


def shifted_interval(gt: TemporalInterval, video_length: int) -> TemporalInterval:
    """平移 video_length // 4：能右移就右移，否則左移，都放不下時右移並截斷"""
    shift = max(1, video_length // 4)
    last = video_length - 1
    if gt.end + shift <= last:
        return TemporalInterval(gt.start + shift, gt.end + shift)
    if gt.start - shift >= 0:
        return TemporalInterval(gt.start - shift, gt.end - shift)
    return TemporalInterval(min(gt.start + shift, last), last)


class OracleTeacher(Policy):
    """近乎完美的構造式教師，可控制不可靠程度"""

    def __init__(self, sharpness: float, corruption_rate: float = 0.0, corruption_seed: int = 0):
        if sharpness <= 0:
            raise InvalidInputError(f"sharpness 必須 > 0: {sharpness}")
        if not 0.0 <= corruption_rate <= 1.0:
            raise InvalidInputError(f"corruption_rate 必須在 [0, 1]: {corruption_rate}")
        self.sharpness = float(sharpness)
        self.corruption_rate = float(corruption_rate)
        self.corruption_seed = int(corruption_seed)

    def is_corrupted(self, instance: GroundingInstance) -> bool:
        if self.corruption_rate <= 0.0:
            return False
        return stable_uniform(self.corruption_seed, instance.id) < self.corruption_rate

    def target(self, instance: GroundingInstance) -> TemporalInterval:
        if self.is_corrupted(instance):
            return shifted_interval(instance.gt, instance.video_length)
        return instance.gt

    def trajectory_logits(
        self, instance: GroundingInstance, tokens: Sequence[int], n_states: int | None = None
    ) -> np.ndarray:
        n_states = len(tokens) if n_states is None else n_states
        target = self.target(instance)
        logits = np.zeros((n_states, self.vocab))
        for t in range(n_states):
            logits[t, oracle_next_token(tokens[:t], target)] = self.sharpness
        return logits

    def describe(self) -> dict[str, Any]:
        return {
            "kind": "oracle",
            "sharpness": self.sharpness,
            "corruption_rate": self.corruption_rate,
            "corruption_seed": self.corruption_seed,
        }


class GrammarTeacher(Policy):
    """格式先驗：在合法下一個 token 上均勻加上 sharpness"""

    def __init__(self, sharpness: float):
        if sharpness <= 0:
            raise InvalidInputError(f"sharpness 必須 > 0: {sharpness}")
        self.sharpness = float(sharpness)

    def trajectory_logits(
        self, instance: GroundingInstance, tokens: Sequence[int], n_states: int | None = None
    ) -> np.ndarray:
        n_states = len(tokens) if n_states is None else n_states
        logits = np.zeros((n_states, self.vocab))
        for t in range(n_states):
            allowed = valid_next_tokens(tokens[:t], instance.video_length)
            logits[t, list(allowed)] = self.sharpness
        return logits

    def describe(self) -> dict[str, Any]:
        return {"kind": "grammar", "sharpness": self.sharpness}


def make_oracle_teacher(
    cfg: Mapping[str, Any] | Any, rng: np.random.Generator
) -> OracleTeacher:
    """
    建立固定的 oracle 教師

    Args:
        cfg: 含 sharpness 與 corruption_rate 的映射或物件（如 TeacherSpec）
        rng: 只用來抽一次腐化種子
    """
    if isinstance(cfg, Mapping):
        sharpness = cfg["sharpness"]
        corruption_rate = cfg.get("corruption_rate", 0.0)
    else:
        sharpness = cfg.sharpness
        corruption_rate = cfg.corruption_rate
    seed = int(rng.integers(0, 2**62))
    return OracleTeacher(sharpness, corruption_rate, seed)


def save_teacher(path: str | Path, teacher: Policy, config_hash: str = "") -> Path:
    """oracle / grammar 存成只有 header 的檢查點；ParamPolicy 存參數"""
    if isinstance(teacher, ParamPolicy):
        return save_checkpoint(path, teacher.params, config_hash=config_hash)
    if isinstance(teacher, OracleTeacher | GrammarTeacher):
        meta = teacher.describe()
        return save_checkpoint(path, None, kind=meta["kind"], meta=meta, config_hash=config_hash)
    raise InvalidInputError(f"無法保存的教師類型: {type(teacher).__name__}")


def load_policy(path: str | Path) -> Policy:
    """讀取檢查點，回傳 ParamPolicy 或構造式教師"""
    checkpoint = load_checkpoint(path)
    meta = checkpoint.meta
    if checkpoint.kind == "oracle":
        return OracleTeacher(
            meta["sharpness"], meta.get("corruption_rate", 0.0), meta.get("corruption_seed", 0)
        )
    if checkpoint.kind == "grammar":
        return GrammarTeacher(meta["sharpness"])
    if "params" not in checkpoint.blocks:
        raise ConfigurationError(f"檢查點缺少 params 區塊: {path}")
    return ParamPolicy(checkpoint.blocks["params"])
