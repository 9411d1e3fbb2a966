"""
實驗配置模組
============

管理一次實驗運行的全部參數：環境、策略、教師、訓練器、課程篩選與評估。

配置文件格式為扁平的 `section.key = value` 行，`#` 開頭為註解，
第一個非註解行必須是 `schema_version = 1`。優先級：
命令列參數 > 配置文件 > 預設值。執行期設定（執行緒數、調試、語言）
另由環境變數 TVG_THREADS / TVG_DEBUG / TVG_LANGUAGE 提供。
"""

import hashlib
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .utils.error_handler import ConfigurationError


SCHEMA_VERSION = 1
ALGOS = ("grpo", "opd", "oprkd", "opfkd")
STRATEGIES = ("dsus", "topk", "bbds", "gwds")
REWARD_KINDS = ("iou", "timestamp_aware_iou")
TEACHER_KINDS = ("oracle", "grammar", "checkpoint")
SORT_KEYS = ("delta", "disagreement")

# 不參與配置雜湊的執行期鍵
_RUN_LOCAL_KEYS = frozenset({"train.threads", "output_dir"})


@dataclass(frozen=True)
class EnvConfig:
    """合成時間定位世界"""

    video_length: int = 20
    n_symbols: int = 4
    min_span: int = 3
    max_span: int = 6
    max_len: int = 8

    @property
    def max_digits(self) -> int:
        return len(str(self.video_length - 1))

    def validate(self) -> "EnvConfig":
        if self.video_length < 2:
            raise ConfigurationError(f"video_length 必須 ≥ 2: {self.video_length}")
        if self.n_symbols < 2:
            raise ConfigurationError(f"n_symbols 必須 ≥ 2: {self.n_symbols}")
        if self.min_span < 1:
            raise ConfigurationError(f"min_span 必須 ≥ 1: {self.min_span}")
        if self.max_span > self.video_length:
            raise ConfigurationError(
                f"max_span ({self.max_span}) 超過 video_length ({self.video_length})"
            )
        if self.min_span > self.max_span:
            raise ConfigurationError(
                f"min_span ({self.min_span}) 大於 max_span ({self.max_span})"
            )
        if self.max_digits > 9:
            raise ConfigurationError("video_length 過大")
        if self.max_len < max(4, 2 * self.max_digits + 2):
            raise ConfigurationError(
                f"max_len ({self.max_len}) 容不下完整的區間編碼"
            )
        return self


@dataclass(frozen=True)
class PolicyConfig:
    d: int = 8
    init_scale: float = 0.1

    def validate(self) -> "PolicyConfig":
        if not 1 <= self.d <= 16:
            raise ConfigurationError(f"policy.d 必須在 [1, 16]: {self.d}")
        if self.init_scale < 0:
            raise ConfigurationError("policy.init_scale 不可為負")
        return self


@dataclass(frozen=True)
class TeacherSpec:
    """教師來源：構造式 oracle、語法教師或檢查點"""

    kind: str = "oracle"
    sharpness: float = 10.0
    corruption_rate: float = 0.0
    checkpoint: str = ""

    def validate(self) -> "TeacherSpec":
        if self.kind not in TEACHER_KINDS:
            raise ConfigurationError(f"未知的 teacher.kind: {self.kind}")
        if self.sharpness <= 0:
            raise ConfigurationError("teacher.sharpness 必須 > 0")
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise ConfigurationError("teacher.corruption_rate 必須在 [0, 1]")
        if self.kind == "checkpoint" and not self.checkpoint:
            raise ConfigurationError("teacher.kind = checkpoint 需要 teacher.checkpoint")
        return self


@dataclass(frozen=True)
class EvalConfig:
    holdout_size: int = 128
    thresholds: tuple[float, ...] = (0.3, 0.5, 0.7)
    eval_every: int = 10

    def validate(self) -> "EvalConfig":
        if self.holdout_size < 1:
            raise ConfigurationError("eval.holdout_size 必須 ≥ 1")
        if not self.thresholds or any(not 0 <= t <= 1 for t in self.thresholds):
            raise ConfigurationError("eval.thresholds 必須是 [0, 1] 內的非空列表")
        if self.eval_every < 0:
            raise ConfigurationError("eval.eval_every 不可為負")
        return self


@dataclass(frozen=True)
class TrainConfig:
    train_size: int = 512
    steps: int = 100
    batch_size: int = 32
    checkpoint_every: int = 0
    threads: int = 1
    warm_start_steps: int = 20
    warm_start_sharpness: float = 3.0
    warm_start_lr: float = 0.5
    difficulty_select: int = 0

    def validate(self) -> "TrainConfig":
        if self.train_size < 1:
            raise ConfigurationError("train.train_size 必須 ≥ 1")
        if self.steps < 0:
            raise ConfigurationError("train.steps 不可為負")
        if self.batch_size < 1:
            raise ConfigurationError("train.batch_size 必須 ≥ 1")
        if self.threads < 1:
            raise ConfigurationError("train.threads 必須 ≥ 1")
        if self.warm_start_steps < 0 or self.checkpoint_every < 0:
            raise ConfigurationError("步數設定不可為負")
        if self.warm_start_sharpness <= 0 or self.warm_start_lr < 0:
            raise ConfigurationError("warm start 參數非法")
        if self.difficulty_select < 0:
            raise ConfigurationError("train.difficulty_select 不可為負")
        return self


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    beta: float = 0.01
    learning_rate: float = 0.05
    norm_epsilon: float = 1e-8
    reward: str = "iou"
    max_grad_norm: float | None = None

    def validate(self) -> "GrpoConfig":
        if self.group_size < 2:
            raise ConfigurationError("grpo.group_size 必須 ≥ 2（G=1 時群組正規化無定義）")
        if self.beta < 0:
            raise ConfigurationError("grpo.beta 不可為負")
        if self.learning_rate < 0:
            raise ConfigurationError("grpo.learning_rate 不可為負")
        if self.norm_epsilon < 0:
            raise ConfigurationError("grpo.norm_epsilon 不可為負")
        if self.reward not in REWARD_KINDS:
            raise ConfigurationError(f"未知的 grpo.reward: {self.reward}")
        _check_clip(self.max_grad_norm)
        return self


@dataclass(frozen=True)
class OpdConfig:
    learning_rate: float = 0.05
    rollouts_per_instance: int = 1
    reward_at_sampling: bool = False
    old_refresh_every: int = 1
    max_grad_norm: float | None = None

    def validate(self) -> "OpdConfig":
        if self.rollouts_per_instance != 1:
            raise ConfigurationError("opd.rollouts_per_instance 固定為 1")
        if self.learning_rate < 0:
            raise ConfigurationError("opd.learning_rate 不可為負")
        if self.old_refresh_every < 1:
            raise ConfigurationError("opd.old_refresh_every 必須 ≥ 1")
        _check_clip(self.max_grad_norm)
        return self


@dataclass(frozen=True)
class OffPolicyConfig:
    learning_rate: float = 0.05
    max_grad_norm: float | None = None

    def validate(self) -> "OffPolicyConfig":
        if self.learning_rate < 0:
            raise ConfigurationError("offpolicy.learning_rate 不可為負")
        _check_clip(self.max_grad_norm)
        return self


@dataclass(frozen=True)
class CurriculumConfig:
    enabled: bool = False
    k_select: int = 64
    top_k_preds: int = 4
    reliability_threshold: float = 0.5
    strategy: str = "topk"
    bbds_buckets: int = 5
    gwds_center: float = 0.9
    gwds_sigma: float = 0.2
    rounds: int = 1
    steps_per_round: int = 50
    sort_key: str = "delta"
    use_trpv: bool = True
    use_dbtp: bool = True

    def validate(self) -> "CurriculumConfig":
        if self.k_select < 1:
            raise ConfigurationError("curriculum.k_select 必須 ≥ 1")
        if self.top_k_preds < 1:
            raise ConfigurationError("curriculum.top_k_preds 必須 ≥ 1")
        if not 0.0 <= self.reliability_threshold <= 1.0:
            raise ConfigurationError("curriculum.reliability_threshold 必須在 [0, 1]")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"未知的 curriculum.strategy: {self.strategy}")
        if self.bbds_buckets < 1:
            raise ConfigurationError("curriculum.bbds_buckets 必須 ≥ 1")
        if self.gwds_sigma <= 0:
            raise ConfigurationError("curriculum.gwds_sigma 必須 > 0")
        if self.rounds < 1 or self.steps_per_round < 0:
            raise ConfigurationError("curriculum.rounds 必須 ≥ 1")
        if self.sort_key not in SORT_KEYS:
            raise ConfigurationError(f"未知的 curriculum.sort_key: {self.sort_key}")
        return self


@dataclass(frozen=True)
class DifficultyConfig:
    mu: float = 0.3
    sigma: float = 0.2

    def validate(self) -> "DifficultyConfig":
        if self.sigma <= 0:
            raise ConfigurationError("difficulty.sigma 必須 > 0")
        return self


def _check_clip(value: float | None) -> None:
    if value is not None and value <= 0:
        raise ConfigurationError("max_grad_norm 必須 > 0 或 none")


_SECTIONS = {
    "env": EnvConfig,
    "policy": PolicyConfig,
    "teacher": TeacherSpec,
    "eval": EvalConfig,
    "train": TrainConfig,
    "grpo": GrpoConfig,
    "opd": OpdConfig,
    "offpolicy": OffPolicyConfig,
    "curriculum": CurriculumConfig,
    "difficulty": DifficultyConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """完整決定一次運行的配置"""

    seed: int = 1
    algo: str = "opd"
    output_dir: str = "runs/default"
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    teacher: TeacherSpec = field(default_factory=TeacherSpec)
    eval: EvalConfig = field(default_factory=EvalConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    opd: OpdConfig = field(default_factory=OpdConfig)
    offpolicy: OffPolicyConfig = field(default_factory=OffPolicyConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    difficulty: DifficultyConfig = field(default_factory=DifficultyConfig)

    def validate(self) -> "ExperimentConfig":
        if self.algo not in ALGOS:
            raise ConfigurationError(f"未知的 algo: {self.algo}")
        if self.seed < 0:
            raise ConfigurationError("seed 不可為負")
        for name in _SECTIONS:
            getattr(self, name).validate()
        return self

    # ---- 扁平表示 ----

    def to_flat(self) -> dict[str, str]:
        flat = {
            "schema_version": str(SCHEMA_VERSION),
            "seed": str(self.seed),
            "algo": self.algo,
            "output_dir": self.output_dir,
        }
        for name in _SECTIONS:
            section = getattr(self, name)
            for f in fields(section):
                flat[f"{name}.{f.name}"] = _render(getattr(section, f.name))
        return flat

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "ExperimentConfig":
        version = flat.get("schema_version", str(SCHEMA_VERSION))
        if version != str(SCHEMA_VERSION):
            raise ConfigurationError(f"不支援的 schema_version: {version}")
        return cls().with_overrides(
            {k: v for k, v in flat.items() if k != "schema_version"}
        )

    def with_overrides(self, overrides: dict[str, Any]) -> "ExperimentConfig":
        """套用 `section.key` 形式的覆寫，值可為字串或已轉型的值"""
        top: dict[str, Any] = {}
        sections: dict[str, dict[str, Any]] = {}
        for key, raw in overrides.items():
            if "." not in key:
                if key not in ("seed", "algo", "output_dir"):
                    raise ConfigurationError(f"未知的配置鍵: {key}")
                default = getattr(self, key)
                top[key] = _coerce(key, raw, default)
                continue
            section_name, _, field_name = key.partition(".")
            section_cls = _SECTIONS.get(section_name)
            if section_cls is None:
                raise ConfigurationError(f"未知的配置區段: {section_name}")
            names = {f.name for f in fields(section_cls)}
            if field_name not in names:
                raise ConfigurationError(f"未知的配置鍵: {key}")
            current = getattr(getattr(self, section_name), field_name)
            sections.setdefault(section_name, {})[field_name] = _coerce(
                key, raw, current
            )
        updated = replace(self, **top)
        for section_name, values in sections.items():
            updated = replace(
                updated,
                **{section_name: replace(getattr(updated, section_name), **values)},
            )
        return updated.validate()

    def render(self) -> str:
        lines = [f"schema_version = {SCHEMA_VERSION}"]
        for key, value in self.to_flat().items():
            if key != "schema_version":
                lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        """排除執行期鍵後的正規扁平表示的 SHA-256 前 16 位"""
        flat = self.to_flat()
        canonical = "\n".join(
            f"{k}={flat[k]}" for k in sorted(flat) if k not in _RUN_LOCAL_KEYS
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def algo_config(self) -> GrpoConfig | OpdConfig | OffPolicyConfig:
        if self.algo == "grpo":
            return self.grpo
        if self.algo == "opd":
            return self.opd
        return self.offpolicy


def _render(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw: Any, current: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(current, bool):
            lowered = text.lower()
            if lowered not in ("true", "false"):
                raise ValueError(text)
            return lowered == "true"
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float) or current is None:
            if text.lower() == "none":
                return None
            return float(text)
        if isinstance(current, tuple):
            return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigurationError(f"配置值無法解析 {key} = {raw!r}") from exc
    return text


def parse_config_text(text: str) -> dict[str, str]:
    """解析扁平配置文本為鍵值字典"""
    flat: dict[str, str] = {}
    saw_version = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"第 {lineno} 行缺少 '=': {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not saw_version:
            if key != "schema_version":
                raise ConfigurationError("第一個非註解行必須是 schema_version")
            saw_version = True
        if key in flat:
            raise ConfigurationError(f"重複的配置鍵: {key}")
        flat[key] = value.strip()
    if not saw_version:
        raise ConfigurationError("配置文件缺少 schema_version")
    return flat


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"配置文件不存在: {path}")
    return ExperimentConfig.from_flat(parse_config_text(path.read_text("utf-8")))


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(config.render(), encoding="utf-8")


class RuntimeSettings:
    """執行期設定：只由環境變數決定，不進入配置雜湊"""

    DEFAULT_THREADS = 1
    DEFAULT_LANGUAGE = "zh-TW"

    def __init__(self) -> None:
        self._settings = self._load_settings()

    def _load_settings(self) -> dict[str, Any]:
        return {
            "threads": self._get_threads(),
            "debug": os.getenv("TVG_DEBUG", "").lower() in ("true", "1", "yes", "on"),
            "language": os.getenv("TVG_LANGUAGE", self.DEFAULT_LANGUAGE),
        }

    def _get_threads(self) -> int:
        env_threads = os.getenv("TVG_THREADS")
        if env_threads:
            try:
                threads = int(env_threads)
                if threads >= 1:
                    return threads
            except ValueError:
                pass
        return self.DEFAULT_THREADS

    @property
    def threads(self) -> int:
        return int(self._settings["threads"])

    @property
    def debug(self) -> bool:
        return bool(self._settings["debug"])

    @property
    def language(self) -> str:
        return str(self._settings["language"])

    def to_dict(self) -> dict[str, Any]:
        return self._settings.copy()


_runtime_settings: RuntimeSettings | None = None


def get_runtime_settings() -> RuntimeSettings:
    """獲取執行期設定實例"""
    global _runtime_settings
    if _runtime_settings is None:
        _runtime_settings = RuntimeSettings()
    return _runtime_settings


def reset_runtime_settings() -> None:
    """重新讀取環境變數（用於測試）"""
    global _runtime_settings
    _runtime_settings = None
