"""
策略參數、扁平佈局與檢查點
==========================

扁平佈局（偏移依序）：

| 區塊              | 形狀                              |
|-------------------|-----------------------------------|
| context_embed     | [n_symbols, d]                    |
| token_embed       | [vocab, d]                        |
| output_weights    | [vocab, 2d]                       |
| output_bias       | [vocab]                           |
| readout_weights   | [max_len, vocab, 2·video_length+1]|

檢查點格式：魔數行 `TVGCKPT1\\n`，8 位元組小端 header 長度，
UTF-8 JSON header，接著是小端 float64 扁平陣列（每個 block 依序串接）。
"""

import json
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..config import EnvConfig, PolicyConfig
from ..utils.error_handler import ConfigurationError, InvalidInputError, NumericError


CHECKPOINT_MAGIC = b"TVGCKPT1\n"
CHECKPOINT_VERSION = 1
BLOCK_NAMES = (
    "context_embed",
    "token_embed",
    "output_weights",
    "output_bias",
    "readout_weights",
)


@dataclass(frozen=True)
class ParamLayout:
    n_symbols: int
    d: int
    vocab: int
    max_len: int
    readout_dim: int

    @classmethod
    def for_config(cls, env: EnvConfig, d: int, vocab: int = 12) -> "ParamLayout":
        return cls(
            n_symbols=env.n_symbols,
            d=d,
            vocab=vocab,
            max_len=env.max_len,
            readout_dim=2 * env.video_length + 1,
        )

    @property
    def d_state(self) -> int:
        return 2 * self.d

    @property
    def video_length(self) -> int:
        return (self.readout_dim - 1) // 2

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "context_embed": (self.n_symbols, self.d),
            "token_embed": (self.vocab, self.d),
            "output_weights": (self.vocab, self.d_state),
            "output_bias": (self.vocab,),
            "readout_weights": (self.max_len, self.vocab, self.readout_dim),
        }

    def offsets(self) -> dict[str, tuple[int, int]]:
        """每個區塊在扁平向量中的 [start, stop)"""
        result = {}
        cursor = 0
        for name, shape in self.shapes().items():
            size = int(np.prod(shape))
            result[name] = (cursor, cursor + size)
            cursor += size
        return result

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())

    def unflatten(self, vector: np.ndarray) -> dict[str, np.ndarray]:
        """回傳指向同一記憶體的各區塊視圖"""
        if vector.shape != (self.size,):
            raise InvalidInputError(
                f"扁平向量維度 {vector.shape} 與佈局 ({self.size},) 不符"
            )
        shapes = self.shapes()
        return {
            name: vector[start:stop].reshape(shapes[name])
            for name, (start, stop) in self.offsets().items()
        }

    def to_dict(self) -> dict[str, int]:
        return {
            "n_symbols": self.n_symbols,
            "d": self.d,
            "vocab": self.vocab,
            "max_len": self.max_len,
            "readout_dim": self.readout_dim,
        }


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """不可變的參數快照；更新產生新快照"""

    context_embed: np.ndarray
    token_embed: np.ndarray
    output_weights: np.ndarray
    output_bias: np.ndarray
    readout_weights: np.ndarray

    def __post_init__(self) -> None:
        for name in BLOCK_NAMES:
            array = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if not np.all(np.isfinite(array)):
                raise NumericError(f"參數 {name} 含非有限值")
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        expected = self.layout.shapes()
        for name in BLOCK_NAMES:
            if getattr(self, name).shape != expected[name]:
                raise InvalidInputError(
                    f"參數 {name} 形狀 {getattr(self, name).shape} 與 {expected[name]} 不一致"
                )

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout(
            n_symbols=self.context_embed.shape[0],
            d=self.context_embed.shape[1],
            vocab=self.token_embed.shape[0],
            max_len=self.readout_weights.shape[0],
            readout_dim=self.readout_weights.shape[2],
        )

    @property
    def d(self) -> int:
        return int(self.context_embed.shape[1])

    @property
    def d_state(self) -> int:
        return 2 * self.d

    def flatten(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in BLOCK_NAMES])

    @classmethod
    def from_flat(cls, layout: ParamLayout, vector: np.ndarray) -> "PolicyParams":
        blocks = layout.unflatten(np.asarray(vector, dtype=np.float64))
        return cls(**blocks)

    def updated(self, direction: "GradientAccumulator | np.ndarray", lr: float) -> "PolicyParams":
        """θ ← θ + lr·g（梯度上升慣例）"""
        vector = direction.vector if isinstance(direction, GradientAccumulator) else direction
        return PolicyParams.from_flat(self.layout, self.flatten() + lr * vector)

    def equals(self, other: "PolicyParams") -> bool:
        return self.layout == other.layout and np.array_equal(self.flatten(), other.flatten())


class GradientAccumulator:
    """與扁平參數同維的偏導數向量，所有訓練器共用"""

    def __init__(self, layout: ParamLayout, vector: np.ndarray | None = None):
        self.layout = layout
        if vector is None:
            vector = np.zeros(layout.size)
        elif vector.shape != (layout.size,):
            raise InvalidInputError(
                f"梯度維度 {vector.shape} 與佈局 ({layout.size},) 不符"
            )
        self.vector = vector

    def blocks(self) -> dict[str, np.ndarray]:
        return self.layout.unflatten(self.vector)

    def block(self, name: str) -> np.ndarray:
        return self.blocks()[name]

    def add(self, other: "GradientAccumulator", scale: float = 1.0) -> "GradientAccumulator":
        if other.layout != self.layout:
            raise InvalidInputError("梯度佈局不一致")
        self.vector += scale * other.vector
        return self

    def scaled(self, scale: float) -> "GradientAccumulator":
        return GradientAccumulator(self.layout, self.vector * scale)

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))

    def clipped(self, max_norm: float | None) -> "GradientAccumulator":
        if max_norm is None:
            return self
        norm = self.norm()
        if norm <= max_norm or norm == 0.0:
            return self
        return self.scaled(max_norm / norm)


def check_same_layout(*params: PolicyParams) -> None:
    layouts = {p.layout for p in params}
    if len(layouts) > 1:
        raise InvalidInputError("參數維度不一致")


def zero_params(layout: ParamLayout) -> PolicyParams:
    return PolicyParams.from_flat(layout, np.zeros(layout.size))


def init_params(
    env: EnvConfig, policy: PolicyConfig, rng: np.random.Generator, vocab: int = 12
) -> PolicyParams:
    """小幅隨機嵌入與輸出權重，偏置與讀出區塊為零"""
    layout = ParamLayout.for_config(env, policy.d, vocab)
    shapes = layout.shapes()
    scale = policy.init_scale
    return PolicyParams(
        context_embed=rng.normal(0.0, scale, shapes["context_embed"]),
        token_embed=rng.normal(0.0, scale, shapes["token_embed"]),
        output_weights=rng.normal(0.0, scale, shapes["output_weights"]),
        output_bias=np.zeros(shapes["output_bias"]),
        readout_weights=np.zeros(shapes["readout_weights"]),
    )


def sharpened_copy(params: PolicyParams, factor: float) -> PolicyParams:
    """把輸出層與讀出區塊乘以 factor，使每個狀態的 logits 精確縮放"""
    return PolicyParams(
        context_embed=params.context_embed,
        token_embed=params.token_embed,
        output_weights=params.output_weights * factor,
        output_bias=params.output_bias * factor,
        readout_weights=params.readout_weights * factor,
    )


# ---- 檢查點 ----


@dataclass
class Checkpoint:
    header: dict[str, Any]
    blocks: dict[str, PolicyParams] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return str(self.header.get("kind", "params"))

    @property
    def meta(self) -> dict[str, Any]:
        return dict(self.header.get("meta", {}))


def save_checkpoint(
    path: str | Path,
    blocks: Mapping[str, PolicyParams] | PolicyParams | None = None,
    kind: str = "params",
    meta: Mapping[str, Any] | None = None,
    config_hash: str = "",
) -> Path:
    path = Path(path)
    if isinstance(blocks, PolicyParams):
        blocks = {"params": blocks}
    blocks = dict(blocks or {})
    if kind == "params" and "params" not in blocks:
        raise InvalidInputError("params 檢查點需要 'params' 區塊")

    layouts = {p.layout for p in blocks.values()}
    if len(layouts) > 1:
        raise InvalidInputError("檢查點內各區塊佈局不一致")
    layout = next(iter(layouts)) if layouts else None

    header: dict[str, Any] = {
        "format_version": CHECKPOINT_VERSION,
        "kind": kind,
        "config_hash": config_hash,
        "vocab": layout.vocab if layout else 12,
        "d": layout.d if layout else 0,
        "layout": layout.to_dict() if layout else None,
        "shapes": {k: list(v) for k, v in layout.shapes().items()} if layout else {},
        "blocks": list(blocks),
        "meta": dict(meta or {}),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(p.flatten(), dtype="<f8").tobytes() for p in blocks.values()
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"檢查點不存在: {path}")
    data = path.read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ConfigurationError(f"不是檢查點文件: {path}")
    cursor = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack("<Q", data[cursor : cursor + 8])
    cursor += 8
    header = json.loads(data[cursor : cursor + header_len].decode("utf-8"))
    cursor += header_len
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"不支援的檢查點版本: {header.get('format_version')}")

    blocks: dict[str, PolicyParams] = {}
    if header.get("layout"):
        layout = ParamLayout(**header["layout"])
        values = np.frombuffer(data[cursor:], dtype="<f8")
        expected = layout.size * len(header["blocks"])
        if values.size != expected:
            raise ConfigurationError(
                f"檢查點資料長度 {values.size} 與 header 預期 {expected} 不符"
            )
        for i, name in enumerate(header["blocks"]):
            chunk = values[i * layout.size : (i + 1) * layout.size]
            blocks[name] = PolicyParams.from_flat(layout, chunk.astype(np.float64))
    return Checkpoint(header=header, blocks=blocks)
