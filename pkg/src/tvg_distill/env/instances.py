"""
合成時間定位實例
================

一個實例是「影片」（長度 video_length 的特徵符號序列）與查詢符號的配對，
查詢符號在序列中恰好出現為一段最大連續區間，該區間即標註。
"""

import hashlib
import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import EnvConfig
from ..debug import env_debug_log
from ..utils.error_handler import ConfigurationError, InvalidInputError
from ..utils.rng import derive_int_seed
from .grammar import TemporalInterval


@dataclass(frozen=True)
class GroundingInstance:
    id: str
    context: tuple[int, ...]
    query: int
    gt: TemporalInterval
    video_length: int

    def to_record(self) -> dict:
        # 欄位順序固定
        return {
            "id": self.id,
            "context": list(self.context),
            "query": self.query,
            "gt_start": self.gt.start,
            "gt_end": self.gt.end,
            "video_length": self.video_length,
        }

    @classmethod
    def from_record(cls, record: dict) -> "GroundingInstance":
        return cls(
            id=str(record["id"]),
            context=tuple(int(c) for c in record["context"]),
            query=int(record["query"]),
            gt=TemporalInterval(int(record["gt_start"]), int(record["gt_end"])),
            video_length=int(record["video_length"]),
        )


def query_run(context: Sequence[int], query: int) -> TemporalInterval:
    """回傳查詢符號唯一的最大連續區間"""
    positions = [i for i, c in enumerate(context) if c == query]
    if not positions:
        raise InvalidInputError("context 中沒有查詢符號")
    start, end = positions[0], positions[-1]
    if end - start + 1 != len(positions):
        raise InvalidInputError("查詢符號不是單一連續區間")
    return TemporalInterval(start, end)


def instance_id(context: Sequence[int], query: int, gt: TemporalInterval) -> str:
    payload = f"{','.join(map(str, context))}|{query}|{gt.start}-{gt.end}"
    return hashlib.blake2b(payload.encode("utf-8"), digest_size=8).hexdigest()


def generate_instance(seed: int, cfg: EnvConfig) -> GroundingInstance:
    """
    由 (seed, cfg) 確定性地生成一個實例

    標註長度在 [min_span, max_span] 均勻，位置在可行位置中均勻，
    其餘位置從非查詢符號中抽取，因此不會出現意外的查詢區間。
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    query = int(rng.integers(cfg.n_symbols))
    span = int(rng.integers(cfg.min_span, cfg.max_span + 1))
    start = int(rng.integers(0, cfg.video_length - span + 1))
    gt = TemporalInterval(start, start + span - 1)

    others = np.array([s for s in range(cfg.n_symbols) if s != query])
    filler = others[rng.integers(len(others), size=cfg.video_length)]
    context = [int(x) for x in filler]
    for i in range(gt.start, gt.end + 1):
        context[i] = query

    return GroundingInstance(
        id=instance_id(context, query, gt),
        context=tuple(context),
        query=query,
        gt=gt,
        video_length=cfg.video_length,
    )


def generate_pools(
    seed: int, cfg: EnvConfig, train_size: int, holdout_size: int
) -> tuple[list[GroundingInstance], list[GroundingInstance]]:
    """
    生成互不相交的訓練池與保留池

    內容相同的實例只保留一次；若兩個不同內容得到相同 id 則報錯。
    """
    if train_size < 1 or holdout_size < 0:
        raise ConfigurationError("池大小必須為正")
    seen: dict[str, GroundingInstance] = {}
    ordered: list[GroundingInstance] = []
    index = 0
    total = train_size + holdout_size
    max_attempts = 50 * total + 1000
    while len(ordered) < total:
        if index >= max_attempts:
            raise ConfigurationError(
                f"無法生成 {total} 個互異實例，請放寬 env 配置"
            )
        inst = generate_instance(derive_int_seed(seed, "gen", index), cfg)
        index += 1
        existing = seen.get(inst.id)
        if existing is not None:
            if existing != inst:
                raise ConfigurationError(f"實例 id 碰撞: {inst.id}")
            continue
        seen[inst.id] = inst
        ordered.append(inst)
    env_debug_log(f"生成 {total} 個實例，共嘗試 {index} 個種子")
    return ordered[:train_size], ordered[train_size:]


def pool_header(config_hash: str, split: str, size: int) -> dict:
    return {"header": {"kind": "pool", "split": split, "size": size, "config_hash": config_hash}}


def dump_jsonl_line(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def write_pool(
    path: str | Path,
    instances: Iterable[GroundingInstance],
    config_hash: str = "",
    split: str = "",
) -> None:
    instances = list(instances)
    lines = [dump_jsonl_line(pool_header(config_hash, split, len(instances)))]
    lines.extend(dump_jsonl_line(inst.to_record()) for inst in instances)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_pool(path: str | Path) -> list[GroundingInstance]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"實例池不存在: {path}")
    instances = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        if "header" in record:
            continue
        instances.append(GroundingInstance.from_record(record))
    return instances
