"""
隨機數流衍生
============

每個抽樣位置都從 (run seed, 用途標籤, step, 位置, ...) 衍生獨立的
numpy Generator，因此執行順序與工作執行緒數量不會改變結果。
"""

import hashlib

import numpy as np


def _key_to_int(key: int | str) -> int:
    if isinstance(key, int | np.integer):
        if key < 0:
            raise ValueError(f"rng key 必須為非負整數: {key}")
        return int(key)
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed_sequence(seed: int, *keys: int | str) -> np.random.SeedSequence:
    """由根種子與任意鍵路徑衍生 SeedSequence"""
    return np.random.SeedSequence(
        entropy=int(seed), spawn_key=tuple(_key_to_int(k) for k in keys)
    )


def derive_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """由根種子與鍵路徑衍生獨立的 Generator"""
    return np.random.default_rng(derive_seed_sequence(seed, *keys))


def derive_int_seed(seed: int, *keys: int | str) -> int:
    """衍生一個 63 位元整數種子（用於需要 int 種子的介面）"""
    state = derive_seed_sequence(seed, *keys).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def stable_uniform(*parts: object) -> float:
    """把任意部件雜湊成 [0, 1) 的確定性均勻數"""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") / float(2**64)


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """以單一均勻數做反 CDF 抽樣"""
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    index = int(np.searchsorted(cdf, u, side="right"))
    return min(index, len(probs) - 1)
