"""
自迴歸類別策略
==============

狀態 s_t = (影片, 查詢, a₍<t₎)。logits 由三部分相加：

    logits = W · f(s) + b + R[t] · φ(s)

- f(s)：池化特徵 [mean(context_embed[context]) + context_embed[query] ;
  mean(token_embed[prefix])]，維度 2d
- φ(s)：邊界讀出特徵 [查詢區間起點 one-hot ; 終點 one-hot ; 1]，維度 2L+1
- R[t]：依解碼步 t 區分的讀出權重

所有梯度都經由 `backprop`：給定每個狀態的 logit 梯度矩陣 [T, V]，
以鏈鎖律映射到扁平參數空間。
"""

from collections.abc import Sequence
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import log_softmax

from ..env.grammar import EOS, VOCAB_SIZE, DecodeFailure, TemporalInterval, decode_tokens
from ..env.instances import GroundingInstance, query_run
from ..utils.error_handler import InvalidInputError, NumericError
from ..utils.rng import sample_index
from .params import GradientAccumulator, PolicyParams


@dataclass(frozen=True)
class PolicyState:
    instance: GroundingInstance
    prefix: tuple[int, ...] = ()


@dataclass(frozen=True, eq=False)
class Trajectory:
    tokens: tuple[int, ...]
    logp_sampler: np.ndarray
    decoded: TemporalInterval | DecodeFailure

    def __post_init__(self) -> None:
        if len(self.logp_sampler) != len(self.tokens):
            raise InvalidInputError("logp_sampler 與 tokens 長度不一致")

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def log_prob(self) -> float:
        return float(np.sum(self.logp_sampler))


@lru_cache(maxsize=65536)
def _readout_index(context: tuple[int, ...], query: int, video_length: int) -> np.ndarray:
    run = query_run(context, query)
    index = np.array([run.start, video_length + run.end, 2 * video_length])
    index.setflags(write=False)
    return index


def readout_index(instance: GroundingInstance) -> np.ndarray:
    """φ(s) 的三個非零位置：起點、L + 終點、常數"""
    return _readout_index(instance.context, instance.query, instance.video_length)


def readout_features(state: PolicyState) -> np.ndarray:
    instance = state.instance
    phi = np.zeros(2 * instance.video_length + 1)
    phi[readout_index(instance)] = 1.0
    return phi


def safe_log_softmax(logits: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(logits)):
        raise NumericError("logits 含非有限值")
    return log_softmax(logits, axis=-1)


class Policy:
    """
    策略共同介面

    子類只需實作 `trajectory_logits`；學生與教師共享其餘契約。
    """

    vocab: int = VOCAB_SIZE

    def trajectory_logits(
        self, instance: GroundingInstance, tokens: Sequence[int], n_states: int | None = None
    ) -> np.ndarray:
        """回傳 [n_states, V]，第 t 列對應前綴 tokens[:t]"""
        raise NotImplementedError

    def logits(self, state: PolicyState) -> np.ndarray:
        prefix = state.prefix
        return self.trajectory_logits(state.instance, prefix, n_states=len(prefix) + 1)[-1]

    def token_distribution(self, state: PolicyState) -> np.ndarray:
        return np.exp(safe_log_softmax(self.logits(state)))

    def log_distribution(self, state: PolicyState) -> np.ndarray:
        return safe_log_softmax(self.logits(state))

    def log_prob(self, state: PolicyState, token: int) -> float:
        if not 0 <= token < self.vocab:
            raise InvalidInputError(f"token 不在詞表內: {token}")
        return float(self.log_distribution(state)[token])

    def trajectory_log_distributions(
        self, instance: GroundingInstance, tokens: Sequence[int]
    ) -> np.ndarray:
        """教師強制下每個狀態的完整 log 分佈 [T, V]"""
        return safe_log_softmax(self.trajectory_logits(instance, tokens))

    def evaluate_trajectory(
        self, instance: GroundingInstance, tokens: Sequence[int]
    ) -> np.ndarray:
        """教師強制評分，從不抽樣"""
        if len(tokens) == 0:
            raise InvalidInputError("tokens 不可為空")
        logp = self.trajectory_log_distributions(instance, tokens)
        return logp[np.arange(len(tokens)), np.asarray(tokens)]

    def sample_trajectory(
        self, instance: GroundingInstance, rng: np.random.Generator, max_len: int
    ) -> Trajectory:
        if max_len < 4:
            raise InvalidInputError(f"max_len 必須 ≥ 4: {max_len}")
        tokens: list[int] = []
        logps: list[float] = []
        for _ in range(max_len):
            logp = self.log_distribution(PolicyState(instance, tuple(tokens)))
            token = sample_index(np.exp(logp), rng)
            tokens.append(token)
            logps.append(float(logp[token]))
            if token == EOS:
                break
        return Trajectory(
            tokens=tuple(tokens),
            logp_sampler=np.array(logps),
            decoded=decode_tokens(tokens, instance.video_length),
        )

    def greedy_decode(
        self, instance: GroundingInstance, max_len: int
    ) -> TemporalInterval | DecodeFailure:
        tokens: list[int] = []
        for _ in range(max_len):
            token = int(np.argmax(self.logits(PolicyState(instance, tuple(tokens)))))
            tokens.append(token)
            if token == EOS:
                break
        return decode_tokens(tokens, instance.video_length)


class ParamPolicy(Policy):
    """由 PolicyParams 定義的線性 softmax 策略"""

    def __init__(self, params: PolicyParams):
        self.params = params
        self.vocab = params.layout.vocab

    def context_feature(self, instance: GroundingInstance) -> np.ndarray:
        embed = self.params.context_embed
        context = np.asarray(instance.context)
        return embed[context].mean(axis=0) + embed[instance.query]

    def features(
        self, instance: GroundingInstance, tokens: Sequence[int], n_states: int | None = None
    ) -> np.ndarray:
        """池化特徵矩陣 [T, 2d]"""
        n_states = len(tokens) if n_states is None else n_states
        d = self.params.d
        feats = np.zeros((n_states, 2 * d))
        feats[:, :d] = self.context_feature(instance)
        if n_states > 1:
            prefix = np.asarray(tokens[: n_states - 1], dtype=np.int64)
            sums = np.cumsum(self.params.token_embed[prefix], axis=0)
            feats[1:, d:] = sums / np.arange(1, n_states)[:, None]
        return feats

    def trajectory_logits(
        self, instance: GroundingInstance, tokens: Sequence[int], n_states: int | None = None
    ) -> np.ndarray:
        n_states = len(tokens) if n_states is None else n_states
        if n_states > self.params.layout.max_len:
            raise InvalidInputError(
                f"狀態數 {n_states} 超過 max_len {self.params.layout.max_len}"
            )
        if instance.video_length != self.params.layout.video_length:
            raise InvalidInputError("實例的 video_length 與參數佈局不一致")
        params = self.params
        feats = self.features(instance, tokens, n_states)
        readout = params.readout_weights[:n_states][:, :, readout_index(instance)].sum(axis=-1)
        return feats @ params.output_weights.T + params.output_bias + readout


def as_policy(policy: "Policy | PolicyParams") -> Policy:
    if isinstance(policy, PolicyParams):
        return ParamPolicy(policy)
    return policy


# ---- 模組層級操作 ----


def state_features(params: PolicyParams, state: PolicyState) -> np.ndarray:
    """池化特徵 [d_state]；空前綴時後半段為零"""
    prefix = state.prefix
    return ParamPolicy(params).features(state.instance, prefix, len(prefix) + 1)[-1]


def token_distribution(policy: Policy | PolicyParams, state: PolicyState) -> np.ndarray:
    return as_policy(policy).token_distribution(state)


def log_prob(policy: Policy | PolicyParams, state: PolicyState, token: int) -> float:
    return as_policy(policy).log_prob(state, token)


def sample_trajectory(
    policy: Policy | PolicyParams,
    instance: GroundingInstance,
    rng: np.random.Generator,
    max_len: int,
) -> Trajectory:
    return as_policy(policy).sample_trajectory(instance, rng, max_len)


def evaluate_trajectory(
    policy: Policy | PolicyParams, instance: GroundingInstance, tokens: Sequence[int]
) -> np.ndarray:
    return as_policy(policy).evaluate_trajectory(instance, tokens)


def greedy_decode(
    policy: Policy | PolicyParams, instance: GroundingInstance, max_len: int
) -> TemporalInterval | DecodeFailure:
    return as_policy(policy).greedy_decode(instance, max_len)


def backprop(
    params: PolicyParams,
    instance: GroundingInstance,
    tokens: Sequence[int],
    logit_grads: np.ndarray,
) -> GradientAccumulator:
    """
    把每個狀態的 logit 梯度映射到參數梯度

    logit_grads[t] 對應前綴 tokens[:t] 的狀態。
    """
    logit_grads = np.atleast_2d(np.asarray(logit_grads, dtype=np.float64))
    n_states = logit_grads.shape[0]
    layout = params.layout
    d = params.d
    acc = GradientAccumulator(layout)
    blocks = acc.blocks()

    policy = ParamPolicy(params)
    feats = policy.features(instance, tokens, n_states)

    blocks["output_weights"] += logit_grads.T @ feats
    blocks["output_bias"] += logit_grads.sum(axis=0)
    blocks["readout_weights"][:n_states, :, readout_index(instance)] += logit_grads[:, :, None]

    feat_grads = logit_grads @ params.output_weights
    ctx_grad = feat_grads[:, :d].sum(axis=0)
    counts = np.bincount(np.asarray(instance.context), minlength=layout.n_symbols)
    blocks["context_embed"] += np.outer(counts / instance.video_length, ctx_grad)
    blocks["context_embed"][instance.query] += ctx_grad

    if n_states > 1:
        coef = feat_grads[1:, d:] / np.arange(1, n_states)[:, None]
        tail = np.cumsum(coef[::-1], axis=0)[::-1]
        prefix = np.asarray(tokens[: n_states - 1], dtype=np.int64)
        np.add.at(blocks["token_embed"], prefix, tail)
    return acc


def score_logit_grads(
    log_dists: np.ndarray, tokens: Sequence[int], weights: np.ndarray | None = None
) -> np.ndarray:
    """每個狀態的 weights[t]·(one_hot(a_t) − p_t)"""
    probs = np.exp(log_dists)
    grads = -probs
    grads[np.arange(len(grads)), np.asarray(tokens[: len(grads)])] += 1.0
    if weights is not None:
        grads *= np.asarray(weights, dtype=np.float64)[:, None]
    return grads


def reverse_kl_logit_grads(student_logp: np.ndarray, teacher_logp: np.ndarray) -> np.ndarray:
    """∇_logits KL(p‖q) = p ⊙ (log p − log q − KL)，逐狀態"""
    p = np.exp(student_logp)
    diff = student_logp - teacher_logp
    kl = np.sum(p * diff, axis=-1, keepdims=True)
    return p * (diff - kl)


def grad_log_prob(params: PolicyParams, state: PolicyState, token: int) -> GradientAccumulator:
    """解析梯度 ∇θ log πθ(token | state)"""
    prefix = state.prefix
    n_states = len(prefix) + 1
    logp = ParamPolicy(params).log_distribution(state)
    grads = np.zeros((n_states, params.layout.vocab))
    grads[-1] = -np.exp(logp)
    grads[-1, token] += 1.0
    return backprop(params, state.instance, prefix, grads)
