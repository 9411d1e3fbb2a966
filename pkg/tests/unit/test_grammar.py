#!/usr/bin/env python3
"""
動作文法單元測試
"""

import numpy as np
import pytest

from tvg_distill.config import EnvConfig
from tvg_distill.env.grammar import (
    EOS,
    SEP,
    DecodeFailure,
    TemporalInterval,
    decode_tokens,
    decode_trajectory,
    encode_interval,
    oracle_next_token,
    tokens_from_names,
    valid_next_tokens,
)


class TestEncoding:
    """測試正規編碼與解碼"""

    def test_encode_interval(self):
        assert encode_interval(TemporalInterval(3, 12)) == (3, SEP, 1, 2, EOS)
        assert encode_interval(TemporalInterval(0, 0)) == (0, SEP, 0, EOS)

    def test_decode_valid(self):
        cfg = EnvConfig()
        assert decode_trajectory((3, SEP, 1, 2, EOS), cfg) == TemporalInterval(3, 12)

    @pytest.mark.parametrize(
        "tokens,reason",
        [
            ((SEP, 1, EOS), "missing digits"),
            ((1, 2, 3, SEP, 4, EOS), "too many digits"),
            ((1, SEP, 4), "truncated"),
            ((1, EOS), "unexpected token"),
            ((1, SEP, 4, EOS, EOS), "tokens after EOS"),
            ((9, SEP, 4, EOS), "start after end"),
            ((1, SEP, 2, 5, EOS), "end outside video"),
            ((1, SEP, 12, EOS), "token out of vocabulary"),
        ],
    )
    def test_decode_failures(self, tokens, reason):
        result = decode_tokens(tokens, 20)
        assert isinstance(result, DecodeFailure)
        assert result.reason == reason

    def test_interval_rejects_reversed_bounds(self):
        with pytest.raises(ValueError):
            TemporalInterval(5, 3)
        with pytest.raises(ValueError):
            TemporalInterval(-1, 3)

    def test_token_names(self):
        assert tokens_from_names(["1", "SEP", "EOS"]) == (1, SEP, EOS)
        with pytest.raises(ValueError):
            tokens_from_names(["TO"])


class TestValidNextTokens:
    """測試文法約束的下一個 token 集合"""

    def test_empty_prefix_allows_all_digits(self):
        assert set(valid_next_tokens((), 20)) == set(range(10))

    def test_two_digit_start(self):
        assert set(valid_next_tokens((1,), 20)) == {*range(10), SEP}
        assert valid_next_tokens((2,), 20) == (SEP,)
        assert valid_next_tokens((0,), 20) == (SEP,)

    def test_end_must_not_precede_start(self):
        assert set(valid_next_tokens((5, SEP), 20)) == {1, 5, 6, 7, 8, 9}

    def test_broken_prefix_closes(self):
        assert valid_next_tokens((SEP,), 20) == (EOS,)

    @pytest.mark.parametrize("video_length", [12, 20, 100])
    def test_random_walks_always_decode(self, video_length):
        rng = np.random.default_rng(video_length)
        for _ in range(200):
            tokens: list[int] = []
            while not tokens or tokens[-1] != EOS:
                allowed = valid_next_tokens(tokens, video_length)
                tokens.append(int(rng.choice(allowed)))
            assert isinstance(decode_tokens(tokens, video_length), TemporalInterval)


class TestOracleNextToken:
    """測試朝目標區間前進的 token"""

    def test_reproduces_canonical_encoding(self):
        target = TemporalInterval(3, 12)
        tokens: list[int] = []
        while not tokens or tokens[-1] != EOS:
            tokens.append(oracle_next_token(tokens, target))
        assert tuple(tokens) == encode_interval(target)

    def test_every_interval_reachable(self):
        for start in range(20):
            for end in range(start, 20):
                target = TemporalInterval(start, end)
                tokens: list[int] = []
                while not tokens or tokens[-1] != EOS:
                    tokens.append(oracle_next_token(tokens, target))
                assert decode_tokens(tokens, 20) == target

    def test_off_path_closes_quickly(self):
        target = TemporalInterval(3, 12)
        assert oracle_next_token((4,), target) == SEP
        assert oracle_next_token((3, SEP, 2), target) == EOS
