"""
動作詞表與區間文法
==================

詞表：數字 0–9（id 0..9）、SEP（「到」，id 10）、EOS（id 11）。
輸出文法為 D⁺ SEP D⁺ EOS，每段 D⁺ 為 1..max_digits 個數字。
"""

from collections.abc import Sequence
from dataclasses import dataclass

from ..config import EnvConfig


SEP = 10
EOS = 11
VOCAB_SIZE = 12
DIGITS = tuple(range(10))

TOKEN_NAMES = (*(str(d) for d in DIGITS), "SEP", "EOS")


@dataclass(frozen=True, order=True)
class TemporalInterval:
    """閉區間 [start, end]，以時間格為單位"""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"非法區間 [{self.start}, {self.end}]")

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def within(self, video_length: int) -> bool:
        return self.end <= video_length - 1


@dataclass(frozen=True)
class DecodeFailure:
    """解碼失敗是一個值：訓練器把它當作獎勵 0"""

    reason: str


def token_from_name(name: str) -> int:
    """'0'..'9'、'SEP'、'EOS' 轉為 token id"""
    try:
        return TOKEN_NAMES.index(name)
    except ValueError as exc:
        raise ValueError(f"未知 token 名稱: {name!r}") from exc


def tokens_from_names(names: Sequence[str]) -> tuple[int, ...]:
    return tuple(token_from_name(n) for n in names)


def encode_number(value: int) -> tuple[int, ...]:
    """正規十進位編碼，除單一 0 外無前導零"""
    return tuple(int(ch) for ch in str(int(value)))


def encode_interval(interval: TemporalInterval) -> tuple[int, ...]:
    return (*encode_number(interval.start), SEP, *encode_number(interval.end), EOS)


def decode_trajectory(
    tokens: Sequence[int], cfg: EnvConfig
) -> TemporalInterval | DecodeFailure:
    """
    依文法解碼 token 序列

    任何文法違規、start > end 或 end ≥ video_length 都回傳 DecodeFailure。
    """
    return decode_tokens(tokens, cfg.video_length)


def decode_tokens(
    tokens: Sequence[int], video_length: int
) -> TemporalInterval | DecodeFailure:
    max_digits = len(str(video_length - 1))
    tokens = [int(t) for t in tokens]
    if any(t < 0 or t >= VOCAB_SIZE for t in tokens):
        return DecodeFailure("token out of vocabulary")

    pos = 0
    numbers: list[int] = []
    for terminator in (SEP, EOS):
        digits: list[int] = []
        while pos < len(tokens) and tokens[pos] < 10:
            digits.append(tokens[pos])
            pos += 1
        if not digits:
            return DecodeFailure("missing digits")
        if len(digits) > max_digits:
            return DecodeFailure("too many digits")
        if pos >= len(tokens):
            return DecodeFailure("truncated")
        if tokens[pos] != terminator:
            return DecodeFailure("unexpected token")
        numbers.append(int("".join(str(d) for d in digits)))
        pos += 1

    if pos != len(tokens):
        return DecodeFailure("tokens after EOS")
    start, end = numbers
    if start > end:
        return DecodeFailure("start after end")
    if end >= video_length:
        return DecodeFailure("end outside video")
    return TemporalInterval(start, end)


def grammar_prefix_state(prefix: Sequence[int]) -> tuple[str, str, str]:
    """
    解析前綴所處的文法階段

    Returns:
        (phase, start_digits, end_digits)，phase 為
        "start" / "end" / "done" / "invalid"
    """
    start_digits = ""
    end_digits = ""
    phase = "start"
    for token in prefix:
        if phase == "start":
            if token < 10:
                start_digits += str(token)
            elif token == SEP and start_digits:
                phase = "end"
            else:
                return "invalid", start_digits, end_digits
        elif phase == "end":
            if token < 10:
                end_digits += str(token)
            elif token == EOS and end_digits:
                phase = "done"
            else:
                return "invalid", start_digits, end_digits
        else:
            return "invalid", start_digits, end_digits
    return phase, start_digits, end_digits


def max_digits_for(video_length: int) -> int:
    return len(str(video_length - 1))


def _completable(value: int, used: int, lo: int, hi: int, max_digits: int) -> bool:
    """value 本身或再補若干位數後能否落在 [lo, hi]"""
    if lo <= value <= hi:
        return True
    if value == 0:
        return False
    for extra in range(1, max_digits - used + 1):
        base = value * 10**extra
        if max(base, lo) <= min(base + 10**extra - 1, hi):
            return True
    return False


def valid_next_tokens(prefix: Sequence[int], video_length: int) -> tuple[int, ...]:
    """
    在前綴之後仍可完成為合法區間的下一個 token 集合

    只允許正規編碼（無前導零）；前綴已無法補救時回傳 (EOS,)。
    """
    max_digits = max_digits_for(video_length)
    hi = video_length - 1
    phase, start_digits, end_digits = grammar_prefix_state(prefix)
    allowed: list[int] = []

    if phase == "start":
        if len(start_digits) < max_digits and start_digits != "0":
            for digit in DIGITS:
                value = int(start_digits + str(digit))
                if _completable(value, len(start_digits) + 1, 0, hi, max_digits):
                    allowed.append(digit)
        if start_digits and int(start_digits) <= hi:
            allowed.append(SEP)
    elif phase == "end":
        start = int(start_digits)
        if start <= hi:
            if len(end_digits) < max_digits and end_digits != "0":
                for digit in DIGITS:
                    value = int(end_digits + str(digit))
                    if _completable(value, len(end_digits) + 1, start, hi, max_digits):
                        allowed.append(digit)
            if end_digits and start <= int(end_digits) <= hi:
                allowed.append(EOS)

    return tuple(allowed) if allowed else (EOS,)


def oracle_next_token(prefix: Sequence[int], target: TemporalInterval) -> int:
    """
    朝目標區間前進的下一個 token

    在路徑上時重現正規編碼；偏離後盡快以 SEP / EOS 收尾。
    """
    phase, start_digits, end_digits = grammar_prefix_state(prefix)
    if phase == "start":
        wanted = str(target.start)
        if wanted.startswith(start_digits) and len(start_digits) < len(wanted):
            return int(wanted[len(start_digits)])
        return SEP
    if phase == "end":
        wanted = str(target.end)
        if wanted.startswith(end_digits) and len(end_digits) < len(wanted):
            return int(wanted[len(end_digits)])
        return EOS
    return EOS
