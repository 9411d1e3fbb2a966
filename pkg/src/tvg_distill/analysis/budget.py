"""
計算預算比較：各演算法第一次達到目標保留集 mIoU 時的累計 token 數與牆鐘時間
"""

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import Any

from ..utils.error_handler import InvalidInputError


@dataclass(frozen=True)
class BudgetPoint:
    tokens: int
    wallclock_ms: float
    mean_iou: float


@dataclass(frozen=True)
class BudgetCurve:
    algo: str
    points: tuple[BudgetPoint, ...]

    def __post_init__(self) -> None:
        tokens = [p.tokens for p in self.points]
        if any(b < a for a, b in zip(tokens, tokens[1:], strict=False)):
            raise InvalidInputError(f"{self.algo}: 累計 token 數必須不遞減")

    @classmethod
    def from_records(cls, records: Iterable[Mapping[str, Any]], algo: str | None = None) -> "BudgetCurve":
        """從指標流中取出 event = eval 的紀錄"""
        points = []
        name = algo
        for record in records:
            if record.get("event") != "eval":
                continue
            name = name or str(record.get("algo", "unknown"))
            points.append(
                BudgetPoint(
                    tokens=int(record["cumulative_tokens"]),
                    wallclock_ms=float(record.get("cumulative_wallclock_ms", 0.0)),
                    mean_iou=float(record["mean_iou"]),
                )
            )
        if not points:
            raise InvalidInputError(f"指標流 {algo or ''} 沒有保留集評估紀錄")
        return cls(algo=name or "unknown", points=tuple(points))

    @property
    def best_mean_iou(self) -> float:
        return max(p.mean_iou for p in self.points)

    def first_reaching(self, target: float) -> BudgetPoint | None:
        for point in self.points:
            if point.mean_iou >= target:
                return point
        return None


@dataclass(frozen=True)
class BudgetRow:
    algo: str
    target_miou: float
    tokens_to_target: int | None
    wallclock_to_target_ms: float | None
    best_miou: float

    @property
    def reached(self) -> bool:
        return self.tokens_to_target is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "algo": self.algo,
            "target_miou": self.target_miou,
            "reached": self.reached,
            "tokens_to_target": self.tokens_to_target,
            "wallclock_to_target_ms": self.wallclock_to_target_ms,
            "best_miou": self.best_miou,
        }


def budget_compare(curves: Sequence[BudgetCurve], target_miou: float) -> list[BudgetRow]:
    """每個演算法一列；未達標時 tokens / wallclock 為 None（not reached）"""
    if not curves:
        raise InvalidInputError("至少需要一條曲線")
    rows = []
    for curve in curves:
        point = curve.first_reaching(target_miou)
        rows.append(
            BudgetRow(
                algo=curve.algo,
                target_miou=target_miou,
                tokens_to_target=point.tokens if point else None,
                wallclock_to_target_ms=point.wallclock_ms if point else None,
                best_miou=curve.best_mean_iou,
            )
        )
    return rows


def token_ratio(rows: Sequence[BudgetRow], numerator: str, denominator: str) -> float | None:
    """numerator / denominator 的達標 token 比；任一未達標或分母為 0 時為 None"""
    by_algo = {row.algo: row for row in rows}
    top = by_algo[numerator].tokens_to_target
    bottom = by_algo[denominator].tokens_to_target
    if top is None or not bottom:
        return None
    return top / bottom


def format_budget_table(rows: Sequence[BudgetRow]) -> str:
    lines = [f"{'algo':<8} {'target':>7} {'tokens':>12} {'wallclock_ms':>14} {'best':>7}"]
    for row in rows:
        tokens = str(row.tokens_to_target) if row.reached else "not reached"
        wallclock = f"{row.wallclock_to_target_ms:.1f}" if row.reached else "-"
        lines.append(
            f"{row.algo:<8} {row.target_miou:>7.3f} {tokens:>12} {wallclock:>14} {row.best_miou:>7.4f}"
        )
    return "\n".join(lines)
