"""
任务流中的基本数据类型：任务、预测、结果和轨迹
"""

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError

SIMPLEX_TOLERANCE = 1e-6

STEP_MODEL_MESSAGE = "model_message"
STEP_TOOL_CALL = "tool_call"
STEP_TOOL_RESULT = "tool_result"
STEP_KINDS = (STEP_MODEL_MESSAGE, STEP_TOOL_CALL, STEP_TOOL_RESULT)


def parse_timestamp(value, field_name: str = "timestamp") -> datetime:
    """解析 ISO-8601 时间，无时区的按 UTC 处理"""
    if isinstance(value, datetime):
        dt = value
    else:
        if not isinstance(value, str) or not value:
            raise ValidationError("expected ISO-8601 timestamp", field=field_name)
        text = value[:-1] + "+00:00" if value.endswith("Z") else value
        try:
            dt = datetime.fromisoformat(text)
        except ValueError as e:
            raise ValidationError(f"invalid timestamp {value!r}", field=field_name) from e
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass(frozen=True)
class Task:
    """任务流中的一个预测问题"""
    id: str
    question: str
    candidates: Tuple[str, ...]
    close_time: datetime
    batch_id: int
    market_prices: Optional[Tuple[float, ...]] = None
    outcome_index: Optional[int] = None
    price_snapshot_time: Optional[datetime] = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("must be non-empty", field="id")
        if not self.question or not self.question.strip():
            raise ValidationError("must be non-empty", field="question")
        if len(self.candidates) < 2:
            raise ValidationError("need at least 2 candidates", field="candidates")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValidationError("candidate labels must be unique", field="candidates")
        if self.market_prices is not None:
            if len(self.market_prices) != len(self.candidates):
                raise ValidationError("length must equal number of candidates", field="market_prices")
            for price in self.market_prices:
                if not (0.0 <= price <= 1.0):
                    raise ValidationError(f"price {price} outside [0, 1]", field="market_prices")
        if self.outcome_index is not None and not (0 <= self.outcome_index < len(self.candidates)):
            raise ValidationError("must be < number of candidates", field="outcome_index")

    @property
    def k(self) -> int:
        return len(self.candidates)

    def cutoff(self, offset_hours: float = 6.0) -> datetime:
        """信息截止时间：收盘时间减去快照偏移"""
        return self.close_time - timedelta(hours=offset_hours)

    def outcome(self) -> "Outcome":
        if self.outcome_index is None:
            raise ValidationError("task outcome not resolved", field="outcome_index")
        return Outcome.one_hot(self.outcome_index, self.k)


@dataclass(frozen=True)
class Forecast:
    """候选项上的概率向量，构造时归一化"""
    probs: Tuple[float, ...]

    def __post_init__(self):
        values = np.asarray(self.probs, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ValidationError("probs must be a non-empty vector", field="probs")
        if not np.all(np.isfinite(values)) or np.any(values < 0.0):
            raise ValidationError("probs must be finite and non-negative", field="probs")
        total = float(values.sum())
        if total <= 0.0:
            values = np.full(values.size, 1.0 / values.size)
        elif abs(total - 1.0) > SIMPLEX_TOLERANCE:
            values = values / total
        object.__setattr__(self, "probs", tuple(float(v) for v in values))

    @classmethod
    def uniform(cls, k: int) -> "Forecast":
        return cls(tuple([1.0 / k] * k))

    @classmethod
    def from_mapping(cls, mapping: Dict[str, float], candidates: Sequence[str]) -> "Forecast":
        """按候选顺序取值，缺失候选记 0 后再归一化"""
        values = []
        for label in candidates:
            value = mapping.get(label, 0.0)
            values.append(float(value))
        return cls(tuple(values))

    def as_mapping(self, candidates: Sequence[str]) -> Dict[str, float]:
        return dict(zip(candidates, self.probs))

    def argmax(self) -> int:
        return int(np.argmax(self.probs))


@dataclass(frozen=True)
class Outcome:
    """实际结果，one-hot 向量"""
    y: Tuple[int, ...]

    def __post_init__(self):
        if any(v not in (0, 1) for v in self.y) or sum(self.y) != 1:
            raise ValidationError("outcome must be one-hot", field="y")

    @classmethod
    def one_hot(cls, index: int, k: int) -> "Outcome":
        if not 0 <= index < k:
            raise ValidationError(f"index {index} outside [0, {k})", field="outcome_index")
        return cls(tuple(1 if i == index else 0 for i in range(k)))

    @property
    def index(self) -> int:
        return self.y.index(1)


@dataclass(frozen=True)
class TrajectoryStep:
    kind: str
    content: str
    timestamp: str = ""

    def __post_init__(self):
        if self.kind not in STEP_KINDS:
            raise ValidationError(f"kind must be one of {STEP_KINDS}", field="kind")


@dataclass
class Trajectory:
    """一次作答过程：模型消息和工具往返"""
    steps: List[TrajectoryStep] = field(default_factory=list)
    used_fallback: bool = False

    def add(self, kind: str, content: str, timestamp: str = ""):
        self.steps.append(TrajectoryStep(kind, content, timestamp))

    @property
    def model_turns(self) -> int:
        return sum(1 for s in self.steps if s.kind == STEP_MODEL_MESSAGE)

    def text(self) -> str:
        return "\n".join(f"[{s.kind}] {s.content}" for s in self.steps)

    def __len__(self):
        return len(self.steps)

    def to_record(self) -> Dict:
        return {
            "steps": [{"kind": s.kind, "content": s.content, "timestamp": s.timestamp} for s in self.steps],
            "used_fallback": self.used_fallback,
        }
