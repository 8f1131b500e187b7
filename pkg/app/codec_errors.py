"""各编码器共用的异常与违规记录"""
from dataclasses import dataclass
from enum import Enum


class OverBudget(ValueError):
    """编码长度超出预算"""

    def __init__(self, count, budget, unit="events"):
        label = "音符" if unit == "tuples" else "事件"
        super().__init__(f"{label}数 {count} 超出预算 {budget}")
        self.count = count
        self.budget = budget
        self.unit = unit


class NotMonophonic(ValueError):
    def __init__(self, column, pitches):
        super().__init__(f"第 {column} 格同时发声的音高 {sorted(pitches)} 不是单声部")
        self.column = column
        self.pitches = tuple(sorted(pitches))


class OverflowViolation(ValueError):
    """音符元组的累计起点越过小节末尾"""

    def __init__(self, position, onset, steps):
        super().__init__(f"第 {position} 个元组的起点 {onset} 越过小节长度 {steps}")
        self.position = position
        self.onset = onset
        self.steps = steps


class ViolationKind(Enum):
    NEVER_STARTED = "never-started"
    NEVER_ENDED = "never-ended"
    TIME_OVERFLOW = "time-overflow"
    SHORT_BAR = "short-bar"
    ZERO_LENGTH = "zero-length"
    PADDING_INTERLEAVED = "padding-interleaved"
    DANGLING_HOLD = "dangling-hold"
    DURATION_CLIPPED = "duration-clipped"
    EMPTY_DURATION = "empty-duration"
    INVALID_FIELD = "invalid-field"
    STRAY_VELOCITY = "stray-velocity"


@dataclass(frozen=True)
class Violation:
    """解码时发现的结构性问题，position 为序列中的下标"""
    kind: ViolationKind
    position: int
    detail: str = ""

    def __str__(self):
        return f"{self.kind.value}@{self.position}: {self.detail}"
