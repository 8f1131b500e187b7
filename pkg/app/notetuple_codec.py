"""音符元组编码：每个音符一个 (起点间隔, 音高, 力度, 时值) 元组，每小节固定 16 个"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from app.codec_errors import OverBudget, OverflowViolation, Violation, ViolationKind
from app.core_model import Bar, Note, DEFAULT_QUANTUM

logger = logging.getLogger(__name__)

TUPLE_FIELDS = ("time_offset", "pitch", "velocity", "duration")


@dataclass(frozen=True)
class NoteTuple:
    time_offset: int = 0
    pitch: int = 0
    velocity: int = 0
    duration: int = 0
    is_empty: bool = False

    def as_row(self):
        if self.is_empty:
            return (0, 0, 0, 0)
        return (self.time_offset, self.pitch, self.velocity, self.duration)


EMPTY_TUPLE = NoteTuple(is_empty=True)


@dataclass(frozen=True)
class TupleSequence:
    tuples: Tuple[NoteTuple, ...]
    steps: int = 16

    def to_array(self):
        """(max_tuples, 4) 的 int32 数组，空元组为全零行"""
        return np.array([t.as_row() for t in self.tuples], dtype=np.int32).reshape(len(self.tuples), 4)

    @classmethod
    def from_array(cls, array, steps=16):
        """全零行视为空元组（非空元组的时值至少为 1）"""
        rows = np.asarray(array, dtype=np.int64).reshape(-1, 4)
        tuples = []
        for offset, pitch, velocity, duration in rows:
            if offset == 0 and pitch == 0 and velocity == 0 and duration == 0:
                tuples.append(EMPTY_TUPLE)
            else:
                tuples.append(NoteTuple(int(offset), int(pitch), int(velocity), int(duration)))
        return cls(tuples=tuple(tuples), steps=steps)


def encode_notetuple(bar, max_tuples=16):
    columns = sorted(bar.note_columns(), key=lambda c: (c[1], c[0], c[2], c[3]))
    if len(columns) > max_tuples:
        raise OverBudget(len(columns), max_tuples, unit="tuples")
    tuples = []
    previous = 0
    for pitch, start, end, velocity, _voice in columns:
        tuples.append(NoteTuple(time_offset=start - previous, pitch=pitch, velocity=velocity, duration=end - start))
        previous = start
    tuples.extend([EMPTY_TUPLE] * (max_tuples - len(tuples)))
    return TupleSequence(tuples=tuple(tuples), steps=bar.steps)


def decode_notetuple(seq, quantum=DEFAULT_QUANTUM, index=0):
    """返回 (Bar, report)；起点越过小节末尾时抛出 OverflowViolation，超长时值被截断并记入 report"""
    steps = seq.steps
    report = []
    notes = []
    onset = 0
    seen_empty = False
    for position, item in enumerate(seq.tuples):
        if item.is_empty:
            seen_empty = True
            continue
        if seen_empty:
            report.append(Violation(ViolationKind.PADDING_INTERLEAVED, position, "空元组之后出现非空元组"))
            seen_empty = False
        onset += item.time_offset
        if item.time_offset < 0 or onset >= steps:
            raise OverflowViolation(position, onset, steps)
        if not 0 <= item.pitch < 128 or not 0 <= item.velocity < 128:
            report.append(Violation(ViolationKind.INVALID_FIELD, position,
                                    f"音高 {item.pitch} 或力度 {item.velocity} 超出范围"))
            continue
        if item.duration < 1:
            report.append(Violation(ViolationKind.EMPTY_DURATION, position, f"音高 {item.pitch} 时值为 {item.duration}"))
            continue
        duration = item.duration
        if onset + duration > steps:
            report.append(Violation(ViolationKind.DURATION_CLIPPED, position,
                                    f"音高 {item.pitch} 时值 {duration} 截断为 {steps - onset}"))
            duration = steps - onset
        notes.append(Note(onset=onset * quantum, pitch=item.pitch, duration=duration * quantum,
                          velocity=item.velocity))
    return Bar(index=index, quantum=quantum, steps=steps, notes=tuple(notes)), report
