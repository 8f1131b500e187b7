"""MIDI 式事件编码（NOTE_ON / NOTE_OFF / TIME_SHIFT / SET_VELOCITY）及其单声部变体

词表布局:
    0          PAD
    1..128     NOTE_ON(pitch)
    129..256   NOTE_OFF(pitch)
    257..      TIME_SHIFT(1..max_shift)
    其后       SET_VELOCITY(0..velocity_bins-1)
"""
import logging
from collections import defaultdict, deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple

import numpy as np

from app.codec_errors import NotMonophonic, OverBudget, Violation, ViolationKind
from app.core_model import Bar, Note, DEFAULT_QUANTUM, PITCH_COUNT

logger = logging.getLogger(__name__)


class EventKind(IntEnum):
    PAD = 0
    NOTE_ON = 1
    NOTE_OFF = 2
    TIME_SHIFT = 3
    SET_VELOCITY = 4


@dataclass(frozen=True)
class MusicEvent:
    kind: EventKind
    value: int = 0

    def __str__(self):
        if self.kind == EventKind.PAD:
            return "PAD"
        return f"{self.kind.name}({self.value})"


PAD_EVENT = MusicEvent(EventKind.PAD)


def velocity_to_bin(velocity, bins):
    return velocity * bins // 128


def bin_to_velocity(index, bins):
    """取力度区间的中点；单一区间时即为默认力度 64"""
    return min(127, (index * 128 + 64) // bins)


@dataclass(frozen=True)
class EventVocabulary:
    max_shift: int = 16
    velocity_bins: int = 1

    @property
    def time_shift_offset(self):
        return 1 + 2 * PITCH_COUNT

    @property
    def velocity_offset(self):
        return self.time_shift_offset + self.max_shift

    @property
    def size(self):
        return self.velocity_offset + self.velocity_bins

    def to_token(self, event):
        kind, value = event.kind, event.value
        if kind == EventKind.PAD:
            return 0
        if kind == EventKind.NOTE_ON:
            return 1 + value
        if kind == EventKind.NOTE_OFF:
            return 1 + PITCH_COUNT + value
        if kind == EventKind.TIME_SHIFT:
            return self.time_shift_offset + value - 1
        return self.velocity_offset + value

    def from_token(self, token):
        token = int(token)
        if token == 0:
            return PAD_EVENT
        if 1 <= token <= PITCH_COUNT:
            return MusicEvent(EventKind.NOTE_ON, token - 1)
        if token <= 2 * PITCH_COUNT:
            return MusicEvent(EventKind.NOTE_OFF, token - 1 - PITCH_COUNT)
        if token < self.velocity_offset:
            return MusicEvent(EventKind.TIME_SHIFT, token - self.time_shift_offset + 1)
        if token < self.size:
            return MusicEvent(EventKind.SET_VELOCITY, token - self.velocity_offset)
        raise ValueError(f"词表外的 token: {token}（词表大小 {self.size}）")


@dataclass(frozen=True)
class EventSequence:
    """定长事件序列，true_length 之后全部为 PAD"""
    events: Tuple[MusicEvent, ...]
    true_length: int
    steps: int = 16
    velocity_bins: int = 1

    @property
    def vocabulary(self):
        return EventVocabulary(max_shift=self.steps, velocity_bins=self.velocity_bins)

    def to_tokens(self):
        vocab = self.vocabulary
        return np.array([vocab.to_token(e) for e in self.events], dtype=np.int32)

    @classmethod
    def from_tokens(cls, tokens, steps=16, velocity_bins=1):
        vocab = EventVocabulary(max_shift=steps, velocity_bins=velocity_bins)
        events = tuple(vocab.from_token(t) for t in np.asarray(tokens).ravel())
        true_length = len(events)
        while true_length and events[true_length - 1].kind == EventKind.PAD:
            true_length -= 1
        return cls(events=events, true_length=true_length, steps=steps, velocity_bins=velocity_bins)


def _unpadded_events(bar, velocity_bins):
    """按时间顺序生成事件：同一时刻先 NOTE_OFF，再按力度分组的 SET_VELOCITY 与 NOTE_ON"""
    ons = defaultdict(list)
    offs = defaultdict(list)
    for pitch, start, end, velocity, _voice in bar.note_columns():
        ons[start].append((velocity_to_bin(velocity, velocity_bins), pitch))
        offs[end].append(pitch)

    events = []
    current_bin = velocity_to_bin(64, velocity_bins)
    now = 0
    for tick in sorted(set(ons) | set(offs)):
        if tick > now:
            events.append(MusicEvent(EventKind.TIME_SHIFT, tick - now))
            now = tick
        events.extend(MusicEvent(EventKind.NOTE_OFF, p) for p in sorted(offs.get(tick, ())))
        for vel_bin, pitch in sorted(ons.get(tick, ())):
            if velocity_bins > 1 and vel_bin != current_bin:
                events.append(MusicEvent(EventKind.SET_VELOCITY, vel_bin))
                current_bin = vel_bin
            events.append(MusicEvent(EventKind.NOTE_ON, pitch))
    if now < bar.steps:
        events.append(MusicEvent(EventKind.TIME_SHIFT, bar.steps - now))
    return events


def event_count(bar, velocity_bins=1):
    """小节编码后的真实事件数（不含填充）"""
    return len(_unpadded_events(bar, velocity_bins))


def encode_midilike(bar, max_events=64, velocity_bins=1):
    events = _unpadded_events(bar, velocity_bins)
    if len(events) > max_events:
        raise OverBudget(len(events), max_events)
    true_length = len(events)
    events.extend([PAD_EVENT] * (max_events - true_length))
    return EventSequence(events=tuple(events), true_length=true_length, steps=bar.steps,
                         velocity_bins=velocity_bins)


def decode_midilike(seq, quantum=DEFAULT_QUANTUM, index=0):
    """解码事件序列，返回 (Bar, violations)；结构问题只报告，不做修补"""
    steps = seq.steps
    violations = []
    open_notes = defaultdict(deque)
    notes = []
    now = 0
    current_bin = velocity_to_bin(64, seq.velocity_bins)
    seen_pad = False
    overflowed = False
    # 尚未被 NOTE_ON 使用的 SET_VELOCITY 的位置
    pending_velocity = None

    for position, event in enumerate(seq.events):
        kind = event.kind
        if kind == EventKind.PAD:
            seen_pad = True
            continue
        if seen_pad:
            violations.append(Violation(ViolationKind.PADDING_INTERLEAVED, position, f"{event} 出现在 PAD 之后"))
            seen_pad = False
        if pending_velocity is not None and kind != EventKind.NOTE_ON:
            violations.append(Violation(ViolationKind.STRAY_VELOCITY, pending_velocity, "SET_VELOCITY 之后不是 NOTE_ON"))
            pending_velocity = None
        if kind == EventKind.TIME_SHIFT:
            now += event.value
            if now > steps and not overflowed:
                violations.append(Violation(ViolationKind.TIME_OVERFLOW, position, f"累计时间 {now} > {steps}"))
                overflowed = True
        elif kind == EventKind.SET_VELOCITY:
            if event.value == current_bin:
                violations.append(Violation(ViolationKind.STRAY_VELOCITY, position, f"力度区间 {event.value} 没有变化"))
            current_bin = event.value
            pending_velocity = position
        elif kind == EventKind.NOTE_ON:
            pending_velocity = None
            if now >= steps:
                violations.append(Violation(ViolationKind.TIME_OVERFLOW, position,
                                            f"音高 {event.value} 在小节末尾之后开始"))
                continue
            open_notes[event.value].append((now, current_bin, position))
        elif kind == EventKind.NOTE_OFF:
            queue = open_notes.get(event.value)
            if not queue:
                violations.append(Violation(ViolationKind.NEVER_STARTED, position,
                                            f"音高 {event.value} 的 NOTE_OFF 没有对应的 NOTE_ON"))
                continue
            start, vel_bin, _ = queue.popleft()
            end = min(now, steps)
            if end <= start:
                violations.append(Violation(ViolationKind.ZERO_LENGTH, position, f"音高 {event.value} 时值为 0"))
                continue
            notes.append(Note(onset=start * quantum, pitch=event.value, duration=(end - start) * quantum,
                              velocity=bin_to_velocity(vel_bin, seq.velocity_bins)))

    if pending_velocity is not None:
        violations.append(Violation(ViolationKind.STRAY_VELOCITY, pending_velocity, "SET_VELOCITY 之后没有 NOTE_ON"))
    for pitch, queue in sorted(open_notes.items()):
        for start, _, position in queue:
            violations.append(Violation(ViolationKind.NEVER_ENDED, position,
                                        f"音高 {pitch} 在第 {start} 格开始后没有结束"))
    if now < steps:
        violations.append(Violation(ViolationKind.SHORT_BAR, len(seq.events), f"累计时间 {now} < {steps}"))
    if violations:
        logger.debug(f"事件序列解码发现 {len(violations)} 处违规")
    return Bar(index=index, quantum=quantum, steps=steps, notes=tuple(notes)), violations


# 单声部逐格编码: 0 = REST, 1 = HOLD, 2 + pitch = NOTE(pitch)
MONO_REST = 0
MONO_HOLD = 1
MONO_NOTE_OFFSET = 2
MONO_VOCAB_SIZE = MONO_NOTE_OFFSET + PITCH_COUNT


def melody_line(bar):
    """取每个起音格的最高音作为旋律，前一个音在下一个起音处截断"""
    columns = bar.note_columns()
    top = {}
    for pitch, start, end, velocity, _voice in columns:
        if start not in top or pitch > top[start][0]:
            top[start] = (pitch, end, velocity)
    starts = sorted(top)
    notes = []
    for i, start in enumerate(starts):
        pitch, end, velocity = top[start]
        if i + 1 < len(starts):
            end = min(end, starts[i + 1])
        notes.append(Note(onset=start * bar.quantum, pitch=pitch, duration=(end - start) * bar.quantum,
                          velocity=velocity))
    return Bar(index=bar.index, quantum=bar.quantum, steps=bar.steps, notes=tuple(notes))


def encode_mono(bar):
    """逐格编码单声部小节，长度恰为 steps"""
    tokens = [MONO_REST] * bar.steps
    owner = [None] * bar.steps
    for pitch, start, end, _velocity, _voice in bar.note_columns():
        for column in range(start, end):
            if owner[column] is not None:
                raise NotMonophonic(column, {owner[column], pitch})
            owner[column] = pitch
            tokens[column] = MONO_NOTE_OFFSET + pitch if column == start else MONO_HOLD
    return np.array(tokens, dtype=np.int32)


def decode_mono(tokens, quantum=DEFAULT_QUANTUM, index=0):
    tokens = np.asarray(tokens).ravel()
    violations = []
    notes = []
    current = None  # (pitch, start)
    for column, token in enumerate(tokens):
        token = int(token)
        if token == MONO_HOLD:
            if current is None:
                violations.append(Violation(ViolationKind.DANGLING_HOLD, column, "HOLD 前没有音符"))
            continue
        if current is not None:
            notes.append(Note(onset=current[1] * quantum, pitch=current[0],
                              duration=(column - current[1]) * quantum))
            current = None
        if token >= MONO_NOTE_OFFSET:
            if token >= MONO_VOCAB_SIZE:
                raise ValueError(f"单声部词表外的 token: {token}")
            current = (token - MONO_NOTE_OFFSET, column)
    if current is not None:
        notes.append(Note(onset=current[1] * quantum, pitch=current[0],
                          duration=(len(tokens) - current[1]) * quantum))
    return Bar(index=index, quantum=quantum, steps=len(tokens), notes=tuple(notes)), violations
