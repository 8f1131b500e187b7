"""乐谱数据模型：音符、乐谱、小节与钢琴卷帘，以及它们之间的转换"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

PITCH_COUNT = 128
DEFAULT_VELOCITY = 64
DEFAULT_PPQ = 480
DEFAULT_QUANTUM = 120
VALID_DENOMINATORS = (1, 2, 4, 8, 16, 32, 64)


class ScoreError(ValueError):
    """乐谱数据不合法"""


class TimeSignatureError(ScoreError):
    """拍号变化不在小节线上，或小节无法整除为量化格"""


class TranspositionRangeError(ScoreError):
    """移调后音高超出 0..127"""

    def __init__(self, semitones, pitch):
        super().__init__(f"移调 {semitones:+d} 后音高 {pitch} 超出 0..127")
        self.semitones = semitones
        self.pitch = pitch


@dataclass(frozen=True, order=True)
class Note:
    """单个音符，onset/duration 以 tick 为单位"""
    onset: int
    pitch: int
    duration: int
    velocity: int = DEFAULT_VELOCITY
    voice: int = 0

    def __post_init__(self):
        if not 0 <= self.pitch < PITCH_COUNT:
            raise ScoreError(f"音高超出范围: {self.pitch}")
        if self.onset < 0:
            raise ScoreError(f"起始时间为负: {self.onset}")
        if self.duration < 1:
            raise ScoreError(f"时值必须 >= 1: {self.duration}")
        if not 0 <= self.velocity < 128:
            raise ScoreError(f"力度超出范围: {self.velocity}")
        if self.voice < 0:
            raise ScoreError(f"声部编号为负: {self.voice}")

    @property
    def end(self):
        return self.onset + self.duration


@dataclass(frozen=True)
class TimeSignature:
    tick: int
    numerator: int
    denominator: int

    def __post_init__(self):
        if self.numerator < 1 or self.denominator not in VALID_DENOMINATORS:
            raise ScoreError(f"拍号无效: {self.numerator}/{self.denominator}")

    def bar_ticks(self, ppq):
        return ppq * 4 * self.numerator // self.denominator


@dataclass(frozen=True)
class TempoEvent:
    tick: int
    microseconds_per_beat: int


@dataclass(frozen=True)
class Score:
    """整首作品，音符按 (onset, pitch, duration, velocity, voice) 排序保存"""
    ppq: int = DEFAULT_PPQ
    notes: Tuple[Note, ...] = ()
    time_signatures: Tuple[TimeSignature, ...] = (TimeSignature(0, 4, 4),)
    tempo_events: Tuple[TempoEvent, ...] = ()

    def __post_init__(self):
        if self.ppq < 1:
            raise ScoreError(f"ppq 必须 >= 1: {self.ppq}")
        if not self.time_signatures:
            raise ScoreError("乐谱至少需要一个拍号")
        object.__setattr__(self, "notes", tuple(sorted(self.notes)))
        object.__setattr__(self, "time_signatures", tuple(sorted(self.time_signatures, key=lambda ts: ts.tick)))
        object.__setattr__(self, "tempo_events", tuple(sorted(self.tempo_events, key=lambda te: te.tick)))

    @property
    def end_tick(self):
        return max((n.end for n in self.notes), default=0)


@dataclass(frozen=True)
class Bar:
    """一个小节，音符时间相对小节起点，且被截断在小节内"""
    index: int
    quantum: int
    steps: int = 16
    notes: Tuple[Note, ...] = ()

    def __post_init__(self):
        if self.quantum < 1 or self.steps < 1:
            raise ScoreError(f"量化参数无效: quantum={self.quantum}, steps={self.steps}")
        length = self.length
        for note in self.notes:
            if note.onset >= length or note.end > length:
                raise ScoreError(f"音符 {note} 超出小节长度 {length}")
        object.__setattr__(self, "notes", tuple(sorted(self.notes)))

    @property
    def length(self):
        return self.quantum * self.steps

    def note_columns(self):
        """返回每个音符吸附到量化格后的 (pitch, start, end, velocity, voice)，按起点排序

        起止时间四舍五入（.5 进位）到最近的格，时值至少保留一格。
        """
        result = []
        for note in self.notes:
            start = min(_round_half_up(note.onset, self.quantum), self.steps - 1)
            end = min(_round_half_up(note.end, self.quantum), self.steps)
            if end <= start:
                end = start + 1
            result.append((note.pitch, start, end, note.velocity, note.voice))
        result.sort(key=lambda c: (c[1], c[0], c[2], c[3], c[4]))
        return result

    def pitch_range(self):
        if not self.notes:
            return None
        pitches = [n.pitch for n in self.notes]
        return min(pitches), max(pitches)

    def is_on_grid(self):
        return all(n.onset % self.quantum == 0 and n.duration % self.quantum == 0 for n in self.notes)


@dataclass(frozen=True, eq=False)
class PianoRoll:
    """128 x T 的二值激活矩阵（只读），quantum 为每格的 tick 数，不参与相等比较"""
    activation: np.ndarray = field(repr=False)
    quantum: int = DEFAULT_QUANTUM

    def __post_init__(self):
        arr = np.asarray(self.activation)
        if arr.ndim != 2 or arr.shape[0] != PITCH_COUNT:
            raise ScoreError(f"钢琴卷帘形状必须为 (128, T): {arr.shape}")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ScoreError("钢琴卷帘只能包含 0/1")
        if self.quantum < 1:
            raise ScoreError(f"量化参数无效: quantum={self.quantum}")
        arr = arr.astype(np.uint8, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "activation", arr)

    @property
    def steps(self):
        return self.activation.shape[1]

    def __eq__(self, other):
        if not isinstance(other, PianoRoll):
            return NotImplemented
        return np.array_equal(self.activation, other.activation)

    def __hash__(self):
        return hash((self.activation.shape, self.activation.tobytes()))

    def active_cells(self):
        return int(self.activation.sum())

    def max_polyphony(self):
        return int(self.activation.sum(axis=0).max()) if self.steps else 0


def _round_half_up(ticks, quantum):
    return (2 * ticks + quantum) // (2 * quantum)


def quantize_bar(bar):
    """把小节内的音符吸附到量化格上"""
    notes = [
        Note(onset=start * bar.quantum, pitch=pitch, duration=(end - start) * bar.quantum,
             velocity=velocity, voice=voice)
        for pitch, start, end, velocity, voice in bar.note_columns()
    ]
    return Bar(index=bar.index, quantum=bar.quantum, steps=bar.steps, notes=tuple(notes))


def _bar_boundaries(score, steps_per_bar):
    """按拍号生成 (起点, 长度, 量化) 的小节边界，直到覆盖乐谱末尾"""
    signatures = list(score.time_signatures)
    if signatures[0].tick != 0:
        raise TimeSignatureError(f"第一个拍号必须位于 tick 0，实际为 {signatures[0].tick}")

    end = score.end_tick
    boundaries = []
    for i, ts in enumerate(signatures):
        bar_len = ts.bar_ticks(score.ppq)
        if bar_len <= 0 or bar_len % steps_per_bar:
            raise TimeSignatureError(
                f"拍号 {ts.numerator}/{ts.denominator} 的小节长度 {bar_len} 无法均分为 {steps_per_bar} 格")
        seg_end = signatures[i + 1].tick if i + 1 < len(signatures) else None
        if seg_end is not None and (seg_end - ts.tick) % bar_len:
            raise TimeSignatureError(f"拍号变化位于小节中间: tick {seg_end}")
        tick = ts.tick
        while (seg_end is None and tick < end) or (seg_end is not None and tick < seg_end):
            boundaries.append((tick, bar_len, bar_len // steps_per_bar))
            tick += bar_len
    return [b for b in boundaries if b[0] < end]


def slice_into_bars(score, steps_per_bar=16):
    """把乐谱切成小节，跨小节线的音符拆分为两段"""
    bars = []
    notes = list(score.notes)
    for index, (start, length, quantum) in enumerate(_bar_boundaries(score, steps_per_bar)):
        stop = start + length
        segment = []
        for note in notes:
            if note.onset >= stop:
                break
            if note.end <= start:
                continue
            on = max(note.onset, start)
            off = min(note.end, stop)
            segment.append(Note(onset=on - start, pitch=note.pitch, duration=off - on,
                                velocity=note.velocity, voice=note.voice))
        bars.append(Bar(index=index, quantum=quantum, steps=steps_per_bar, notes=tuple(segment)))
    logger.debug(f"切分得到 {len(bars)} 个小节")
    return bars


def bars_to_score(bars, ppq=DEFAULT_PPQ, numerator=4, denominator=4):
    """把连续小节重新拼成乐谱"""
    notes = []
    offset = 0
    for bar in bars:
        notes.extend(Note(onset=n.onset + offset, pitch=n.pitch, duration=n.duration,
                          velocity=n.velocity, voice=n.voice) for n in bar.notes)
        offset += bar.length
    return Score(ppq=ppq, notes=tuple(notes), time_signatures=(TimeSignature(0, numerator, denominator),))


def bar_to_pianoroll(bar):
    roll = np.zeros((PITCH_COUNT, bar.steps), dtype=np.uint8)
    for pitch, start, end, _velocity, _voice in bar.note_columns():
        roll[pitch, start:end] = 1
    return PianoRoll(roll, quantum=bar.quantum)


def pianoroll_to_bar(roll, index=0, quantum=None, velocity=DEFAULT_VELOCITY):
    """每一段连续激活还原为一个音符（同音高的连续重复音会被合并），quantum 缺省取卷帘自带的值"""
    quantum = quantum or roll.quantum
    act = roll.activation.astype(np.int8)
    padded = np.pad(act, ((0, 0), (1, 1)))
    edges = np.diff(padded, axis=1)
    notes = []
    for pitch in np.flatnonzero(act.any(axis=1)):
        starts = np.flatnonzero(edges[pitch] == 1)
        ends = np.flatnonzero(edges[pitch] == -1)
        for start, end in zip(starts, ends):
            notes.append(Note(onset=int(start) * quantum, pitch=int(pitch),
                              duration=int(end - start) * quantum, velocity=velocity))
    return Bar(index=index, quantum=quantum, steps=roll.steps, notes=tuple(notes))


def transpose_bar(bar, semitones):
    notes = []
    for note in bar.notes:
        pitch = note.pitch + semitones
        if not 0 <= pitch < PITCH_COUNT:
            raise TranspositionRangeError(semitones, pitch)
        notes.append(Note(onset=note.onset, pitch=pitch, duration=note.duration,
                          velocity=note.velocity, voice=note.voice))
    return Bar(index=bar.index, quantum=bar.quantum, steps=bar.steps, notes=tuple(notes))


def score_pitch_range(score) -> Optional[Tuple[int, int]]:
    if not score.notes:
        return None
    pitches = [n.pitch for n in score.notes]
    return min(pitches), max(pitches)


def transposition_range(piece_range, corpus_range) -> List[int]:
    """移调增强允许的半音数：作品移调后仍落在语料实际出现过的音域内（含 0）"""
    if piece_range is None or corpus_range is None:
        return [0]
    low = corpus_range[0] - piece_range[0]
    high = corpus_range[1] - piece_range[1]
    if high < low:
        return [0]
    return list(range(low, high + 1))
