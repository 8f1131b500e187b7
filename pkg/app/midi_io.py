"""标准 MIDI 文件（格式 0/1）的读写"""
import logging
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import List, Tuple

from app.core_model import Note, Score, TempoEvent, TimeSignature, ScoreError

logger = logging.getLogger(__name__)

unpack_chunk_header = struct.Struct('>4sI').unpack_from
unpack_midi_header = struct.Struct('>HHH').unpack_from
pack_chunk_header = struct.Struct('>4sI').pack
pack_midi_header = struct.Struct('>HHH').pack

# 已知但与音符无关的元事件，静默跳过
KNOWN_META = {0x00, 0x20, 0x21, 0x54, 0x59, 0x7F} | set(range(0x01, 0x10))
# 每个状态字节后面的数据字节数
CHANNEL_DATA_LENGTH = {0x8: 2, 0x9: 2, 0xA: 2, 0xB: 2, 0xC: 1, 0xD: 1, 0xE: 2}


class MidiFormatError(ValueError):
    """MIDI 数据结构错误，offset 为出错位置的字节偏移"""

    def __init__(self, message, offset):
        super().__init__(f"{message} (偏移 {offset})")
        self.offset = offset


@dataclass
class MidiDiagnostics:
    """解析过程中的非致命问题"""
    format: int = 0
    track_count: int = 0
    warnings: List[Tuple[int, str]] = field(default_factory=list)

    def warn(self, offset, message):
        self.warnings.append((offset, message))
        logger.warning(f"MIDI 解析警告 @{offset}: {message}")


class _Reader:
    """带越界检查的字节读取器，offset 始终是相对整个文件的位置"""

    def __init__(self, data, start, end):
        self.data = data
        self.pos = start
        self.end = end

    def at_end(self):
        return self.pos >= self.end

    def byte(self):
        if self.pos >= self.end:
            raise MidiFormatError("数据意外结束", self.pos)
        value = self.data[self.pos]
        self.pos += 1
        return value

    def read(self, n):
        if self.pos + n > self.end:
            raise MidiFormatError(f"需要 {n} 字节但数据已结束", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def var_len(self):
        start = self.pos
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiFormatError("变长整数超过 4 字节", start)


class _TrackState:
    def __init__(self):
        self.open_notes = defaultdict(deque)  # (channel, pitch) -> deque[(tick, velocity)]
        self.notes = []  # (onset, pitch, duration, velocity, channel)
        self.tick = 0
        self.has_notes = False


def _close_note(state, diag, offset, channel, pitch, tick):
    queue = state.open_notes.get((channel, pitch))
    if not queue:
        diag.warn(offset, f"通道 {channel} 音高 {pitch} 的 note-off 没有对应的 note-on")
        return
    onset, velocity = queue.popleft()
    if tick <= onset:
        diag.warn(offset, f"音高 {pitch} 在 tick {onset} 的音符时值为 0，已丢弃")
        return
    state.notes.append((onset, pitch, tick - onset, velocity, channel))


def _parse_track(data, start, end, diag, signatures, tempos):
    state = _TrackState()
    reader = _Reader(data, start, end)
    running_status = None
    try:
        while not reader.at_end():
            state.tick += reader.var_len()
            event_offset = reader.pos
            status = reader.byte()
            if status < 0x80:
                if running_status is None:
                    raise MidiFormatError("数据字节前没有状态字节", event_offset)
                reader.pos -= 1
                status = running_status

            if status == 0xFF:
                running_status = None
                meta_type = reader.byte()
                payload = reader.read(reader.var_len())
                if meta_type == 0x2F:
                    break
                if meta_type == 0x51:
                    if len(payload) != 3:
                        diag.warn(event_offset, "速度事件长度不是 3")
                        continue
                    tempos.append(TempoEvent(state.tick, int.from_bytes(payload, 'big')))
                elif meta_type == 0x58:
                    if len(payload) < 2 or payload[1] > 6 or payload[0] < 1:
                        diag.warn(event_offset, "拍号事件无效，已忽略")
                        continue
                    signatures.append(TimeSignature(state.tick, payload[0], 1 << payload[1]))
                elif meta_type not in KNOWN_META:
                    diag.warn(event_offset, f"未知元事件 0x{meta_type:02X}，已跳过")
            elif status in (0xF0, 0xF7):
                running_status = None
                reader.read(reader.var_len())
            elif status >= 0xF0:
                raise MidiFormatError(f"文件中不允许的系统消息 0x{status:02X}", event_offset)
            else:
                running_status = status
                kind, channel = status >> 4, status & 0x0F
                values = reader.read(CHANNEL_DATA_LENGTH[kind])
                if any(v & 0x80 for v in values):
                    raise MidiFormatError("数据字节最高位不为 0", event_offset)
                if kind == 0x9 and values[1] > 0:
                    state.open_notes[(channel, values[0])].append((state.tick, values[1]))
                    state.has_notes = True
                elif kind == 0x8 or kind == 0x9:
                    _close_note(state, diag, event_offset, channel, values[0], state.tick)
    except MidiFormatError as e:
        diag.warn(e.offset, f"轨道解析中断: {e}")

    # 轨道结束时仍未关闭的音符，在轨道末尾处关闭
    for (channel, pitch), queue in sorted(state.open_notes.items()):
        while queue:
            diag.warn(reader.pos, f"通道 {channel} 音高 {pitch} 的音符没有 note-off，在轨道末尾关闭")
            _close_note(state, diag, reader.pos, channel, pitch, state.tick)
    return state


def parse_midi(data):
    """解析 MIDI 字节串，返回 (Score, MidiDiagnostics)

    头部缺失或截断为致命错误；轨道内部的问题记为警告并尽量保留已解析内容。
    """
    data = bytes(data)
    diag = MidiDiagnostics()
    if len(data) < 14 or data[:4] != b'MThd':
        raise MidiFormatError("缺少 MThd 文件头", 0)
    _, header_length = unpack_chunk_header(data, 0)
    if header_length < 6 or 8 + header_length > len(data):
        raise MidiFormatError(f"文件头长度无效: {header_length}", 4)
    fmt, ntracks, division = unpack_midi_header(data, 8)
    if fmt not in (0, 1):
        raise MidiFormatError(f"不支持的 MIDI 格式: {fmt}", 8)
    if division & 0x8000:
        raise MidiFormatError("不支持 SMPTE 时间单位", 12)
    if division == 0:
        raise MidiFormatError("每拍 tick 数为 0", 12)
    diag.format = fmt

    signatures, tempos = [], []
    tracks = []
    pos = 8 + header_length
    while len(tracks) < ntracks and pos + 8 <= len(data):
        chunk_id, size = unpack_chunk_header(data, pos)
        body = pos + 8
        end = body + size
        if end > len(data):
            diag.warn(pos, f"块长度 {size} 超出文件末尾，按实际长度解析")
            end = len(data)
        if chunk_id != b'MTrk':
            diag.warn(pos, f"跳过未知块 {chunk_id!r}")
        else:
            tracks.append(_parse_track(data, body, end, diag, signatures, tempos))
        pos = end
    if len(tracks) < ntracks:
        diag.warn(pos, f"文件头声明 {ntracks} 个轨道，实际只有 {len(tracks)} 个")
    diag.track_count = len(tracks)

    # 格式 1：第 0 轨没有音符时视为指挥轨，声部号为轨道序号减一；格式 0 以通道为声部
    skip_conductor = fmt == 1 and tracks and not tracks[0].has_notes
    notes = []
    for index, track in enumerate(tracks):
        for onset, pitch, duration, velocity, channel in track.notes:
            if fmt == 0:
                voice = channel
            else:
                voice = index - 1 if skip_conductor else index
            notes.append(Note(onset=onset, pitch=pitch, duration=duration, velocity=velocity, voice=voice))

    signatures = _dedupe_by_tick(signatures)
    if not signatures or signatures[0].tick != 0:
        signatures.insert(0, TimeSignature(0, 4, 4))
    try:
        score = Score(ppq=division, notes=tuple(notes), time_signatures=tuple(signatures),
                      tempo_events=tuple(_dedupe_by_tick(tempos)))
    except ScoreError as e:
        raise MidiFormatError(f"乐谱数据无效: {e}", 0) from e
    logger.debug(f"解析完成: 格式 {fmt}, {len(tracks)} 轨, {len(notes)} 个音符, {len(diag.warnings)} 条警告")
    return score, diag


def _dedupe_by_tick(events):
    """同一 tick 上的重复事件只保留最后一个"""
    by_tick = {}
    for event in sorted(events, key=lambda e: e.tick):
        by_tick[event.tick] = event
    return list(by_tick.values())


def read_midi_file(path):
    with open(path, 'rb') as f:
        return parse_midi(f.read())


def _var_len_bytes(value):
    if value < 0:
        raise ValueError(f"变长整数不能为负: {value}")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _track_chunk(events):
    """events 为 (tick, order, payload) 列表，同 tick 按 order 排序"""
    body = bytearray()
    last_tick = 0
    for tick, _order, payload in sorted(events, key=lambda e: (e[0], e[1])):
        body += _var_len_bytes(tick - last_tick)
        body += payload
        last_tick = tick
    body += b'\x00\xff\x2f\x00'
    return pack_chunk_header(b'MTrk', len(body)) + bytes(body)


def write_midi(score):
    """写出格式 1 的 MIDI：第 0 轨为速度与拍号，之后每个声部一轨"""
    conductor = []
    for ts in score.time_signatures:
        exponent = ts.denominator.bit_length() - 1
        conductor.append((ts.tick, 0, bytes([0xFF, 0x58, 0x04, ts.numerator, exponent, 24, 8])))
    for tempo in score.tempo_events:
        conductor.append((tempo.tick, 1, b'\xff\x51\x03' + tempo.microseconds_per_beat.to_bytes(3, 'big')))

    voice_count = max((n.voice for n in score.notes), default=-1) + 1
    tracks = [_track_chunk(conductor)]
    for voice in range(voice_count):
        channel = voice % 16
        events = []
        for note in score.notes:
            if note.voice != voice:
                continue
            # 同一 tick 上先关后开，保证重复音按先进先出配对；力度 0 的 note-on 会被读成关音，写出时记为 1
            events.append((note.onset, 1, bytes([0x90 | channel, note.pitch, max(1, note.velocity)])))
            events.append((note.end, 0, bytes([0x80 | channel, note.pitch, 0])))
        tracks.append(_track_chunk(events))

    header = pack_chunk_header(b'MThd', 6) + pack_midi_header(1, len(tracks), score.ppq)
    return header + b''.join(tracks)


def write_midi_file(path, score):
    with open(path, 'wb') as f:
        f.write(write_midi(score))
