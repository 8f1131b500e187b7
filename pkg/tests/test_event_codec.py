import numpy as np
import pytest

from app.codec_errors import NotMonophonic, OverBudget, ViolationKind
from app.core_model import Bar, Note
from app.event_codec import (EventKind, EventSequence, EventVocabulary, MusicEvent, bin_to_velocity,
                             decode_midilike, decode_mono, encode_midilike, encode_mono, event_count,
                             melody_line, velocity_to_bin)
from conftest import random_bar


def note_set(bar):
    return sorted((p, s, e) for p, s, e, _v, _voice in bar.note_columns())


def test_vocabulary_layout():
    vocab = EventVocabulary()
    assert vocab.to_token(MusicEvent(EventKind.NOTE_ON, 0)) == 1
    assert vocab.to_token(MusicEvent(EventKind.NOTE_OFF, 127)) == 256
    assert vocab.to_token(MusicEvent(EventKind.TIME_SHIFT, 1)) == 257
    assert vocab.to_token(MusicEvent(EventKind.TIME_SHIFT, 16)) == 272
    assert vocab.to_token(MusicEvent(EventKind.SET_VELOCITY, 0)) == 273
    assert vocab.size == 274
    for token in range(vocab.size):
        assert vocab.to_token(vocab.from_token(token)) == token
    with pytest.raises(ValueError):
        vocab.from_token(vocab.size)


def test_velocity_bins():
    assert bin_to_velocity(0, 1) == 64
    assert velocity_to_bin(127, 8) == 7
    assert velocity_to_bin(bin_to_velocity(3, 8), 8) == 3


def test_encode_simple_bar():
    bar = Bar(index=0, quantum=120, notes=(
        Note(onset=0, pitch=60, duration=480),
        Note(onset=480, pitch=64, duration=1440),
    ))
    seq = encode_midilike(bar)
    assert [str(e) for e in seq.events[:seq.true_length]] == [
        "NOTE_ON(60)", "TIME_SHIFT(4)", "NOTE_OFF(60)", "NOTE_ON(64)", "TIME_SHIFT(12)", "NOTE_OFF(64)",
    ]
    assert len(seq.events) == 64
    assert seq.to_tokens().dtype == np.int32


def test_empty_bar_is_one_time_shift():
    seq = encode_midilike(Bar(index=0, quantum=120))
    assert seq.true_length == 1
    assert seq.events[0] == MusicEvent(EventKind.TIME_SHIFT, 16)
    decoded, violations = decode_midilike(seq)
    assert decoded.notes == ()
    assert violations == []


def test_over_budget():
    notes = tuple(Note(onset=0, pitch=p, duration=120) for p in range(40))
    bar = Bar(index=0, quantum=120, notes=notes)
    assert event_count(bar) == 82
    with pytest.raises(OverBudget) as info:
        encode_midilike(bar)
    assert (info.value.count, info.value.budget, info.value.unit) == (82, 64, "events")


def test_repeated_note_is_kept_apart():
    """同一时刻先关后开，重复音不会被合并"""
    bar = Bar(index=0, quantum=120, notes=(
        Note(onset=0, pitch=60, duration=480),
        Note(onset=480, pitch=60, duration=480),
    ))
    decoded, violations = decode_midilike(encode_midilike(bar))
    assert violations == []
    assert note_set(decoded) == note_set(bar)


def test_velocity_events_only_on_change():
    bar = Bar(index=0, quantum=120, notes=(
        Note(onset=0, pitch=60, duration=120, velocity=100),
        Note(onset=0, pitch=64, duration=120, velocity=100),
        Note(onset=120, pitch=67, duration=120, velocity=20),
    ))
    seq = encode_midilike(bar, velocity_bins=8)
    kinds = [e.kind for e in seq.events[:seq.true_length]]
    assert kinds.count(EventKind.SET_VELOCITY) == 2
    decoded, violations = decode_midilike(EventSequence.from_tokens(seq.to_tokens(), velocity_bins=8))
    assert violations == []
    assert [velocity_to_bin(n.velocity, 8) for n in decoded.notes] == [velocity_to_bin(100, 8)] * 2 + [1]


def test_random_bars_round_trip(rng):
    checked = 0
    while checked < 1000:
        bar = random_bar(rng, max_notes=30)
        if event_count(bar) > 64:
            continue
        seq = encode_midilike(bar)
        decoded, violations = decode_midilike(EventSequence.from_tokens(seq.to_tokens()))
        assert violations == []
        assert note_set(decoded) == note_set(bar)
        checked += 1


@pytest.mark.slow
def test_single_token_corruption_is_detected(rng):
    vocab = EventVocabulary()
    for case in range(500):
        bar = random_bar(rng, max_notes=12)
        tokens = encode_midilike(bar).to_tokens()
        position = int(rng.integers(0, len(tokens)))
        replacement = int(rng.integers(0, vocab.size - 1))
        if replacement >= tokens[position]:
            replacement += 1
        corrupted = tokens.copy()
        corrupted[position] = replacement
        _decoded, violations = decode_midilike(EventSequence.from_tokens(corrupted))
        assert violations, f"第 {case} 例在位置 {position} 改为 {replacement} 后没有发现问题"


def test_deleted_note_event_is_detected(rng):
    """删掉一个 NOTE_ON 会留下没有开始的 NOTE_OFF，删掉一个 NOTE_OFF 会留下没有结束的音"""
    expected = {EventKind.NOTE_ON: ViolationKind.NEVER_STARTED, EventKind.NOTE_OFF: ViolationKind.NEVER_ENDED}
    checked = 0
    for _ in range(200):
        bar = random_bar(rng, max_notes=12)
        seq = encode_midilike(bar)
        tokens = seq.to_tokens()
        for position, event in enumerate(seq.events[:seq.true_length]):
            if event.kind not in expected:
                continue
            deleted = np.append(np.delete(tokens, position), 0)
            _decoded, violations = decode_midilike(EventSequence.from_tokens(deleted))
            assert expected[event.kind] in {v.kind for v in violations}, f"删除位置 {position} 的 {event} 后没有发现问题"
            checked += 1
    assert checked > 0


@pytest.mark.parametrize("tokens, kind", [
    ([129 + 60, 257 + 15], ViolationKind.NEVER_STARTED),
    ([1 + 60, 257 + 15], ViolationKind.NEVER_ENDED),
    ([257 + 15, 257], ViolationKind.TIME_OVERFLOW),
    ([257 + 3], ViolationKind.SHORT_BAR),
    ([1 + 60, 129 + 60, 257 + 15], ViolationKind.ZERO_LENGTH),
    ([257 + 15, 0, 257], ViolationKind.PADDING_INTERLEAVED),
    ([273, 257 + 15], ViolationKind.STRAY_VELOCITY),
])
def test_violation_kinds(tokens, kind):
    _decoded, violations = decode_midilike(EventSequence.from_tokens(tokens))
    assert kind in {v.kind for v in violations}


def test_melody_line_takes_highest_onset():
    bar = Bar(index=0, quantum=120, notes=(
        Note(onset=0, pitch=60, duration=960),
        Note(onset=0, pitch=67, duration=480),
        Note(onset=480, pitch=64, duration=960),
    ))
    melody = melody_line(bar)
    assert [(n.pitch, n.onset, n.duration) for n in melody.notes] == [(67, 0, 480), (64, 480, 960)]


def test_mono_round_trip():
    bar = Bar(index=0, quantum=120, notes=(
        Note(onset=0, pitch=60, duration=240),
        Note(onset=240, pitch=60, duration=240),
        Note(onset=960, pitch=72, duration=960),
    ))
    tokens = encode_mono(bar)
    assert tokens.tolist() == [62, 1, 62, 1, 0, 0, 0, 0, 74, 1, 1, 1, 1, 1, 1, 1]
    decoded, violations = decode_mono(tokens)
    assert violations == []
    assert note_set(decoded) == note_set(bar)


def test_mono_rejects_polyphony():
    bar = Bar(index=0, quantum=120, notes=(
        Note(onset=0, pitch=60, duration=480),
        Note(onset=240, pitch=64, duration=480),
    ))
    with pytest.raises(NotMonophonic) as info:
        encode_mono(bar)
    assert info.value.column == 2


def test_mono_dangling_hold():
    _bar, violations = decode_mono([1, 1, 62, 1] + [0] * 12)
    assert [v.kind for v in violations] == [ViolationKind.DANGLING_HOLD] * 2
