import numpy as np
import pytest

from app.codec_errors import OverBudget, OverflowViolation, ViolationKind
from app.core_model import Bar, Note
from app.notetuple_codec import EMPTY_TUPLE, NoteTuple, TupleSequence, decode_notetuple, encode_notetuple
from conftest import random_bar


def note_set(bar, with_velocity=False):
    if with_velocity:
        return sorted((p, s, e, v) for p, s, e, v, _voice in bar.note_columns())
    return sorted((p, s, e) for p, s, e, _v, _voice in bar.note_columns())


def test_encode_layout():
    bar = Bar(index=0, quantum=120, notes=(
        Note(onset=0, pitch=60, duration=480, velocity=80),
        Note(onset=0, pitch=64, duration=480, velocity=80),
        Note(onset=960, pitch=67, duration=960, velocity=90),
    ))
    array = encode_notetuple(bar).to_array()
    assert array.shape == (16, 4)
    assert array.dtype == np.int32
    assert array[:3].tolist() == [[0, 60, 80, 4], [0, 64, 80, 4], [8, 67, 90, 8]]
    assert not array[3:].any()


def test_random_bars_round_trip(rng):
    for _ in range(1000):
        bar = random_bar(rng, max_notes=16)
        seq = TupleSequence.from_array(encode_notetuple(bar).to_array())
        decoded, report = decode_notetuple(seq)
        assert report == []
        assert note_set(decoded, with_velocity=True) == note_set(bar, with_velocity=True)


def test_over_budget():
    bar = Bar(index=0, quantum=120, notes=tuple(Note(onset=0, pitch=p, duration=120) for p in range(17)))
    with pytest.raises(OverBudget) as info:
        encode_notetuple(bar)
    assert info.value.unit == "tuples"


def test_overflow_raises():
    seq = TupleSequence(tuples=(NoteTuple(10, 60, 64, 1), NoteTuple(6, 62, 64, 1)) + (EMPTY_TUPLE,) * 14)
    with pytest.raises(OverflowViolation) as info:
        decode_notetuple(seq)
    assert (info.value.position, info.value.onset) == (1, 16)


def test_duration_is_clipped_and_reported():
    seq = TupleSequence(tuples=(NoteTuple(12, 60, 64, 8),) + (EMPTY_TUPLE,) * 15)
    decoded, report = decode_notetuple(seq)
    assert decoded.notes == (Note(onset=1440, pitch=60, duration=480, velocity=64),)
    assert [v.kind for v in report] == [ViolationKind.DURATION_CLIPPED]


def test_malformed_tuples_are_reported():
    seq = TupleSequence(tuples=(
        NoteTuple(0, 60, 64, 0),
        EMPTY_TUPLE,
        NoteTuple(1, 200, 64, 2),
    ) + (EMPTY_TUPLE,) * 13)
    decoded, report = decode_notetuple(seq)
    assert decoded.notes == ()
    assert [v.kind for v in report] == [ViolationKind.EMPTY_DURATION, ViolationKind.PADDING_INTERLEAVED,
                                        ViolationKind.INVALID_FIELD]


def test_silent_note_round_trip():
    bar = Bar(index=0, quantum=120, notes=(
        Note(onset=0, pitch=60, duration=480, velocity=0),
        Note(onset=480, pitch=62, duration=240, velocity=90),
    ))
    array = encode_notetuple(bar).to_array()
    assert array[0].tolist() == [0, 60, 0, 4]
    decoded, report = decode_notetuple(TupleSequence.from_array(array))
    assert report == []
    assert note_set(decoded, with_velocity=True) == note_set(bar, with_velocity=True)
