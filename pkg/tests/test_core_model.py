import numpy as np
import pytest

from app.core_model import (Bar, Note, PianoRoll, Score, ScoreError, TimeSignature, TimeSignatureError,
                            TranspositionRangeError, bar_to_pianoroll, bars_to_score, pianoroll_to_bar,
                            quantize_bar, score_pitch_range, slice_into_bars, transpose_bar,
                            transposition_range)


def test_note_validation():
    with pytest.raises(ScoreError):
        Note(onset=0, pitch=128, duration=10)
    with pytest.raises(ScoreError):
        Note(onset=0, pitch=60, duration=0)
    with pytest.raises(ScoreError):
        Note(onset=0, pitch=60, duration=10, velocity=128)


def test_silent_note_is_valid():
    assert Note(onset=0, pitch=60, duration=10, velocity=0).velocity == 0


def test_slice_splits_note_across_barline():
    """跨小节线的音符被拆成两段"""
    score = Score(ppq=480, notes=(Note(onset=1440, pitch=60, duration=960),))
    bars = slice_into_bars(score)
    assert len(bars) == 2
    assert bars[0].notes == (Note(onset=1440, pitch=60, duration=480),)
    assert bars[1].notes == (Note(onset=0, pitch=60, duration=480),)
    assert all(bar.quantum == 120 for bar in bars)


def test_slice_three_four():
    score = Score(ppq=480, notes=(Note(onset=0, pitch=60, duration=2880),),
                  time_signatures=(TimeSignature(0, 3, 4),))
    bars = slice_into_bars(score, steps_per_bar=12)
    assert len(bars) == 2
    assert bars[0].length == 1440


def test_time_signature_change_mid_bar():
    score = Score(ppq=480, notes=(Note(onset=0, pitch=60, duration=4000),),
                  time_signatures=(TimeSignature(0, 4, 4), TimeSignature(960, 3, 4)))
    with pytest.raises(TimeSignatureError):
        slice_into_bars(score)


def test_bar_not_divisible():
    score = Score(ppq=100, notes=(Note(onset=0, pitch=60, duration=100),),
                  time_signatures=(TimeSignature(0, 3, 8),))
    with pytest.raises(TimeSignatureError):
        slice_into_bars(score)


def test_empty_score_has_no_bars():
    assert slice_into_bars(Score()) == []


def test_quantize_rounds_half_up():
    bar = Bar(index=0, quantum=120, notes=(Note(onset=60, pitch=60, duration=50),))
    quantized = quantize_bar(bar)
    # 60 -> 第 1 格，110 -> 第 1 格，时值至少保留一格
    assert quantized.notes == (Note(onset=120, pitch=60, duration=120),)
    assert quantized.is_on_grid()


def test_pianoroll_round_trip_without_repeats():
    bar = Bar(index=0, quantum=120, notes=(
        Note(onset=0, pitch=60, duration=480),
        Note(onset=480, pitch=62, duration=240),
        Note(onset=0, pitch=48, duration=1920),
    ))
    roll = bar_to_pianoroll(bar)
    assert roll.active_cells() == 4 + 2 + 16
    assert roll.max_polyphony() == 2
    assert pianoroll_to_bar(roll).notes == bar.notes


def test_pianoroll_merges_repeated_notes():
    """同音高紧接的两个音在卷帘中无法区分"""
    bar = Bar(index=0, quantum=120, notes=(
        Note(onset=0, pitch=60, duration=480),
        Note(onset=480, pitch=60, duration=480),
    ))
    decoded = pianoroll_to_bar(bar_to_pianoroll(bar))
    assert decoded.notes == (Note(onset=0, pitch=60, duration=960),)


def test_pianoroll_carries_quantum():
    bar = Bar(index=3, quantum=60, notes=(Note(onset=120, pitch=60, duration=240),))
    roll = bar_to_pianoroll(bar)
    assert roll.quantum == 60
    decoded = pianoroll_to_bar(roll, index=3)
    assert decoded.quantum == 60
    assert decoded.notes == bar.notes
    # 相等只看激活矩阵
    assert roll == PianoRoll(roll.activation, quantum=120)


def test_pianoroll_rejects_bad_values():
    with pytest.raises(ScoreError):
        PianoRoll(np.full((128, 16), 2))
    with pytest.raises(ScoreError):
        PianoRoll(np.zeros((127, 16)))


def test_pianoroll_is_read_only():
    roll = PianoRoll(np.zeros((128, 16), dtype=np.uint8))
    with pytest.raises(ValueError):
        roll.activation[0, 0] = 1


def test_transpose():
    bar = Bar(index=0, quantum=120, notes=(Note(onset=0, pitch=60, duration=120),))
    assert transpose_bar(bar, 5).notes[0].pitch == 65
    with pytest.raises(TranspositionRangeError) as info:
        transpose_bar(bar, 70)
    assert info.value.semitones == 70


def test_transposition_range():
    assert transposition_range((50, 70), (45, 72)) == [-5, -4, -3, -2, -1, 0, 1, 2]
    assert transposition_range(None, (45, 72)) == [0]
    assert 0 in transposition_range((40, 80), (40, 80))


def test_bars_to_score_round_trip():
    score = Score(ppq=480, notes=(
        Note(onset=0, pitch=60, duration=480, voice=0),
        Note(onset=1920, pitch=64, duration=1920, voice=1),
    ))
    rebuilt = bars_to_score(slice_into_bars(score))
    assert rebuilt.notes == score.notes
    assert score_pitch_range(rebuilt) == (60, 64)
