import io
import struct

import numpy as np
import pytest
import soundfile as sf

from app.config_manager import SPECTRAL_PRESETS, SpectralConfig
from app.core_model import PianoRoll
from app.signal_codec import (ComplexMatrix, FrameCountError, SignalLengthError, SignalRep, SpectralShapeError,
                              build_prime_map, decode_signal, encode_signal, export_wav, forward_stft,
                              inverse_stft, read_wav, roll_to_complex)

CFG = SpectralConfig()


def isprime(n):
    return n > 1 and all(n % d for d in range(2, int(n ** 0.5) + 1))


def empty_roll(steps=16):
    return np.zeros((128, steps), dtype=np.uint8)


def random_roll(rng, max_pitches=12, steps=16):
    roll = empty_roll(steps)
    for t in range(steps):
        count = int(rng.integers(0, max_pitches + 1))
        roll[rng.choice(128, size=count, replace=False), t] = 1
    return PianoRoll(roll)


def test_prime_map_invariants():
    table = build_prime_map(CFG).table
    assert len(table) == 128
    assert table[0] == 43
    assert table[127] == 2063
    assert all(isprime(p) for p in table)
    gaps = np.diff(table)
    assert (gaps >= 3).all()
    assert len(set(table)) == 128


def test_prime_map_is_deterministic():
    assert build_prime_map(CFG) == build_prime_map(SpectralConfig())


def test_roll_to_complex():
    roll = empty_roll()
    roll[0, 0] = 1
    m = roll_to_complex(PianoRoll(roll), cfg=CFG).entries
    assert m.shape == (CFG.n_bins, 16)
    assert (m.imag == 1).all()
    assert np.flatnonzero(m.real).tolist() == [43 * 16]
    assert m[43, 0].real == 1


def test_inverse_stft_single_frame_cosine():
    """单帧、bin k 实部为 1、虚部为 0 时，输出为一个余弦"""
    k = 5
    entries = np.zeros((CFG.n_bins, 1), dtype=np.complex128)
    entries[k, 0] = 1
    sig = inverse_stft(ComplexMatrix(entries), CFG)
    n = np.arange(CFG.n_fft)
    expected = 2.0 / CFG.n_fft * np.cos(2 * np.pi * k * n / CFG.n_fft)
    np.testing.assert_allclose(sig.samples, expected, atol=1e-12)


def test_inverse_stft_zero_matrix_is_silence():
    sig = inverse_stft(ComplexMatrix(np.zeros((CFG.n_bins, 3))), CFG)
    assert not sig.samples.any()


def test_inverse_stft_rejects_wrong_shape():
    with pytest.raises(SpectralShapeError):
        inverse_stft(ComplexMatrix(np.zeros((100, 16))), CFG)


def test_forward_stft_peak_at_bin():
    k = 300
    n = np.arange(CFG.n_fft)
    spectrum = forward_stft(SignalRep(np.cos(2 * np.pi * k * n / CFG.n_fft), CFG), CFG).entries
    assert int(np.argmax(np.abs(spectrum[:, 0]))) == k


def test_forward_stft_of_silence():
    spectrum = forward_stft(SignalRep(np.zeros(CFG.signal_length(4)), CFG), CFG).entries
    assert spectrum.shape == (CFG.n_bins, 4)
    assert not np.abs(spectrum).any()


def test_forward_stft_short_signal():
    with pytest.raises(SignalLengthError):
        forward_stft(SignalRep(np.zeros(CFG.win_length - 1), CFG), CFG)


def test_stft_consistency(rng):
    for _ in range(100):
        frames = int(rng.integers(1, 20))
        x = rng.standard_normal(CFG.signal_length(frames))
        y = inverse_stft(forward_stft(SignalRep(x, CFG), CFG), CFG).samples
        assert np.linalg.norm(y - x) <= 1e-6 * np.linalg.norm(x)


def test_stft_consistency_with_overlapping_hann():
    cfg = SpectralConfig(n_fft=512, win_length=512, hop=128, window="hann", prime_start=2, prime_end=250)
    x = np.random.default_rng(5).standard_normal(cfg.signal_length(12))
    y = inverse_stft(forward_stft(SignalRep(x, cfg), cfg), cfg).samples
    # 周期 Hann 窗首样本为 0，包络为 0 的位置不参与比较
    covered = slice(1, len(x))
    np.testing.assert_allclose(y[covered], x[covered], rtol=1e-9, atol=1e-9)


def test_stft_consistency_with_short_window(rng):
    """窗长 2048、逐样本跳步时，合成仍是分析的逆运算；由信号得到的复数谱经合成再分析保持不变"""
    cfg = SPECTRAL_PRESETS["short_window"]
    x = rng.standard_normal(cfg.signal_length(48))
    spectrum = forward_stft(SignalRep(x, cfg), cfg)
    assert spectrum.n_frames == 48
    y = inverse_stft(spectrum, cfg).samples
    np.testing.assert_allclose(y, x, rtol=1e-9, atol=1e-9)
    again = forward_stft(inverse_stft(spectrum, cfg), cfg).entries
    np.testing.assert_allclose(again, spectrum.entries, rtol=1e-7, atol=1e-7)


def test_prime_map_rejects_hand_built_tables():
    from app.signal_codec import PrimeMap
    table = build_prime_map(CFG).table
    with pytest.raises(ValueError):
        PrimeMap(table=table[:-1] + (2067,), end=2100)
    with pytest.raises(ValueError):
        PrimeMap(table=(41,) + table[1:])
    with pytest.raises(ValueError):
        PrimeMap(table=table[:-1] + (2069,))
    assert PrimeMap(table=table) == build_prime_map(CFG)


def test_random_rolls_round_trip(rng):
    pmap = build_prime_map(CFG)
    for _ in range(1000):
        roll = random_roll(rng)
        assert decode_signal(encode_signal(roll, pmap, CFG), pmap, CFG) == roll


def test_all_on_roll_round_trip():
    roll = PianoRoll(np.ones((128, 16), dtype=np.uint8))
    assert decode_signal(encode_signal(roll, cfg=CFG), cfg=CFG) == roll


def test_single_pitch_has_no_false_activations():
    pmap = build_prime_map(CFG)
    false_activations = 0
    for pitch in range(128):
        roll = empty_roll()
        roll[pitch, :] = 1
        decoded = decode_signal(encode_signal(PianoRoll(roll), pmap, CFG), pmap, CFG).activation
        false_activations += int(decoded.sum()) - int(decoded[pitch].sum())
        assert decoded[pitch].all()
    assert false_activations == 0


def test_silence_decodes_to_empty_roll():
    sig = SignalRep(np.zeros(CFG.signal_length(16)), CFG, n_frames=16)
    assert decode_signal(sig, cfg=CFG).active_cells() == 0


def test_empty_roll_round_trip():
    assert decode_signal(encode_signal(PianoRoll(empty_roll()), cfg=CFG), cfg=CFG).active_cells() == 0


def test_c_major_triad():
    roll = empty_roll()
    roll[[60, 64, 67], :] = 1
    assert decode_signal(encode_signal(PianoRoll(roll), cfg=CFG), cfg=CFG) == PianoRoll(roll)


def test_superposition_of_disjoint_rolls(rng):
    for _ in range(20):
        pitches = rng.permutation(128)
        a, b = empty_roll(), empty_roll()
        a[pitches[:10]] = rng.integers(0, 2, size=(10, 16))
        b[pitches[10:20]] = rng.integers(0, 2, size=(10, 16))
        total = encode_signal(PianoRoll(a), cfg=CFG).samples + encode_signal(PianoRoll(b), cfg=CFG).samples
        decoded = decode_signal(SignalRep(total, CFG, n_frames=16), cfg=CFG)
        assert decoded == PianoRoll(a | b)


def test_frame_count_mismatch():
    sig = encode_signal(PianoRoll(empty_roll(16)), cfg=CFG)
    with pytest.raises(FrameCountError) as info:
        decode_signal(sig, cfg=CFG, steps=8)
    assert (info.value.expected, info.value.actual) == (8, 16)


def test_short_window_preset_encodes():
    cfg = SPECTRAL_PRESETS["short_window"]
    sig = encode_signal(PianoRoll(empty_roll()), cfg=cfg)
    assert len(sig) == 2048 + 15
    assert np.isfinite(sig.samples).all()


def test_wav_export_round_trip(rng):
    sig = encode_signal(random_roll(rng), cfg=CFG)
    data = export_wav(sig, 8192)
    assert data[:4] == b"RIFF" and data[8:12] == b"WAVE"
    info = sf.info(io.BytesIO(data))
    assert (info.channels, info.samplerate, info.subtype) == (1, 8192, "PCM_16")
    pcm, rate = read_wav(data)
    peak = np.max(np.abs(sig.samples))
    assert rate == 8192
    assert np.array_equal(pcm, np.round(sig.samples / peak * 32767).astype(np.int16))


def test_wav_of_silence():
    pcm, _rate = read_wav(export_wav(SignalRep(np.zeros(100), CFG)))
    assert pcm.shape == (100,)
    assert not pcm.any()
    assert struct.unpack_from("<H", export_wav(SignalRep(np.zeros(4), CFG)), 22)[0] == 1
