"""信号化编码：把钢琴卷帘放到素数频点上，经逆短时傅里叶变换得到一维波形，并可逆地解码回卷帘

编码:
    卷帘第 p 行写入频点 table[p] 的实部，所有频点虚部置 1，
    然后对每一列做共轭镜像的逆 FFT、加窗并重叠相加，再除以窗平方和包络。
解码:
    对波形做同参数的正向 STFT，减去空卷帘编码的分析结果（虚部 1 带来的相位基线），
    取素数频点上与单位激活响应同相的分量，与阈值比较。
"""
import io
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
import scipy.fft
import scipy.signal
import soundfile as sf
from numpy.lib.stride_tricks import sliding_window_view

from app.config_manager import SpectralConfig
from app.core_model import PianoRoll, PITCH_COUNT

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 8192
_EPS = np.finfo(np.float64).eps


class SpectralShapeError(ValueError):
    """复数矩阵的行数与 n_fft 不一致"""


class SignalLengthError(ValueError):
    """信号短于一个分析窗"""


class FrameCountError(ValueError):
    def __init__(self, expected, actual):
        super().__init__(f"分帧数不一致: 期望 {expected}，实际 {actual}")
        self.expected = expected
        self.actual = actual


@dataclass(frozen=True)
class PrimeMap:
    """音高到素数频点的严格递增映射，频点都落在 [start, end] 内"""
    table: Tuple[int, ...]
    min_gap: int = 3
    start: int = 43
    end: int = 2063

    def __post_init__(self):
        if len(self.table) != PITCH_COUNT:
            raise ValueError(f"素数表长度必须为 {PITCH_COUNT}: {len(self.table)}")
        gaps = np.diff(self.table)
        if (gaps < self.min_gap).any():
            raise ValueError(f"相邻频点间隔必须 >= {self.min_gap}")
        if self.table[0] < self.start or self.table[-1] > self.end:
            raise ValueError(f"频点超出区间 [{self.start}, {self.end}]: {self.table[0]}..{self.table[-1]}")
        composite = [p for p in self.table if not _is_prime(p)]
        if composite:
            raise ValueError(f"频点不是素数: {composite[:5]}")

    def bins(self):
        return np.asarray(self.table, dtype=np.intp)

    def __getitem__(self, pitch):
        return self.table[pitch]


def _is_prime(n):
    return n >= 2 and all(n % d for d in range(2, int(n ** 0.5) + 1))


def _primes_between(start, end):
    sieve = np.ones(end + 1, dtype=bool)
    sieve[:2] = False
    for i in range(2, int(end ** 0.5) + 1):
        if sieve[i]:
            sieve[i * i::i] = False
    return [int(p) for p in np.flatnonzero(sieve) if p >= start]


@lru_cache(maxsize=None)
def build_prime_map(cfg=None):
    """筛出 [prime_start, prime_end] 内的素数，去掉与上一个保留值相距过近者，再等距抽取 128 个（含两端）"""
    cfg = cfg or SpectralConfig()
    kept = []
    for p in _primes_between(cfg.prime_start, cfg.prime_end):
        if not kept or p - kept[-1] >= cfg.min_gap:
            kept.append(p)
    if len(kept) < PITCH_COUNT:
        raise ValueError(f"区间 [{cfg.prime_start}, {cfg.prime_end}] 内只有 {len(kept)} 个可用素数，不足 {PITCH_COUNT}")
    last = len(kept) - 1
    # 整数半入取整，步长 >= 1 时下标严格递增
    indices = [(2 * i * last + PITCH_COUNT - 1) // (2 * (PITCH_COUNT - 1)) for i in range(PITCH_COUNT)]
    table = tuple(kept[i] for i in indices)
    logger.debug(f"素数表: {table[0]}..{table[-1]}，候选 {len(kept)} 个")
    return PrimeMap(table=table, min_gap=cfg.min_gap, start=cfg.prime_start, end=cfg.prime_end)


@dataclass(frozen=True, eq=False)
class ComplexMatrix:
    """(n_fft/2+1) x T 的单边复数谱"""
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.entries, dtype=np.complex128)
        if arr.ndim != 2:
            raise SpectralShapeError(f"复数谱必须是二维: {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def n_frames(self):
        return self.entries.shape[1]


@dataclass(frozen=True, eq=False)
class SignalRep:
    samples: np.ndarray = field(repr=False)
    config: SpectralConfig = field(default_factory=SpectralConfig)
    n_frames: Optional[int] = None

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64).ravel()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.shape[0]


@lru_cache(maxsize=None)
def _window(cfg):
    win = scipy.signal.get_window(cfg.window, cfg.win_length, fftbins=True).astype(np.float64)
    win.setflags(write=False)
    return win


@lru_cache(maxsize=None)
def _window_envelope(cfg, n_frames):
    win_sq = _window(cfg) ** 2
    env = np.zeros(cfg.signal_length(n_frames))
    for t in range(n_frames):
        env[t * cfg.hop:t * cfg.hop + cfg.win_length] += win_sq
    env.setflags(write=False)
    return env


def roll_to_complex(roll, pmap=None, cfg=None):
    cfg = cfg or SpectralConfig()
    pmap = pmap or build_prime_map(cfg)
    entries = np.zeros((cfg.n_bins, roll.steps), dtype=np.complex128)
    entries.imag[:] = 1.0
    entries.real[pmap.bins(), :] = roll.activation
    return ComplexMatrix(entries)


def inverse_stft(m, cfg=None):
    """共轭镜像逆 FFT，取前 win_length 个样本加窗后按 hop 重叠相加，再除以窗平方和包络"""
    cfg = cfg or SpectralConfig()
    spec = m.entries
    if spec.shape[0] != cfg.n_bins:
        raise SpectralShapeError(f"复数谱行数 {spec.shape[0]} 与 n_fft={cfg.n_fft} 不符（应为 {cfg.n_bins}）")
    n_frames = spec.shape[1]
    if n_frames < 1:
        raise SpectralShapeError("复数谱至少需要一帧")

    frames = scipy.fft.irfft(spec, n=cfg.n_fft, axis=0)[:cfg.win_length, :] * _window(cfg)[:, None]
    out = np.zeros(cfg.signal_length(n_frames))
    for t in range(n_frames):
        out[t * cfg.hop:t * cfg.hop + cfg.win_length] += frames[:, t]
    env = _window_envelope(cfg, n_frames)
    covered = env > _EPS
    out[covered] /= env[covered]
    return SignalRep(samples=out, config=cfg, n_frames=n_frames)


def forward_stft(sig, cfg=None):
    cfg = cfg or sig.config
    x = sig.samples
    if x.shape[0] < cfg.win_length:
        raise SignalLengthError(f"信号长度 {x.shape[0]} 短于窗长 {cfg.win_length}")
    extra = (x.shape[0] - cfg.win_length) % cfg.hop
    if extra:
        logger.warning(f"信号末尾 {extra} 个样本不足一跳，已忽略")
    frames = sliding_window_view(x, cfg.win_length)[::cfg.hop] * _window(cfg)
    spec = scipy.fft.rfft(frames, n=cfg.n_fft, axis=1)
    return ComplexMatrix(spec.T)


@lru_cache(maxsize=None)
def baseline_response(cfg, n_frames):
    """空卷帘编码的分析结果，即虚部常数 1 经合成与分析后的残留"""
    empty = PianoRoll(np.zeros((PITCH_COUNT, n_frames), dtype=np.uint8))
    entries = forward_stft(inverse_stft(roll_to_complex(empty, cfg=cfg), cfg), cfg).entries
    entries.setflags(write=False)
    return entries


@lru_cache(maxsize=None)
def reference_response(cfg, n_frames):
    """单个频点单位实部激活在同一帧上的分析响应

    第 t 帧的响应为 (G_t[0] + G_t[2k mod N]) / N，其中 G_t 是 w^2 / 包络 在该帧上的 N 点 DFT。
    """
    n = cfg.n_fft
    env = _window_envelope(cfg, n_frames)
    win_sq = _window(cfg) ** 2
    g = np.zeros((n_frames, cfg.win_length))
    for t in range(n_frames):
        segment = env[t * cfg.hop:t * cfg.hop + cfg.win_length]
        covered = segment > _EPS
        g[t, covered] = win_sq[covered] / segment[covered]
    spectrum = scipy.fft.fft(g, n=n, axis=1)
    k = np.arange(cfg.n_bins)
    response = (spectrum[:, [0]] + spectrum[:, (2 * k) % n]) / n
    response = response.T.copy()
    response.setflags(write=False)
    return response


def encode_signal(roll, pmap=None, cfg=None):
    cfg = cfg or SpectralConfig()
    return inverse_stft(roll_to_complex(roll, pmap, cfg), cfg)


def decode_signal(sig, pmap=None, cfg=None, steps=None):
    cfg = cfg or sig.config
    pmap = pmap or build_prime_map(cfg)
    spec = forward_stft(sig, cfg).entries
    actual = spec.shape[1]
    expected = steps if steps is not None else sig.n_frames
    if expected is not None and actual != expected:
        raise FrameCountError(expected, actual)

    rows = pmap.bins()
    residual = spec[rows] - baseline_response(cfg, actual)[rows]
    reference = reference_response(cfg, actual)[rows]
    magnitude = np.abs(reference)
    usable = magnitude > _EPS
    in_phase = np.zeros(residual.shape)
    in_phase[usable] = np.real(residual[usable] * np.conj(reference[usable])) / magnitude[usable]
    activation = (in_phase >= cfg.detection_threshold * magnitude) & usable
    return PianoRoll(activation.astype(np.uint8))


def signal_embedding(roll, pmap=None, cfg=None):
    """未经训练的原始信号向量，用于嵌入距离分析"""
    return encode_signal(roll, pmap, cfg).samples.copy()


def export_wav(sig, sample_rate=DEFAULT_SAMPLE_RATE):
    """峰值归一化后写成 16 位单声道 PCM 的 WAV 字节串"""
    samples = sig.samples
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak > 0:
        pcm = np.round(samples / peak * 32767).astype(np.int16)
    else:
        pcm = np.zeros(samples.shape, dtype=np.int16)
    buffer = io.BytesIO()
    sf.write(buffer, pcm, sample_rate, subtype='PCM_16', format='WAV')
    return buffer.getvalue()


def read_wav(data):
    """读取 WAV 字节串，返回 (int16 样本, 采样率)"""
    pcm, sample_rate = sf.read(io.BytesIO(data), dtype='int16')
    if pcm.ndim != 1:
        raise ValueError(f"只支持单声道 WAV，实际 {pcm.shape[1]} 声道")
    return pcm, sample_rate
