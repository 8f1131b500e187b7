import numpy as np

from app.core_model import DEFAULT_QUANTUM, bar_to_pianoroll, pianoroll_to_bar
from app.representation_manager import BaseRepresentation
from app.signal_codec import SignalRep, build_prime_map, decode_signal, encode_signal


class SignalLikeRepresentation(BaseRepresentation):
    """钢琴卷帘经素数频点映射与逆 STFT 得到的一维波形

    可逆性针对钢琴卷帘本身，因此往返校验在卷帘层面比较。
    """

    dtype = "f32"
    fidelity = "roll"

    @property
    def name(self):
        return "信号化表示"

    @property
    def description(self):
        return "素数频点上的复数谱经逆短时傅里叶变换得到的波形"

    def _spectral(self):
        return self.pipeline_config().spectral

    def encode(self, bar):
        cfg = self._spectral()
        return encode_signal(bar_to_pianoroll(bar), build_prime_map(cfg), cfg).samples.astype(np.float32)

    def decode(self, array, quantum=DEFAULT_QUANTUM, index=0):
        cfg = self._spectral()
        steps = self.pipeline_config().steps_per_bar
        sig = SignalRep(samples=np.asarray(array, dtype=np.float64), config=cfg, n_frames=steps)
        roll = decode_signal(sig, build_prime_map(cfg), cfg)
        return pianoroll_to_bar(roll, index=index, quantum=quantum)
