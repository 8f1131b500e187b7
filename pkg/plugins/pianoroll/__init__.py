from app.core_model import DEFAULT_QUANTUM, PianoRoll, bar_to_pianoroll, pianoroll_to_bar
from app.representation_manager import BaseRepresentation


class PianoRollRepresentation(BaseRepresentation):
    """128 x T 二值钢琴卷帘，同音高的连续重复音会被合并"""

    dtype = "f32"

    @property
    def name(self):
        return "钢琴卷帘"

    @property
    def description(self):
        return "每小节 128 x 16 的二值激活矩阵"

    def encode(self, bar):
        return bar_to_pianoroll(bar).activation.astype("float32")

    def decode(self, array, quantum=DEFAULT_QUANTUM, index=0):
        return pianoroll_to_bar(PianoRoll((array >= 0.5).astype("uint8"), quantum=quantum), index=index)
