from app.core_model import DEFAULT_QUANTUM
from app.event_codec import EventSequence, decode_midilike, encode_midilike
from app.representation_manager import BaseRepresentation


class MidiLikeRepresentation(BaseRepresentation):
    """NOTE_ON / NOTE_OFF / TIME_SHIFT / SET_VELOCITY 事件序列，定长 64"""

    dtype = "i32"

    @property
    def name(self):
        return "MIDI 式事件"

    @property
    def description(self):
        return "按时间顺序的音符开关与时移事件，末尾以 PAD 补齐"

    def encode(self, bar):
        cfg = self.pipeline_config()
        return encode_midilike(bar, max_events=cfg.max_events, velocity_bins=cfg.velocity_bins).to_tokens()

    def _sequence(self, array, steps):
        cfg = self.pipeline_config()
        return EventSequence.from_tokens(array, steps=steps, velocity_bins=cfg.velocity_bins)

    def decode(self, array, quantum=DEFAULT_QUANTUM, index=0):
        return self.decode_with_report(array, quantum=quantum, index=index)[0]

    def decode_with_report(self, array, quantum=DEFAULT_QUANTUM, index=0):
        seq = self._sequence(array, self.pipeline_config().steps_per_bar)
        return decode_midilike(seq, quantum=quantum, index=index)
