from app.core_model import Bar, DEFAULT_QUANTUM
from app.event_codec import decode_mono, encode_mono, melody_line
from app.representation_manager import BaseRepresentation


class MonoMidiLikeRepresentation(BaseRepresentation):
    """单声部逐格编码：NOTE(pitch) / HOLD / REST，每格一个 token"""

    dtype = "i32"

    @property
    def name(self):
        return "单声部 MIDI 式"

    @property
    def description(self):
        return "先把小节归约为旋律线，再逐格编码"

    @property
    def parameters(self):
        return {
            "reduction": {
                "type": "select",
                "label": "旋律提取方式",
                "description": "skyline 取每个起音处的最高音，voice 取指定声部",
                "value": "skyline",
                "options": [
                    ("skyline", "最高音"),
                    ("voice", "指定声部"),
                ]
            },
            "voice": {
                "type": "integer",
                "label": "声部",
                "description": "reduction 为 voice 时使用的声部编号",
                "value": 0,
                "min": 0,
                "max": 15
            }
        }

    def prepare(self, bar):
        if self.parameters_values.get("reduction") == "voice":
            voice = self.parameters_values.get("voice", 0)
            bar = Bar(index=bar.index, quantum=bar.quantum, steps=bar.steps,
                      notes=tuple(n for n in bar.notes if n.voice == voice))
        return melody_line(bar)

    def encode(self, bar):
        return encode_mono(bar)

    def decode(self, array, quantum=DEFAULT_QUANTUM, index=0):
        return decode_mono(array, quantum=quantum, index=index)[0]

    def decode_with_report(self, array, quantum=DEFAULT_QUANTUM, index=0):
        return decode_mono(array, quantum=quantum, index=index)
