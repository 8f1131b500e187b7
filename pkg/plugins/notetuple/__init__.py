from app.core_model import DEFAULT_QUANTUM
from app.notetuple_codec import TupleSequence, decode_notetuple, encode_notetuple
from app.representation_manager import BaseRepresentation


class NoteTupleRepresentation(BaseRepresentation):
    dtype = "i32"

    @property
    def name(self):
        return "音符元组"

    @property
    def description(self):
        return "每小节 16 个 (起点间隔, 音高, 力度, 时值) 元组"

    def encode(self, bar):
        return encode_notetuple(bar, max_tuples=self.pipeline_config().max_tuples).to_array()

    def decode(self, array, quantum=DEFAULT_QUANTUM, index=0):
        return self.decode_with_report(array, quantum=quantum, index=index)[0]

    def decode_with_report(self, array, quantum=DEFAULT_QUANTUM, index=0):
        seq = TupleSequence.from_array(array, steps=self.pipeline_config().steps_per_bar)
        return decode_notetuple(seq, quantum=quantum, index=index)
