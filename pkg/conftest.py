import os
import sys

import numpy as np
import pytest

# 添加项目根目录到系统路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.chorale_gen import generate_corpus
from app.core_model import Bar, Note, bars_to_score
from app.midi_io import write_midi_file

CHORALE_COUNT = 3
BARS_PER_CHORALE = 4


def random_bar(rng, max_notes=16, steps=16, quantum=120, max_polyphony=None, index=0):
    """量化到格上的随机小节，同一音高的音符互不重叠"""
    notes = []
    busy = {}
    column_load = np.zeros(steps, dtype=int)
    for _ in range(int(rng.integers(0, max_notes + 1))):
        pitch = int(rng.integers(0, 128))
        start = int(rng.integers(0, steps))
        end = int(rng.integers(start + 1, steps + 1))
        occupied = busy.setdefault(pitch, np.zeros(steps, dtype=bool))
        if occupied[start:end].any():
            continue
        if max_polyphony is not None and (column_load[start:end] >= max_polyphony).any():
            continue
        occupied[start:end] = True
        column_load[start:end] += 1
        notes.append(Note(onset=start * quantum, pitch=pitch, duration=(end - start) * quantum,
                          velocity=int(rng.integers(1, 128)), voice=int(rng.integers(0, 4))))
    return Bar(index=index, quantum=quantum, steps=steps, notes=tuple(notes))


def write_chorale_corpus(directory, seed=7):
    """每首合成众赞歌由若干个骨架的实现首尾相接，非和弦音数量轮流取 0..3"""
    items = generate_corpus(CHORALE_COUNT * BARS_PER_CHORALE, BARS_PER_CHORALE, nht_range=(0, 3), seed=seed)
    os.makedirs(directory, exist_ok=True)
    paths = []
    for c in range(CHORALE_COUNT):
        bars = []
        for b in range(BARS_PER_CHORALE):
            item = items[c * BARS_PER_CHORALE + b]
            bars.append(item.realisations[b % len(item.realisations)].bar)
        path = os.path.join(directory, f"chorale_{c:02d}.mid")
        write_midi_file(path, bars_to_score(bars))
        paths.append(path)
    return paths


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture(scope="session")
def chorale_corpus(tmp_path_factory):
    directory = str(tmp_path_factory.mktemp("corpus"))
    write_chorale_corpus(directory)
    return directory
