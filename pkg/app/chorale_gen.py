"""合成四部和声评估语料：和声骨架、非和弦音实现与独立校验"""
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from itertools import product
from typing import Dict, List, Tuple

import numpy as np

from app.core_model import Bar, Note, DEFAULT_QUANTUM, DEFAULT_VELOCITY, bars_to_score
from app.midi_io import write_midi_file

logger = logging.getLogger(__name__)

PITCH_NAMES = ("C", "C#", "D", "Eb", "E", "F", "F#", "G", "Ab", "A", "Bb", "B")
SCALES = {
    "major": (0, 2, 4, 5, 7, 9, 11),
    "minor": (0, 2, 3, 5, 7, 8, 11),  # 和声小调，属和弦使用升高的导音
}
# 级数 -> (根音, 和弦音)，均相对主音
CHORDS = {
    "major": {"I": (0, (0, 4, 7)), "ii": (2, (2, 5, 9)), "IV": (5, (5, 9, 0)),
              "V": (7, (7, 11, 2)), "vi": (9, (9, 0, 4))},
    "minor": {"i": (0, (0, 3, 7)), "iv": (5, (5, 8, 0)), "V": (7, (7, 11, 2)), "VI": (8, (8, 0, 3))},
}
# 主 -> 下属 -> 属 -> 主 的功能进行
TRANSITIONS = {
    "major": {"I": ("IV", "ii", "V", "vi"), "vi": ("ii", "IV", "V"), "IV": ("V", "ii", "I"),
              "ii": ("V",), "V": ("I", "vi")},
    "minor": {"i": ("iv", "V", "VI"), "VI": ("iv", "V"), "iv": ("V", "i"), "V": ("i", "VI")},
}
TONIC = {"major": "I", "minor": "i"}

VOICE_NAMES = ("soprano", "alto", "tenor", "bass")
VOICE_RANGES = ((60, 81), (55, 74), (48, 69), (40, 62))
MAX_SPACING = (12, 12, 19)  # S-A, A-T, T-B
MAX_LEAP = (7, 7, 7, 12)
MAX_SEARCH_NODES = 20000
MAX_SKELETON_ATTEMPTS = 20


class ChoraleError(ValueError):
    pass


class SkeletonInfeasible(ChoraleError):
    """在搜索上限内找不到满足声部进行规则的骨架"""


class InsufficientSites(ChoraleError):
    def __init__(self, requested, available):
        super().__init__(f"非和弦音插入位置不足: 需要 {requested} 个，最多 {available} 个（缺 {requested - available} 个）")
        self.requested = requested
        self.available = available


class NHTKind(Enum):
    PASSING = "passing"
    NEIGHBOR = "neighbor"
    SUSPENSION = "suspension"
    ANTICIPATION = "anticipation"
    ESCAPE = "escape"
    APPOGGIATURA = "appoggiatura"

    @property
    def on_beat(self):
        return self in (NHTKind.SUSPENSION, NHTKind.APPOGGIATURA)


ALL_KINDS = tuple(NHTKind)


@dataclass(frozen=True)
class Tonality:
    tonic: int
    mode: str = "major"

    def __post_init__(self):
        if not 0 <= self.tonic < 12 or self.mode not in SCALES:
            raise ChoraleError(f"调性无效: tonic={self.tonic}, mode={self.mode}")

    @property
    def label(self):
        return f"{PITCH_NAMES[self.tonic]} {self.mode}"

    @classmethod
    def parse(cls, label):
        name, mode = label.split()
        return cls(PITCH_NAMES.index(name), mode)

    @classmethod
    def all_keys(cls):
        return [cls(t, m) for m in ("major", "minor") for t in range(12)]

    def scale_pcs(self):
        return frozenset((self.tonic + d) % 12 for d in SCALES[self.mode])

    def chord_pcs(self, degree):
        return frozenset((self.tonic + d) % 12 for d in CHORDS[self.mode][degree][1])

    def chord_root(self, degree):
        return (self.tonic + CHORDS[self.mode][degree][0]) % 12

    def step(self, pitch, direction):
        """pitch 沿音阶向上(+1)或向下(-1)一级；相距超过全音时返回 None"""
        scale = self.scale_pcs()
        for distance in (1, 2):
            candidate = pitch + direction * distance
            if candidate % 12 in scale:
                return candidate if 0 <= candidate < 128 else None
        return None


@dataclass(frozen=True)
class Skeleton:
    """四部和声骨架，voicings 中每个和弦按 (S, A, T, B) 排列"""
    skeleton_id: str
    tonality: Tonality
    chords: Tuple[str, ...]
    voicings: Tuple[Tuple[int, int, int, int], ...]
    steps: int = 16
    quantum: int = DEFAULT_QUANTUM
    seed: int = 0

    @property
    def span(self):
        return self.steps // len(self.chords)

    @property
    def half(self):
        return self.span // 2

    def chord_at(self, column):
        return min(column // self.span, len(self.chords) - 1)

    def chord_pcs_at(self, column):
        return self.tonality.chord_pcs(self.chords[self.chord_at(column)])

    def grid(self):
        grid = np.full((4, self.steps), -1, dtype=np.int16)
        for i, voicing in enumerate(self.voicings):
            grid[:, i * self.span:(i + 1) * self.span] = np.asarray(voicing)[:, None]
        return grid

    def onsets(self):
        mask = np.zeros((4, self.steps), dtype=bool)
        mask[:, ::self.span] = True
        return mask

    def to_bar(self, index=0):
        return _grid_to_bar(self.grid(), self.onsets(), self.quantum, index)


@dataclass(frozen=True)
class NonHarmonicTone:
    kind: NHTKind
    voice: int
    column: int
    pitch: int

    def to_dict(self):
        return {"kind": self.kind.value, "voice": self.voice, "column": self.column, "pitch": self.pitch}

    @classmethod
    def from_dict(cls, data):
        return cls(NHTKind(data["kind"]), int(data["voice"]), int(data["column"]), int(data["pitch"]))


@dataclass(frozen=True)
class Realisation:
    realisation_id: str
    skeleton_id: str
    bar: Bar
    nht_list: Tuple[NonHarmonicTone, ...] = ()
    seed: int = 0

    @property
    def nht_count(self):
        return len(self.nht_list)


@dataclass(frozen=True)
class VerificationIssue:
    code: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.message}"


def _grid_to_bar(grid, onsets, quantum, index):
    notes = []
    voices, steps = grid.shape
    for voice in range(voices):
        start = None
        for column in range(steps + 1):
            pitch = int(grid[voice, column]) if column < steps else -1
            boundary = column == steps or onsets[voice, column] or (start is not None and pitch != grid[voice, start])
            if start is not None and boundary:
                notes.append(Note(onset=start * quantum, pitch=int(grid[voice, start]),
                                  duration=(column - start) * quantum, velocity=DEFAULT_VELOCITY, voice=voice))
                start = None
            if column < steps and pitch >= 0 and start is None:
                start = column
    return Bar(index=index, quantum=quantum, steps=steps, notes=tuple(notes))


def bar_voice_grid(bar, voices=4):
    grid = np.full((voices, bar.steps), -1, dtype=np.int16)
    for pitch, start, end, _velocity, voice in bar.note_columns():
        if voice < voices:
            grid[voice, start:end] = pitch
    return grid


# ---- 骨架生成 ----

@lru_cache(maxsize=None)
def _voicings(tonality, degree):
    """某和弦所有合法的原位四部排列"""
    pcs = tonality.chord_pcs(degree)
    root = tonality.chord_root(degree)
    leading_tone = (tonality.tonic + 11) % 12
    candidates = [
        [p for p in range(lo, hi + 1) if p % 12 in pcs] for lo, hi in VOICE_RANGES
    ]
    result = []
    for s, a, t, b in product(*candidates):
        if b % 12 != root or not s > a > t > b:
            continue
        if a - t > MAX_SPACING[1] or s - a > MAX_SPACING[0] or t - b > MAX_SPACING[2]:
            continue
        voicing = (s, a, t, b)
        if {p % 12 for p in voicing} != set(pcs):
            continue
        if sum(1 for p in voicing if p % 12 == leading_tone) > 1:
            continue
        result.append(voicing)
    return tuple(result)


def _motion_ok(prev, curr):
    for v in range(4):
        if abs(curr[v] - prev[v]) > MAX_LEAP[v]:
            return False
    for i in range(4):
        for j in range(i + 1, 4):
            before = (prev[i] - prev[j]) % 12
            after = (curr[i] - curr[j]) % 12
            moved = prev[i] != curr[i] and prev[j] != curr[j]
            if moved and before == after and before in (0, 7):
                return False
    return True


def _parallel_perfects(prev, curr):
    issues = []
    for i in range(4):
        for j in range(i + 1, 4):
            before = (prev[i] - prev[j]) % 12
            after = (curr[i] - curr[j]) % 12
            if prev[i] != curr[i] and prev[j] != curr[j] and before == after and before in (0, 7):
                name = "五度" if before == 7 else "八度"
                issues.append(f"{VOICE_NAMES[i]}/{VOICE_NAMES[j]} 平行{name}")
    return issues


def generate_skeleton(tonality, n_chords, rng_seed, steps=16, skeleton_id=None, quantum=DEFAULT_QUANTUM):
    """按 主-下属-属-主 语法生成和弦进行并配置四部，受限回溯搜索"""
    if n_chords < 2 or steps % n_chords or steps // n_chords < 2:
        raise ChoraleError(f"和弦数 {n_chords} 必须 >= 2 且能整除 {steps}，每个和弦至少两格")
    rng = np.random.default_rng(rng_seed)
    mode = tonality.mode
    tonic = TONIC[mode]
    nodes = 0

    def allowed(position, previous):
        if position == 0:
            return [tonic]
        options = list(TRANSITIONS[mode][previous])
        if n_chords >= 3 and position == n_chords - 1:
            return [tonic] if tonic in options else []
        if position == n_chords - 1 or (n_chords >= 3 and position == n_chords - 2):
            return ["V"] if "V" in options else []
        return [options[i] for i in rng.permutation(len(options))]

    def search(position, chords, voicings):
        nonlocal nodes
        if position == n_chords:
            return True
        previous = chords[-1] if chords else None
        for degree in allowed(position, previous):
            candidates = list(_voicings(tonality, degree))
            if voicings:
                candidates = [v for v in candidates if _motion_ok(voicings[-1], v)]
                jitter = rng.random(len(candidates))
                order = sorted(range(len(candidates)),
                               key=lambda k: sum(abs(a - b) for a, b in zip(candidates[k], voicings[-1])) + 2 * jitter[k])
            else:
                order = list(rng.permutation(len(candidates)))
            for k in order[:8]:
                nodes += 1
                if nodes > MAX_SEARCH_NODES:
                    raise SkeletonInfeasible(f"超过搜索上限 {MAX_SEARCH_NODES} 个节点")
                chords.append(degree)
                voicings.append(candidates[k])
                if search(position + 1, chords, voicings):
                    return True
                chords.pop()
                voicings.pop()
        return False

    chords, voicings = [], []
    if not search(0, chords, voicings):
        raise SkeletonInfeasible(f"{tonality.label} 下找不到 {n_chords} 个和弦的合法进行")
    skeleton_id = skeleton_id or f"{PITCH_NAMES[tonality.tonic]}{tonality.mode[:3]}-{rng_seed}"
    return Skeleton(skeleton_id=skeleton_id, tonality=tonality, chords=tuple(chords),
                    voicings=tuple(voicings), steps=steps, quantum=quantum, seed=int(rng_seed))


def check_skeleton(skeleton):
    """独立检查骨架的声部进行规则，返回问题列表"""
    issues = []
    tonality = skeleton.tonality
    scale = tonality.scale_pcs()
    for i, (degree, voicing) in enumerate(zip(skeleton.chords, skeleton.voicings)):
        pcs = tonality.chord_pcs(degree)
        if not pcs <= scale:
            issues.append(f"和弦 {i} ({degree}) 含调外音")
        for v, (pitch, (lo, hi)) in enumerate(zip(voicing, VOICE_RANGES)):
            if not lo <= pitch <= hi:
                issues.append(f"和弦 {i} {VOICE_NAMES[v]} 音高 {pitch} 超出音域")
            if pitch % 12 not in pcs:
                issues.append(f"和弦 {i} {VOICE_NAMES[v]} 音高 {pitch} 不是和弦音")
        if any(voicing[v] <= voicing[v + 1] for v in range(3)):
            issues.append(f"和弦 {i} 声部交叉")
        if {p % 12 for p in voicing} != set(pcs):
            issues.append(f"和弦 {i} 和弦音不完整")
        if i:
            issues.extend(f"和弦 {i - 1}->{i} {msg}" for msg in _parallel_perfects(skeleton.voicings[i - 1], voicing))
    return issues


# ---- 非和弦音 ----

def _site_options(skeleton, voice, boundary, kinds):
    """某声部在第 boundary 个和弦交界处可插入的 (类型, 音高)"""
    tonality = skeleton.tonality
    a = skeleton.voicings[boundary][voice]
    b = skeleton.voicings[boundary + 1][voice]
    here = tonality.chord_pcs(skeleton.chords[boundary])
    there = tonality.chord_pcs(skeleton.chords[boundary + 1])
    direction = int(np.sign(b - a))
    options = []
    if NHTKind.PASSING in kinds and 3 <= abs(b - a) <= 4:
        p = tonality.step(a, direction)
        if p is not None and 1 <= abs(b - p) <= 2 and p % 12 not in here:
            options.append((NHTKind.PASSING, p))
    if NHTKind.NEIGHBOR in kinds and a == b:
        for d in (1, -1):
            p = tonality.step(a, d)
            if p is not None and p % 12 not in here:
                options.append((NHTKind.NEIGHBOR, p))
    if NHTKind.ANTICIPATION in kinds and 1 <= abs(b - a) <= 2 and b % 12 not in here:
        options.append((NHTKind.ANTICIPATION, b))
    if NHTKind.ESCAPE in kinds and a != b:
        p = tonality.step(a, -direction)
        if p is not None and p % 12 not in here and abs(b - p) >= 3:
            options.append((NHTKind.ESCAPE, p))
    if NHTKind.SUSPENSION in kinds and 1 <= a - b <= 2 and a % 12 not in there:
        options.append((NHTKind.SUSPENSION, a))
    if NHTKind.APPOGGIATURA in kinds:
        for d in (1, -1):
            p = tonality.step(b, d)
            if p is None or p % 12 in there or abs(p - a) < 3:
                continue
            if np.sign(p - a) != np.sign(b - p):
                options.append((NHTKind.APPOGGIATURA, p))
    return options


def _enumerate_sites(skeleton, kinds):
    boundaries = len(skeleton.chords) - 1
    return [[_site_options(skeleton, v, i, kinds) for i in range(boundaries)] for v in range(4)]


def _capacity_table(site_row):
    """单个声部的动态规划表 cap[j][prev_on]：从交界 j 起最多还能放几个

    同一声部中，交界 j-1 的强拍型非和弦音与交界 j 的弱拍型不能共存（二者修改同一个和弦）。
    """
    n = len(site_row)
    cap = [[0, 0] for _ in range(n + 1)]
    for j in range(n - 1, -1, -1):
        has_off = any(not kind.on_beat for kind, _ in site_row[j])
        has_on = any(kind.on_beat for kind, _ in site_row[j])
        for prev_on in (0, 1):
            best = cap[j + 1][0]
            if has_off and not prev_on:
                best = max(best, 1 + cap[j + 1][0])
            if has_on:
                best = max(best, 1 + cap[j + 1][1])
            cap[j][prev_on] = best
    return cap


def nht_capacity(skeleton, kinds=ALL_KINDS):
    sites = _enumerate_sites(skeleton, set(kinds))
    return sum(_capacity_table(row)[0][0] for row in sites)


def _choose_sites(sites, count, rng):
    """随机选出恰好 count 个互不冲突的插入点，动态规划上界保证不会走进死胡同"""
    tables = [_capacity_table(row) for row in sites]
    later = [sum(t[0][0] for t in tables[v + 1:]) for v in range(len(tables))]
    chosen = []

    def search(voice, boundary, prev_on):
        if len(chosen) == count:
            return True
        if voice == len(sites):
            return False
        if boundary == len(sites[voice]):
            return search(voice + 1, 0, 0)
        if len(chosen) + tables[voice][boundary][prev_on] + later[voice] < count:
            return False
        options = [None] + list(sites[voice][boundary])
        for k in rng.permutation(len(options)):
            option = options[k]
            if option is None:
                if search(voice, boundary + 1, 0):
                    return True
                continue
            kind, pitch = option
            if not kind.on_beat and prev_on:
                continue
            chosen.append((voice, boundary, kind, pitch))
            if search(voice, boundary + 1, int(kind.on_beat)):
                return True
            chosen.pop()
        return False

    search(0, 0, 0)
    return chosen


def realize_skeleton(skeleton, nht_count, kinds=ALL_KINDS, rng_seed=0, realisation_id=None, index=0):
    kinds = set(kinds)
    sites = _enumerate_sites(skeleton, kinds)
    available = sum(_capacity_table(row)[0][0] for row in sites)
    if nht_count > available:
        raise InsufficientSites(nht_count, available)
    rng = np.random.default_rng(rng_seed)
    chosen = _choose_sites(sites, nht_count, rng)

    grid = skeleton.grid()
    onsets = skeleton.onsets()
    span, half = skeleton.span, skeleton.half
    nhts = []
    for voice, boundary, kind, pitch in chosen:
        if kind.on_beat:
            column = (boundary + 1) * span
            grid[voice, column:column + half] = pitch
            onsets[voice, column + half] = True
            if kind == NHTKind.SUSPENSION:
                onsets[voice, column] = False
        else:
            column = boundary * span + half
            grid[voice, column:column + half] = pitch
            onsets[voice, column] = True
        nhts.append(NonHarmonicTone(kind=kind, voice=voice, column=column, pitch=pitch))

    nhts.sort(key=lambda n: (n.column, n.voice))
    bar = _grid_to_bar(grid, onsets, skeleton.quantum, index)
    return Realisation(realisation_id=realisation_id or f"{skeleton.skeleton_id}_n{nht_count}_{rng_seed}",
                       skeleton_id=skeleton.skeleton_id, bar=bar, nht_list=tuple(nhts), seed=int(rng_seed))


def _is_step(interval):
    return 1 <= abs(interval) <= 2


def _pattern_issue(kind, prev, pitch, nxt):
    into, out = pitch - prev, nxt - pitch
    if prev < 0 or nxt < 0:
        return "前后缺少音符"
    if kind == NHTKind.PASSING:
        ok = _is_step(into) and _is_step(out) and np.sign(into) == np.sign(out)
    elif kind == NHTKind.NEIGHBOR:
        ok = prev == nxt and _is_step(into)
    elif kind == NHTKind.ANTICIPATION:
        ok = pitch == nxt and _is_step(into)
    elif kind == NHTKind.ESCAPE:
        ok = _is_step(into) and abs(out) >= 3 and np.sign(into) == -np.sign(out)
    elif kind == NHTKind.SUSPENSION:
        ok = pitch == prev and 1 <= -out <= 2
    else:
        ok = abs(into) >= 3 and _is_step(out) and np.sign(into) == -np.sign(out)
    return None if ok else f"{prev}->{pitch}->{nxt} 不符合 {kind.value} 的进行"


def verify_realisation(realisation, skeleton):
    """独立校验：非和弦音的类型规则，以及去掉非和弦音后能否精确还原骨架"""
    issues = []
    if realisation.skeleton_id != skeleton.skeleton_id:
        issues.append(VerificationIssue("skeleton-id", f"{realisation.skeleton_id} != {skeleton.skeleton_id}"))
    bar = realisation.bar
    if bar.steps != skeleton.steps:
        return issues + [VerificationIssue("recovery-mismatch", f"格数 {bar.steps} != {skeleton.steps}")]

    grid = bar_voice_grid(bar)
    base = skeleton.grid()
    span, half = skeleton.span, skeleton.half
    restored = grid.copy()
    for nht in realisation.nht_list:
        v, c, p = nht.voice, nht.column, nht.pitch
        if not 0 <= v < 4 or not 0 < c <= bar.steps - half:
            issues.append(VerificationIssue("placement", f"{nht} 位置越界"))
            continue
        expected_offset = 0 if nht.kind.on_beat else half
        if c % span != expected_offset:
            issues.append(VerificationIssue("placement", f"{nht.kind.value} 不应位于第 {c} 格"))
        if (grid[v, c:c + half] != p).any():
            issues.append(VerificationIssue("kind-pattern", f"声部 {v} 第 {c} 格的音高与声明的 {p} 不符"))
        if p % 12 in skeleton.chord_pcs_at(c):
            issues.append(VerificationIssue("not-nonharmonic", f"{p} 属于第 {c} 格的和弦"))
        problem = _pattern_issue(nht.kind, int(grid[v, c - 1]), int(grid[v, c]),
                                 int(grid[v, c + half]) if c + half < bar.steps else -1)
        if problem:
            issues.append(VerificationIssue("kind-pattern", problem))
        if nht.kind == NHTKind.SUSPENSION:
            tied = any(n.voice == v and n.onset < c * bar.quantum < n.end for n in bar.notes)
            if not tied:
                issues.append(VerificationIssue("kind-pattern", f"声部 {v} 第 {c} 格的挂留音没有连线"))
        restored[v, c:c + half] = base[v, c:c + half]
    if not np.array_equal(restored, base):
        voices, columns = np.nonzero(restored != base)
        issues.append(VerificationIssue("recovery-mismatch",
                                        f"还原后 {len(columns)} 个格与骨架不同，首个位于声部 {voices[0]} 第 {columns[0]} 格"))
    return issues


# ---- 评估语料 ----

def child_seed(*keys):
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass
class CorpusItem:
    skeleton: Skeleton
    realisations: List[Realisation] = field(default_factory=list)


def _build_item(seed, index, per_skeleton, nht_range, kinds, n_chords, steps):
    lo, hi = nht_range
    keys = Tonality.all_keys()
    last_error = None
    for attempt in range(MAX_SKELETON_ATTEMPTS):
        sk_seed = child_seed(seed, 0, index, attempt)
        tonality = keys[np.random.default_rng(sk_seed).integers(len(keys))]
        try:
            skeleton = generate_skeleton(tonality, n_chords, sk_seed, steps=steps, skeleton_id=f"sk{index:04d}")
        except SkeletonInfeasible as e:
            last_error = e
            continue
        if nht_capacity(skeleton, kinds) >= hi:
            break
        last_error = InsufficientSites(hi, nht_capacity(skeleton, kinds))
    else:
        raise ChoraleError(f"第 {index} 个骨架尝试 {MAX_SKELETON_ATTEMPTS} 次仍失败: {last_error}")

    item = CorpusItem(skeleton)
    for r in range(per_skeleton):
        count = lo + r % (hi - lo + 1)
        item.realisations.append(realize_skeleton(skeleton, count, kinds, child_seed(seed, 1, index, r),
                                                  realisation_id=f"sk{index:04d}_r{r:03d}"))
    return item


def generate_corpus(n_skeletons, per_skeleton, nht_range=(0, 8), seed=0, kinds=ALL_KINDS,
                    n_chords=4, steps=16, workers=1):
    """在内存中生成语料，结果顺序只取决于参数，与线程数无关"""
    lo, hi = nht_range
    if lo < 0 or hi < lo:
        raise ChoraleError(f"非和弦音数量范围无效: {nht_range}")
    kinds = tuple(kinds)
    args = [(seed, i, per_skeleton, nht_range, kinds, n_chords, steps) for i in range(n_skeletons)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda a: _build_item(*a), args))


def _meta_line(role, item_id, skeleton, path, nhts=(), seed=0):
    return json.dumps({
        "item_id": item_id,
        "role": role,
        "skeleton_id": skeleton.skeleton_id,
        "tonality": skeleton.tonality.label,
        "chords": list(skeleton.chords),
        "nht_count": len(nhts),
        "nhts": [n.to_dict() for n in nhts],
        "seed": seed,
        "path": path,
    }, sort_keys=True, ensure_ascii=False)


def build_eval_corpus(out_dir, n_skeletons, per_skeleton, nht_range=(0, 8), seed=0, kinds=ALL_KINDS,
                      workers=1):
    """写出 skeletons/*.mid、realisations/*.mid 与 meta.jsonl，返回 meta 行数"""
    items = generate_corpus(n_skeletons, per_skeleton, nht_range, seed, kinds, workers=workers)
    os.makedirs(os.path.join(out_dir, "skeletons"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "realisations"), exist_ok=True)
    lines = []
    failures = 0
    for item in items:
        sk = item.skeleton
        sk_path = f"skeletons/{sk.skeleton_id}.mid"
        write_midi_file(os.path.join(out_dir, sk_path), bars_to_score([sk.to_bar()]))
        lines.append(_meta_line("skeleton", sk.skeleton_id, sk, sk_path, seed=sk.seed))
        for r in item.realisations:
            issues = verify_realisation(r, sk)
            if issues:
                failures += 1
                logger.error(f"实现 {r.realisation_id} 校验失败: {'; '.join(map(str, issues))}")
            r_path = f"realisations/{r.realisation_id}.mid"
            write_midi_file(os.path.join(out_dir, r_path), bars_to_score([r.bar]))
            lines.append(_meta_line("realisation", r.realisation_id, sk, r_path, r.nht_list, r.seed))
    with open(os.path.join(out_dir, "meta.jsonl"), "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    logger.info(f"评估语料已写入 {out_dir}: {len(items)} 个骨架，{len(lines) - len(items)} 个实现")
    if failures:
        raise ChoraleError(f"{failures} 个实现未通过校验")
    return len(lines)


def load_meta(path) -> List[Dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
