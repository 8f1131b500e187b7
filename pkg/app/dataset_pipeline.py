"""语料到张量数据集的构建、往返校验与单文件转换"""
import json
import logging
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from rich.table import Table

from app.codec_errors import NotMonophonic, OverBudget
from app.config_manager import ConfigManager
from app.core_model import (Bar, Note, ScoreError, quantize_bar, score_pitch_range, slice_into_bars,
                            transpose_bar, transposition_range, bar_to_pianoroll)
from app.event_codec import event_count
from app.midi_io import MidiFormatError, read_midi_file
from app.representation_manager import RepresentationManager, default_plugins_dir
from app.signal_codec import SignalRep, encode_signal, export_wav
from app.status_monitor import FileStatus, StatusMonitor
from app.tensor_file import load_tensor, save_tensor

logger = logging.getLogger(__name__)

MIDI_SUFFIXES = (".mid", ".midi")
SPLITS = ("train", "test")


class EmptyDatasetError(ValueError):
    """过滤后没有任何小节"""


@dataclass
class ParsedPiece:
    path: str
    bars: List[Bar]
    pitch_range: Optional[Tuple[int, int]]


def discover_midi(corpus_dir):
    found = []
    for root, dirs, files in os.walk(corpus_dir):
        dirs.sort()
        for name in sorted(files):
            if name.lower().endswith(MIDI_SUFFIXES):
                found.append(os.path.relpath(os.path.join(root, name), corpus_dir).replace(os.sep, "/"))
    return sorted(found)


def load_representation(config_manager, representation_id=None, plugins_dir=None):
    manager = RepresentationManager(plugins_dir or default_plugins_dir(), config_manager)
    manager.load_representations()
    representation_id = representation_id or config_manager.get_pipeline_config().representation
    return manager.get_representation(representation_id)


def _parse_piece(corpus_dir, rel_path, steps, monitor):
    monitor.start(rel_path)
    try:
        score, diag = read_midi_file(os.path.join(corpus_dir, rel_path))
        bars = [quantize_bar(b) for b in slice_into_bars(score, steps)]
    except (MidiFormatError, ScoreError) as e:
        logger.error(f"解析 {rel_path} 失败: {e}")
        monitor.set_status(rel_path, FileStatus.SKIPPED, message=str(e))
        return None
    except OSError as e:
        logger.error(f"读取 {rel_path} 失败: {e}")
        monitor.set_status(rel_path, FileStatus.ERROR, message=str(e))
        return None
    message = f"{len(diag.warnings)} 条警告" if diag.warnings else ""
    monitor.set_status(rel_path, FileStatus.PARSED, bars=len(bars), message=message)
    return ParsedPiece(rel_path, bars, score_pitch_range(score))


def split_pieces(paths, ratio, seed):
    """按整首作品划分训练/测试集，同一作品的小节不会跨集合"""
    n = len(paths)
    n_train = int(round(ratio * n))
    if ratio < 1.0 and n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    assignment = {}
    for rank, idx in enumerate(order):
        assignment[paths[idx]] = "train" if rank < n_train else "test"
    return assignment


def _bar_record(piece_path, bar, shift):
    return {
        "file": piece_path,
        "bar": bar.index,
        "transpose": shift,
        "quantum": bar.quantum,
        "steps": bar.steps,
        "notes": [[n.pitch, n.onset, n.duration, n.velocity, n.voice] for n in bar.notes],
    }


def _record_to_bar(record):
    notes = tuple(Note(onset=o, pitch=p, duration=d, velocity=v, voice=vo) for p, o, d, v, vo in record["notes"])
    return Bar(index=record["bar"], quantum=record["quantum"], steps=record["steps"], notes=notes)


def _drop_reason(error):
    if isinstance(error, OverBudget):
        return "over_tuple_budget" if error.unit == "tuples" else "over_event_budget"
    if isinstance(error, NotMonophonic):
        return "not_monophonic"
    return "encode_error"


def build_dataset(corpus_dir, out_dir, config_manager=None, plugins_dir=None, monitor=None):
    """解析、切分、过滤、增强并编码语料，写出张量、源小节与清单，返回清单字典"""
    config_manager = config_manager or ConfigManager()
    cfg = config_manager.get_pipeline_config()
    representation = load_representation(config_manager, cfg.representation, plugins_dir)
    monitor = monitor or StatusMonitor("语料解析")

    paths = discover_midi(corpus_dir)
    if not paths:
        raise EmptyDatasetError(f"{corpus_dir} 中没有 MIDI 文件")
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        pieces = list(pool.map(lambda p: _parse_piece(corpus_dir, p, cfg.steps_per_bar, monitor), paths))
    skipped = [{"path": item.path, "reason": item.message} for item in monitor.items()
               if item.status in (FileStatus.SKIPPED, FileStatus.ERROR)]
    parsed = [p for p in pieces if p is not None]

    ranges = [p.pitch_range for p in parsed if p.pitch_range]
    corpus_range = (min(r[0] for r in ranges), max(r[1] for r in ranges)) if ranges else None
    assignment = split_pieces([p.path for p in parsed], cfg.split_ratio, cfg.seed)

    arrays = {s: [] for s in SPLITS}
    records = {s: [] for s in SPLITS}
    stats = {s: {"pieces": 0, "bars_in": 0, "bars_kept": 0, "dropped": Counter()} for s in SPLITS}
    for piece in parsed:
        split = assignment[piece.path]
        stats[split]["pieces"] += 1
        shifts = transposition_range(piece.pitch_range, corpus_range) if cfg.augment else [0]
        for shift in shifts:
            for bar in piece.bars:
                stats[split]["bars_in"] += 1
                shifted = transpose_bar(bar, shift) if shift else bar
                if event_count(shifted, cfg.velocity_bins) > cfg.max_events:
                    stats[split]["dropped"]["over_event_budget"] += 1
                    continue
                prepared = representation.prepare(shifted)
                try:
                    array = representation.encode(prepared)
                except ValueError as e:
                    stats[split]["dropped"][_drop_reason(e)] += 1
                    logger.debug(f"{piece.path} 第 {bar.index} 小节（移调 {shift:+d}）被丢弃: {e}")
                    continue
                arrays[split].append(array)
                records[split].append(_bar_record(piece.path, prepared, shift))
                stats[split]["bars_kept"] += 1

    kept = sum(s["bars_kept"] for s in stats.values())
    bars_in = sum(s["bars_in"] for s in stats.values())
    if kept == 0:
        raise EmptyDatasetError(f"过滤后数据集为空（输入 {bars_in} 个小节）")

    os.makedirs(out_dir, exist_ok=True)
    splits_manifest = {}
    for split in SPLITS:
        tensor_name = f"{split}_{representation.representation_id}.ptns"
        bars_name = f"{split}_bars.jsonl"
        if arrays[split]:
            stacked = np.stack(arrays[split])
            save_tensor(os.path.join(out_dir, tensor_name), stacked, representation.dtype)
            shape = list(stacked.shape)
        else:
            shape = [0]
        with open(os.path.join(out_dir, bars_name), "w", encoding="utf-8", newline="\n") as f:
            for record in records[split]:
                f.write(json.dumps(record, sort_keys=True) + "\n")
        s = stats[split]
        splits_manifest[split] = {
            "pieces": s["pieces"],
            "bars_in": s["bars_in"],
            "bars_kept": s["bars_kept"],
            "dropped": dict(sorted(s["dropped"].items())),
            "tensor": tensor_name if arrays[split] else None,
            "bars": bars_name,
            "shape": shape,
        }

    dropped_total = Counter()
    for s in stats.values():
        dropped_total.update(s["dropped"])
    manifest = {
        "representation": representation.representation_id,
        "dtype": representation.dtype,
        "fidelity": representation.fidelity,
        "config": config_manager.effective_config(),
        "files": {"found": len(paths), "parsed": len(parsed), "skipped": skipped},
        "corpus_pitch_range": list(corpus_range) if corpus_range else None,
        "splits": splits_manifest,
        "totals": {
            "bars_in": bars_in,
            "bars_kept": kept,
            "dropped": dict(sorted(dropped_total.items())),
            "retention": kept / bars_in,
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    logger.info(f"数据集已写入 {out_dir}: 保留 {kept}/{bars_in} 个小节 ({kept / bars_in:.1%})")
    return manifest


@dataclass
class RoundtripReport:
    representation: str
    fidelity: str
    total: int = 0
    note_matches: int = 0
    roll_matches: int = 0
    mismatches: List[dict] = field(default_factory=list)

    @property
    def exact_matches(self):
        return self.roll_matches if self.fidelity == "roll" else self.note_matches

    def _rate(self, count):
        return count / self.total if self.total else 1.0

    @property
    def exact_match_rate(self):
        return self._rate(self.exact_matches)

    @property
    def note_match_rate(self):
        return self._rate(self.note_matches)

    @property
    def roll_match_rate(self):
        return self._rate(self.roll_matches)

    def to_dict(self):
        return {
            "representation": self.representation,
            "fidelity": self.fidelity,
            "total": self.total,
            "exact_match_rate": self.exact_match_rate,
            "note_match_rate": self.note_match_rate,
            "roll_match_rate": self.roll_match_rate,
            "mismatches": self.mismatches,
        }


def roundtrip_check(dataset_dir, plugins_dir=None):
    """解码数据集中的每个小节并与源小节比较，逐条列出不一致项"""
    with open(os.path.join(dataset_dir, "manifest.json"), "r", encoding="utf-8") as f:
        manifest = json.load(f)
    config_manager = ConfigManager.from_dict(manifest["config"])
    representation = load_representation(config_manager, manifest["representation"], plugins_dir)
    report = RoundtripReport(representation=representation.representation_id, fidelity=representation.fidelity)

    for split in SPLITS:
        entry = manifest["splits"].get(split)
        if not entry or not entry.get("tensor"):
            continue
        tensor = load_tensor(os.path.join(dataset_dir, entry["tensor"]))
        with open(os.path.join(dataset_dir, entry["bars"]), "r", encoding="utf-8") as f:
            meta = [json.loads(line) for line in f if line.strip()]
        if len(meta) != tensor.shape[0]:
            raise ValueError(f"{split} 张量有 {tensor.shape[0]} 行，但源小节有 {len(meta)} 个")
        sources = [_record_to_bar(record) for record in meta]

        for row, (source, info) in enumerate(zip(sources, meta)):
            report.total += 1
            where = {"split": split, "row": row, "file": info["file"], "bar": info["bar"],
                     "transpose": info["transpose"]}
            try:
                decoded, violations = representation.decode_with_report(
                    tensor[row], quantum=source.quantum, index=source.index)
            except ValueError as e:
                report.mismatches.append(dict(where, reason="decode-error", detail=str(e)))
                continue
            notes_ok, roll_ok = representation.compare(source, decoded)
            report.note_matches += notes_ok
            report.roll_matches += roll_ok
            exact = roll_ok if representation.fidelity == "roll" else notes_ok
            if not exact:
                reason = "hold-merge" if roll_ok else "roll-mismatch"
                report.mismatches.append(dict(where, reason=reason, detail="; ".join(map(str, violations))))
    logger.info(f"往返校验 {report.representation}: {report.exact_matches}/{report.total} 完全一致")
    return report


def render_roundtrip_table(report, limit=20):
    table = Table(title=f"往返校验: {report.representation}")
    table.add_column("指标")
    table.add_column("数值", justify="right")
    table.add_row("小节数", str(report.total))
    table.add_row(f"完全一致率 ({report.fidelity})", f"{report.exact_match_rate:.4f}")
    table.add_row("音符级一致率", f"{report.note_match_rate:.4f}")
    table.add_row("卷帘级一致率", f"{report.roll_match_rate:.4f}")
    detail = Table(title="不一致项")
    for column in ("split", "row", "file", "bar", "transpose", "reason"):
        detail.add_column(column)
    for item in report.mismatches[:limit]:
        detail.add_row(*(str(item[c]) for c in ("split", "row", "file", "bar", "transpose", "reason")))
    return table, detail


def render_manifest_table(manifest):
    table = Table(title=f"数据集: {manifest['representation']}")
    table.add_column("集合")
    table.add_column("作品", justify="right")
    table.add_column("输入小节", justify="right")
    table.add_column("保留小节", justify="right")
    table.add_column("丢弃原因")
    for split, entry in manifest["splits"].items():
        dropped = ", ".join(f"{k}={v}" for k, v in entry["dropped"].items()) or "-"
        table.add_row(split, str(entry["pieces"]), str(entry["bars_in"]), str(entry["bars_kept"]), dropped)
    return table


def convert_file(midi_path, out_dir, config_manager=None, plugins_dir=None, monitor=None):
    """把单个 MIDI 文件按小节编码为张量文件，返回写出的路径列表

    信号化表示额外为每个小节写出同名 WAV 文件。超出预算或不是单声部的小节跳过，
    在 monitor 中记为已跳过。
    """
    config_manager = config_manager or ConfigManager()
    cfg = config_manager.get_pipeline_config()
    representation = load_representation(config_manager, cfg.representation, plugins_dir)
    monitor = monitor or StatusMonitor("转换结果")
    score, _diag = read_midi_file(midi_path)
    bars = [quantize_bar(b) for b in slice_into_bars(score, cfg.steps_per_bar)]
    stem = os.path.splitext(os.path.basename(midi_path))[0]
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for bar in bars:
        path = os.path.join(out_dir, f"{stem}_bar{bar.index:03d}_{representation.representation_id}.ptns")
        name = os.path.basename(path)
        try:
            array = representation.encode(representation.prepare(bar))
        except (OverBudget, NotMonophonic) as e:
            logger.warning(f"{midi_path} 第 {bar.index} 小节已跳过: {e}")
            monitor.set_status(name, FileStatus.SKIPPED, message=_drop_reason(e))
            continue
        save_tensor(path, array, representation.dtype)
        written.append(path)
        monitor.set_status(name, FileStatus.WRITTEN, bars=1)
        if representation.representation_id == "signallike":
            wav_path = path[:-len(".ptns")] + ".wav"
            sig = SignalRep(samples=np.asarray(array, dtype=np.float64), config=cfg.spectral, n_frames=bar.steps)
            with open(wav_path, "wb") as f:
                f.write(export_wav(sig, config_manager.get_sample_rate()))
            written.append(wav_path)
            monitor.set_status(os.path.basename(wav_path), FileStatus.WRITTEN, bars=1)
    logger.info(f"{midi_path} 已转换为 {len(written)} 个文件")
    return written


def export_wav_files(midi_path, out_dir, config_manager=None):
    """每个小节导出一个信号化表示的 WAV 文件"""
    config_manager = config_manager or ConfigManager()
    cfg = config_manager.get_pipeline_config()
    sample_rate = config_manager.get_sample_rate()
    score, _diag = read_midi_file(midi_path)
    stem = os.path.splitext(os.path.basename(midi_path))[0]
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for bar in slice_into_bars(score, cfg.steps_per_bar):
        sig = encode_signal(bar_to_pianoroll(bar), cfg=cfg.spectral)
        path = os.path.join(out_dir, f"{stem}_bar{bar.index:03d}.wav")
        with open(path, "wb") as f:
            f.write(export_wav(sig, sample_rate))
        written.append(path)
    logger.info(f"{midi_path} 已导出 {len(written)} 个 WAV 文件")
    return written
