"""评估指标：帧级准确率、嵌入距离曲线、线性度、调性聚类轮廓系数"""
import csv
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats
from sklearn.metrics import silhouette_score

from app.core_model import quantize_bar, slice_into_bars
from app.midi_io import read_midi_file

logger = logging.getLogger(__name__)

FRAMES_PER_BAR = 16


class ShapeMismatchError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class MissingSkeletonError(ValueError):
    def __init__(self, missing):
        missing = sorted(set(missing))
        super().__init__(f"找不到这些骨架的嵌入: {', '.join(missing)}")
        self.missing = missing


def _frame_pool(activation, frames):
    steps = activation.shape[1]
    if steps % frames:
        raise ShapeMismatchError(f"列数 {steps} 无法均分为 {frames} 帧")
    return activation.reshape(activation.shape[0], frames, steps // frames).any(axis=2)


def frame_counts(pred, target, frames=FRAMES_PER_BAR):
    """返回 (TP, FP, FN)"""
    p, t = np.asarray(pred.activation), np.asarray(target.activation)
    if p.shape != t.shape:
        raise ShapeMismatchError(f"预测 {p.shape} 与目标 {t.shape} 形状不同")
    p, t = _frame_pool(p, frames), _frame_pool(t, frames)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return tp, fp, fn


def frame_accuracy(pred, target, frames=FRAMES_PER_BAR):
    """TP / (TP + FP + FN)，两者皆空时为 1.0"""
    tp, fp, fn = frame_counts(pred, target, frames)
    denominator = tp + fp + fn
    return 1.0 if denominator == 0 else tp / denominator


def mean_frame_accuracy(pairs, frames=FRAMES_PER_BAR):
    scores = [frame_accuracy(p, t, frames) for p, t in pairs]
    if not scores:
        raise ValueError("没有可评估的小节")
    return math.fsum(scores) / len(scores)


@dataclass
class EmbeddingRecord:
    item_id: str
    vector: np.ndarray = field(repr=False)
    role: str = "realisation"
    skeleton_id: Optional[str] = None
    tonality: Optional[str] = None
    nht_count: int = 0
    nht_kinds: Sequence[str] = ()


class EmbeddingTable:
    """维度一致的嵌入集合"""

    def __init__(self, records=()):
        self.records: List[EmbeddingRecord] = []
        self.dimension = None
        for record in records:
            self.add(record)

    def add(self, record):
        vector = np.asarray(record.vector, dtype=np.float64).ravel()
        if self.dimension is None:
            self.dimension = vector.shape[0]
        elif vector.shape[0] != self.dimension:
            raise DimensionMismatchError(f"{record.item_id} 的维度 {vector.shape[0]} 与 {self.dimension} 不同")
        record.vector = vector
        self.records.append(record)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def skeletons(self):
        return {r.item_id: r for r in self.records if r.role == "skeleton"}

    def realisations(self):
        return [r for r in self.records if r.role == "realisation"]


def embed_corpus(corpus_dir, meta_lines, representation):
    """逐行读取 meta 指向的 MIDI，用表示插件的原始编码作为嵌入向量，不做任何训练"""
    steps = representation.pipeline_config().steps_per_bar
    rows = []
    for meta in meta_lines:
        score, _diag = read_midi_file(os.path.join(corpus_dir, meta["path"]))
        bars = slice_into_bars(score, steps)
        if not bars:
            raise ValueError(f"{meta['path']} 中没有小节")
        bar = quantize_bar(bars[0])
        rows.append(np.asarray(representation.encode(representation.prepare(bar)), dtype=np.float64).ravel())
    if not rows:
        raise ValueError("meta 为空，无法计算嵌入")
    try:
        return np.vstack(rows)
    except ValueError as e:
        raise DimensionMismatchError(f"嵌入长度不一致: {e}") from e


def load_embeddings(matrix, meta_lines):
    """按行号把嵌入矩阵与 meta.jsonl 对齐"""
    matrix = np.asarray(matrix)
    if matrix.ndim < 2:
        raise DimensionMismatchError(f"嵌入矩阵至少二维: {matrix.shape}")
    if matrix.shape[0] != len(meta_lines):
        raise DimensionMismatchError(f"嵌入 {matrix.shape[0]} 行与 meta {len(meta_lines)} 行数量不同")
    table = EmbeddingTable()
    for row, meta in zip(matrix.reshape(matrix.shape[0], -1), meta_lines):
        table.add(EmbeddingRecord(
            item_id=meta["item_id"], vector=row, role=meta.get("role", "realisation"),
            skeleton_id=meta.get("skeleton_id"), tonality=meta.get("tonality"),
            nht_count=int(meta.get("nht_count", 0)),
            nht_kinds=tuple(n["kind"] for n in meta.get("nhts", ())),
        ))
    return table


@dataclass
class BucketStats:
    mean: float
    count: int
    std: float
    normalized: float = 0.0


@dataclass
class DistanceProfile:
    buckets: Dict[int, BucketStats]

    def counts(self):
        return sorted(self.buckets)

    def means(self):
        return [self.buckets[k].mean for k in self.counts()]

    def is_strictly_increasing(self):
        means = self.means()
        return all(b > a for a, b in zip(means, means[1:]))


def _bucket_stats(values):
    n = len(values)
    mean = math.fsum(values) / n
    variance = math.fsum((v - mean) ** 2 for v in values) / n
    return BucketStats(mean=mean, count=n, std=math.sqrt(variance))


def _skeleton_distances(table):
    skeletons = table.skeletons()
    realisations = table.realisations()
    missing = [r.skeleton_id for r in realisations if r.skeleton_id not in skeletons]
    if missing:
        raise MissingSkeletonError(missing)
    for r in realisations:
        yield r, float(np.linalg.norm(r.vector - skeletons[r.skeleton_id].vector))


def distance_profile(table):
    """按非和弦音数量分组，统计实现与其骨架的欧氏距离"""
    if not isinstance(table, EmbeddingTable):
        table = EmbeddingTable(table)
    grouped = defaultdict(list)
    for record, distance in _skeleton_distances(table):
        grouped[record.nht_count].append(distance)
    if not grouped:
        raise ValueError("没有可用的实现嵌入")
    buckets = {k: _bucket_stats(v) for k, v in sorted(grouped.items())}
    top = max(b.mean for b in buckets.values())
    for bucket in buckets.values():
        bucket.normalized = bucket.mean / top if top > 0 else 0.0
    return DistanceProfile(buckets=buckets)


def kindwise_profile(table):
    """只含一个非和弦音的实现，按类型分组的距离"""
    if not isinstance(table, EmbeddingTable):
        table = EmbeddingTable(table)
    grouped = defaultdict(list)
    for record, distance in _skeleton_distances(table):
        if record.nht_count == 1 and len(record.nht_kinds) == 1:
            grouped[record.nht_kinds[0]].append(distance)
    return {kind: _bucket_stats(values) for kind, values in sorted(grouped.items())}


@dataclass
class LinearityResult:
    pearson_r: float
    spearman_rho: float
    degenerate: bool = False


def linearity_score(profile):
    counts = profile.counts()
    if len(counts) < 3:
        raise ValueError(f"至少需要 3 个分组才能计算线性度，实际 {len(counts)} 个")
    x = np.asarray(counts, dtype=np.float64)
    y = np.asarray(profile.means(), dtype=np.float64)
    if np.ptp(y) == 0:
        logger.warning("各分组平均距离相同，相关系数记为 0")
        return LinearityResult(0.0, 0.0, degenerate=True)
    pearson = stats.pearsonr(x, y)[0]
    spearman = stats.spearmanr(x, y)[0]
    return LinearityResult(float(pearson), float(spearman))


def tonality_silhouette(table):
    """按调性标签计算轮廓系数；只有一个样本的调性被排除"""
    if not isinstance(table, EmbeddingTable):
        table = EmbeddingTable(table)
    members = defaultdict(list)
    for record in table:
        if record.tonality is not None:
            members[record.tonality].append(record.vector)
    singletons = sorted(label for label, vectors in members.items() if len(vectors) < 2)
    if singletons:
        logger.warning(f"以下调性只有一个样本，已排除: {', '.join(singletons)}")
    labels, vectors = [], []
    for label, group in sorted(members.items()):
        if len(group) >= 2:
            labels.extend([label] * len(group))
            vectors.extend(group)
    if len(set(labels)) < 2:
        raise ValueError("至少需要两个调性（每个至少两个样本）")
    return float(silhouette_score(np.vstack(vectors), labels, metric="euclidean"))


def write_report(out_dir, profile, linearity=None, silhouette=None, kindwise=None):
    """写出 eval_report.json 与 eval_report.csv"""
    os.makedirs(out_dir, exist_ok=True)
    report = {
        "distance_profile": {str(k): asdict(v) for k, v in profile.buckets.items()},
        "linearity": asdict(linearity) if linearity else None,
        "tonality_silhouette": silhouette,
        "kindwise": {k: asdict(v) for k, v in (kindwise or {}).items()},
    }
    json_path = os.path.join(out_dir, "eval_report.json")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True, ensure_ascii=False)
    csv_path = os.path.join(out_dir, "eval_report.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["section", "key", "mean", "count", "std", "normalized"])
        for k, b in profile.buckets.items():
            writer.writerow(["nht_count", k, repr(b.mean), b.count, repr(b.std), repr(b.normalized)])
        for k, b in (kindwise or {}).items():
            writer.writerow(["nht_kind", k, repr(b.mean), b.count, repr(b.std), ""])
        if linearity:
            writer.writerow(["linearity", "pearson_r", repr(linearity.pearson_r), "", "", ""])
            writer.writerow(["linearity", "spearman_rho", repr(linearity.spearman_rho), "", "", ""])
        if silhouette is not None:
            writer.writerow(["tonality", "silhouette", repr(silhouette), "", "", ""])
    logger.info(f"评估报告已写入 {json_path}")
    return json_path, csv_path
