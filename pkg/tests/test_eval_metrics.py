import csv
import json

import numpy as np
import pytest

from app.chorale_gen import build_eval_corpus, generate_corpus, load_meta
from app.core_model import PianoRoll, bar_to_pianoroll
from app.eval_metrics import (DimensionMismatchError, EmbeddingRecord, EmbeddingTable, MissingSkeletonError,
                              ShapeMismatchError, distance_profile, embed_corpus, frame_accuracy,
                              kindwise_profile, linearity_score, load_embeddings, mean_frame_accuracy,
                              tonality_silhouette, write_report)
from app.signal_codec import signal_embedding


def roll(array):
    return PianoRoll(np.asarray(array, dtype=np.uint8))


def reference_accuracy(pred, target):
    """集合运算给出的参考值：帧内任一格激活即视为该帧激活"""
    p = {(pitch, t // 1) for pitch, t in zip(*np.nonzero(pred))}
    g = {(pitch, t // 1) for pitch, t in zip(*np.nonzero(target))}
    if not p | g:
        return 1.0
    return len(p & g) / len(p | g)


def test_frame_accuracy_oracle():
    rng = np.random.default_rng(3)
    for _ in range(200):
        density = rng.uniform(0, 0.2)
        pred = (rng.random((128, 16)) < density).astype(np.uint8)
        target = (rng.random((128, 16)) < density).astype(np.uint8)
        assert abs(frame_accuracy(roll(pred), roll(target)) - reference_accuracy(pred, target)) < 1e-12


def test_frame_accuracy_identities():
    x = np.zeros((128, 16), dtype=np.uint8)
    x[60, :8] = 1
    y = np.zeros((128, 16), dtype=np.uint8)
    y[62, 8:] = 1
    assert frame_accuracy(roll(x), roll(x)) == 1.0
    assert frame_accuracy(roll(x), roll(y)) == 0.0
    assert frame_accuracy(roll(np.zeros((128, 16))), roll(np.zeros((128, 16)))) == 1.0


def test_frame_accuracy_pools_finer_grids():
    x = np.zeros((128, 32), dtype=np.uint8)
    y = np.zeros((128, 32), dtype=np.uint8)
    x[60, 0] = 1
    y[60, 1] = 1
    assert frame_accuracy(roll(x), roll(y)) == 1.0


def test_frame_accuracy_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        frame_accuracy(roll(np.zeros((128, 16))), roll(np.zeros((128, 32))))


def test_mean_frame_accuracy():
    x = roll(np.eye(128, 16))
    empty = roll(np.zeros((128, 16)))
    assert mean_frame_accuracy([(x, x), (x, empty)]) == 0.5


def record(item_id, vector, role="realisation", skeleton_id="s", tonality="C major", nht_count=0, kinds=()):
    return EmbeddingRecord(item_id=item_id, vector=np.asarray(vector, dtype=float), role=role,
                           skeleton_id=skeleton_id, tonality=tonality, nht_count=nht_count, nht_kinds=kinds)


def test_distance_profile_buckets():
    table = EmbeddingTable([
        record("s", [0, 0], role="skeleton"),
        record("r1", [1, 0], nht_count=1, kinds=("passing",)),
        record("r2", [0, 3], nht_count=1, kinds=("neighbor",)),
        record("r3", [3, 4], nht_count=2),
    ])
    profile = distance_profile(table)
    assert profile.counts() == [1, 2]
    assert profile.buckets[1].mean == 2.0
    assert profile.buckets[1].count == 2
    assert profile.buckets[1].std == 1.0
    assert profile.buckets[2].normalized == 1.0
    assert profile.is_strictly_increasing()
    kinds = kindwise_profile(table)
    assert kinds["passing"].mean == 1.0 and kinds["neighbor"].mean == 3.0


def test_missing_skeleton():
    table = EmbeddingTable([record("r", [1.0], skeleton_id="ghost", nht_count=1)])
    with pytest.raises(MissingSkeletonError) as info:
        distance_profile(table)
    assert info.value.missing == ["ghost"]


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        EmbeddingTable([record("a", [1, 2]), record("b", [1, 2, 3])])
    with pytest.raises(DimensionMismatchError):
        load_embeddings(np.zeros((3, 4)), [{"item_id": "a"}])


def test_linearity():
    table = EmbeddingTable([record("s", [0.0], role="skeleton")] +
                           [record(f"r{k}", [float(k)], nht_count=k) for k in range(1, 6)])
    result = linearity_score(distance_profile(table))
    assert result.pearson_r == pytest.approx(1.0)
    assert result.spearman_rho == pytest.approx(1.0)
    assert not result.degenerate


def test_linearity_needs_three_buckets():
    table = EmbeddingTable([record("s", [0.0], role="skeleton"), record("r", [1.0], nht_count=1)])
    with pytest.raises(ValueError):
        linearity_score(distance_profile(table))


def test_linearity_degenerate():
    table = EmbeddingTable([record("s", [0.0], role="skeleton")] +
                           [record(f"r{k}", [1.0], nht_count=k) for k in range(3)])
    result = linearity_score(distance_profile(table))
    assert result.degenerate
    assert result.pearson_r == 0.0


def test_silhouette_separates_clusters():
    rng = np.random.default_rng(0)
    records = [record(f"c{i}", rng.normal(0, 0.1, 3), tonality="C major") for i in range(10)]
    records += [record(f"g{i}", rng.normal(5, 0.1, 3), tonality="G major") for i in range(10)]
    records.append(record("lonely", [100, 100, 100], tonality="F minor"))
    assert tonality_silhouette(EmbeddingTable(records)) > 0.9


def test_silhouette_needs_two_labels():
    with pytest.raises(ValueError):
        tonality_silhouette(EmbeddingTable([record("a", [0.0]), record("b", [1.0])]))


def test_raw_signal_distance_grows_with_nht_count():
    """不经训练的信号化嵌入：距离随非和弦音数量严格递增"""
    items = generate_corpus(20, 9, nht_range=(0, 8), seed=11)
    records = []
    for item in items:
        sk = item.skeleton
        records.append(record(sk.skeleton_id, signal_embedding(bar_to_pianoroll(sk.to_bar())), role="skeleton",
                              skeleton_id=sk.skeleton_id, tonality=sk.tonality.label))
        for r in item.realisations:
            records.append(record(r.realisation_id, signal_embedding(bar_to_pianoroll(r.bar)),
                                  skeleton_id=sk.skeleton_id, tonality=sk.tonality.label, nht_count=r.nht_count))
    profile = distance_profile(EmbeddingTable(records))
    assert profile.counts() == list(range(9))
    assert profile.is_strictly_increasing()
    linearity = linearity_score(profile)
    assert linearity.spearman_rho >= 0.9
    assert linearity.pearson_r > 0.9


def test_embed_corpus_and_report(tmp_path):
    from app.config_manager import ConfigManager
    from app.dataset_pipeline import load_representation

    corpus = tmp_path / "eval"
    build_eval_corpus(str(corpus), 4, 4, nht_range=(0, 3), seed=2)
    meta = load_meta(str(corpus / "meta.jsonl"))
    representation = load_representation(ConfigManager(), "signallike")
    matrix = embed_corpus(str(corpus), meta, representation)
    assert matrix.shape[0] == len(meta)

    table = load_embeddings(matrix, meta)
    profile = distance_profile(table)
    assert profile.buckets[0].mean == 0.0
    json_path, csv_path = write_report(str(tmp_path / "report"), profile, linearity_score(profile),
                                       None, kindwise_profile(table))
    with open(json_path, encoding="utf-8") as f:
        report = json.load(f)
    assert set(report["distance_profile"]) == {"0", "1", "2", "3"}
    with open(csv_path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["section", "key", "mean", "count", "std", "normalized"]
    assert any(row[0] == "linearity" and row[1] == "spearman_rho" for row in rows)
