import json
import math

import numpy as np
import pytest

from coreselect.adapter import init_params
from coreselect.errors import ClassTooSmall, ConfigInvalid, LengthMismatch, ZeroNormRow
from coreselect.scoring import (
    ScoreVector,
    compute_scores,
    diversity_from_embeddings,
    load_scores,
    report_json,
    sample_diversity,
    save_scores,
    score_report,
    scores_to_csv,
    semantic_alignment,
)
from coreselect.store import ClassTextBank, EmbeddingTable

IDENT = init_params(4, 0.0, np.random.default_rng(0))


def bank_of(rows, names=None):
    rows = np.asarray(rows, dtype=np.float64)
    return ClassTextBank(
        text_embeddings=rows,
        class_names=names or [f"c{i}" for i in range(len(rows))],
        prompt_template="A photo of {}",
    )


def table_of(rows, labels):
    rows = np.asarray(rows, dtype=np.float64)
    return EmbeddingTable(
        embeddings=rows,
        labels=np.asarray(labels),
        sample_ids=[f"s{i}" for i in range(len(rows))],
    )


def test_alignment_same_row_is_one():
    table = table_of([[2.0, 0, 0, 0]], [0])
    bank = bank_of([[2.0, 0, 0, 0]])
    sas = semantic_alignment(table, bank, IDENT, IDENT)
    assert sas[0] == pytest.approx(1.0, abs=1e-12)


def test_alignment_orthogonal_is_zero():
    table = table_of([[1.0, 0, 0, 0]], [0])
    bank = bank_of([[0, 5.0, 0, 0]])
    sas = semantic_alignment(table, bank, IDENT, IDENT)
    assert sas[0] == 0.0


def test_alignment_matches_scalar_cosine_oracle():
    rng = np.random.default_rng(3)
    n, k, dim = 20, 4, 7
    table = table_of(rng.normal(size=(n, dim)), rng.integers(0, k, n))
    bank = ClassTextBank(
        text_embeddings=rng.normal(size=(k, dim)),
        class_names=[f"c{i}" for i in range(k)],
        prompt_template="p {}",
    )
    ident = init_params(dim, 0.0, rng)
    sas = semantic_alignment(table, bank, ident, ident)
    for i in range(n):
        a = table.embeddings[i]
        t = bank.text_embeddings[table.labels[i]]
        dot = sum(float(a[j]) * float(t[j]) for j in range(dim))
        na = math.sqrt(sum(float(v) ** 2 for v in a))
        nt = math.sqrt(sum(float(v) ** 2 for v in t))
        assert abs(sas[i] - dot / (na * nt)) < 1e-6


def test_alignment_values_in_range():
    rng = np.random.default_rng(4)
    table = table_of(rng.normal(size=(50, 4)), rng.integers(0, 3, 50))
    bank = bank_of(rng.normal(size=(3, 4)))
    params = init_params(4, 0.7, rng)
    sas = semantic_alignment(table, bank, params, params)
    assert np.all(sas >= -1.0) and np.all(sas <= 1.0)


def test_diversity_two_points_distance_two():
    table = table_of([[1.0, 0, 0, 0], [-1.0, 0, 0, 0]], [0, 0])
    sds, k_used = sample_diversity(table, IDENT, k_fraction=0.5)
    assert sds.tolist() == [2.0, 2.0]
    assert k_used.tolist() == [1]


def test_diversity_identical_class_is_zero():
    rows = np.tile([0.3, 0.4, 0.1, 0.2], (5, 1))
    table = table_of(rows, [0] * 5)
    sds, _ = sample_diversity(table, IDENT, k_fraction=0.2)
    assert np.all(sds == 0.0)


def brute_force_sds(emb, labels, k_fraction):
    """Full pairwise scalar-loop oracle: sort (distance, index), mean of first k."""
    n = emb.shape[0]
    out = np.zeros(n)
    for c in sorted(set(int(v) for v in labels)):
        idx = [i for i in range(n) if labels[i] == c]
        m = len(idx)
        k = min(max(1, math.floor(k_fraction * m)), m - 1)
        for i in idx:
            cand = []
            for j in idx:
                if j == i:
                    continue
                d = np.sqrt(np.sum((emb[i] - emb[j]) ** 2))
                cand.append((d, j))
            cand.sort()
            out[i] = np.mean([d for d, _ in cand[:k]])
    return out


def test_diversity_matches_brute_force_oracle():
    rng = np.random.default_rng(11)
    for trial in range(4):
        n = int(rng.integers(40, 160))
        dim = int(rng.integers(3, 20))
        labels = rng.integers(0, 3, n)
        labels[:6] = [0, 0, 1, 1, 2, 2]
        emb = rng.normal(size=(n, dim))
        sds, _ = diversity_from_embeddings(emb, labels, 0.1)
        oracle = brute_force_sds(emb, labels, 0.1)
        assert np.array_equal(sds, oracle)


def test_diversity_translation_invariant_per_class():
    # shift injected post-adapter via the embeddings-level entry point
    rng = np.random.default_rng(12)
    emb = rng.normal(size=(30, 6))
    labels = np.array([0] * 15 + [1] * 15)
    base, _ = diversity_from_embeddings(emb, labels, 0.2)
    shifted = emb.copy()
    shifted[labels == 0] += np.array([5.0, -3.0, 2.0, 0.5, -1.0, 4.0])
    moved, _ = diversity_from_embeddings(shifted, labels, 0.2)
    assert np.allclose(base, moved, rtol=1e-9, atol=1e-9)


def test_diversity_outlier_has_class_max():
    rng = np.random.default_rng(13)
    cluster = 0.05 * rng.normal(size=(20, 5))
    outlier = np.full((1, 5), 3.0)
    emb = np.vstack([cluster, outlier])
    labels = np.zeros(21, dtype=int)
    sds, _ = diversity_from_embeddings(emb, labels, 0.1)
    assert np.argmax(sds) == 20


def test_diversity_excludes_self():
    # with self included the nearest "neighbor" would be distance 0
    table = table_of([[0.0, 1, 0, 0], [0, 1, 0, 1.0], [0, 1, 0, 2.0]], [0, 0, 0])
    sds, _ = sample_diversity(table, IDENT, k_fraction=0.34)
    assert np.all(sds > 0.0)
    assert sds.tolist() == [1.0, 1.0, 1.0]


def test_diversity_k_rule():
    rng = np.random.default_rng(14)
    emb = rng.normal(size=(25, 4))
    # class sizes 5 and 20: floor(0.1*5)=0 -> clamped to 1; floor(0.1*20)=2
    labels = np.array([0] * 5 + [1] * 20)
    _, k_used = diversity_from_embeddings(emb, labels, 0.1)
    assert k_used.tolist() == [1, 2]
    # k_fraction=1.0 clamps to class size - 1
    _, k_used = diversity_from_embeddings(emb, labels, 1.0)
    assert k_used.tolist() == [4, 19]


def test_diversity_class_too_small():
    table = table_of([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 1.0, 0]], [0, 0, 1])
    with pytest.raises(ClassTooSmall) as err:
        sample_diversity(table, IDENT, k_fraction=0.1)
    assert err.value.label == 1


def test_diversity_k_fraction_range():
    table = table_of([[1.0, 0, 0, 0], [0, 1.0, 0, 0]], [0, 0])
    with pytest.raises(ConfigInvalid):
        sample_diversity(table, IDENT, k_fraction=0.0)


def test_report_uniform_scores_zero_std():
    table = table_of(np.eye(4), [0, 0, 1, 1])
    scores = ScoreVector(sas=np.full(4, 0.5), sds=np.full(4, 2.0))
    report = score_report(scores, table)
    for c in ("0", "1"):
        assert report["per_class"][c]["sas"]["std"] == 0.0
        assert report["per_class"][c]["sds"]["std"] == 0.0


def test_report_single_class():
    table = table_of(np.eye(3), [0, 0, 0])
    scores = ScoreVector(sas=np.array([0.1, 0.2, 0.3]), sds=np.ones(3))
    report = score_report(scores, table)
    assert list(report["per_class"].keys()) == ["0"]


def test_report_byte_identical():
    rng = np.random.default_rng(15)
    table = table_of(rng.normal(size=(12, 4)), rng.integers(0, 3, 12))
    scores = ScoreVector(sas=rng.uniform(-1, 1, 12), sds=rng.uniform(0, 2, 12))
    a = report_json(score_report(scores, table))
    b = report_json(score_report(scores, table))
    assert a.encode() == b.encode()
    json.loads(a)  # stays valid JSON


def test_report_length_mismatch():
    table = table_of(np.eye(3), [0, 0, 0])
    scores = ScoreVector(sas=np.zeros(2), sds=np.zeros(2))
    with pytest.raises(LengthMismatch):
        score_report(scores, table)


def test_scores_round_trip(tmp_path):
    rng = np.random.default_rng(16)
    scores = ScoreVector(sas=rng.uniform(-1, 1, 9), sds=rng.uniform(0, 3, 9))
    path = tmp_path / "s.scr"
    save_scores(scores, path)
    loaded = load_scores(path)
    assert np.array_equal(loaded.sas, scores.sas.astype(np.float32).astype(np.float64))
    assert np.array_equal(loaded.sds, scores.sds.astype(np.float32).astype(np.float64))
    with open(path, "rb") as f:
        assert f.read(4) == b"SCR1"


def test_scores_csv(tmp_path):
    table = table_of(np.eye(3), [0, 1, 0])
    scores = ScoreVector(sas=np.array([0.5, -0.25, 1.0]), sds=np.array([1.0, 2.0, 0.0]))
    path = tmp_path / "s.csv"
    scores_to_csv(scores, table, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "sample_id,label,sas,sds"
    assert lines[1].startswith("s0,0,0.5,")
    assert len(lines) == 4


def test_compute_scores_blend_zero_equals_raw_cosine():
    rng = np.random.default_rng(17)
    n, k, dim = 30, 3, 8
    table = table_of(rng.normal(size=(n, dim)), rng.integers(0, k, n))
    table.labels[:2 * k] = np.repeat(np.arange(k), 2)
    bank = ClassTextBank(
        text_embeddings=rng.normal(size=(k, dim)),
        class_names=[f"c{i}" for i in range(k)],
        prompt_template="p {}",
    )
    zero = init_params(dim, 0.0, rng)
    trained = init_params(dim, 0.0, np.random.default_rng(555))  # different mlp, same blend=0
    a = compute_scores(table, bank, zero, zero)
    b = compute_scores(table, bank, trained, trained)
    assert np.array_equal(a.sas, b.sas)
    assert np.array_equal(a.sds, b.sds)
