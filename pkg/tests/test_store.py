import os

import numpy as np
import pytest

from coreselect.errors import (
    DimensionMismatch,
    LabelOutOfRange,
    MagicMismatch,
    NonFiniteValue,
    TrailingBytes,
    TruncatedFile,
    VersionUnsupported,
    ZeroNormRow,
)
from coreselect.store import (
    ClassTextBank,
    EmbeddingTable,
    l2_normalize_rows,
    load_store,
    read_header,
    save_store,
)

HERE = os.path.dirname(__file__)


def make_pair(n=6, dim=4, k=2, seed=0):
    rng = np.random.default_rng(seed)
    table = EmbeddingTable(
        embeddings=rng.normal(size=(n, dim)).astype(np.float32),
        labels=rng.integers(0, k, size=n).astype(np.int64),
        sample_ids=[f"s{i:03d}" for i in range(n)],
    )
    bank = ClassTextBank(
        text_embeddings=rng.normal(size=(k, dim)).astype(np.float32),
        class_names=[f"class{i}" for i in range(k)],
        prompt_template="A photo of {}",
    )
    return table, bank


def test_round_trip_is_identity(tmp_path):
    table, bank = make_pair(n=2, dim=4, k=2)
    path = tmp_path / "mini.esb"
    save_store(table, bank, path)
    t2, b2 = load_store(path)
    assert t2.n == 2 and b2.k == 2
    assert np.array_equal(t2.embeddings, table.embeddings)
    assert np.array_equal(t2.labels, table.labels)
    assert t2.sample_ids == table.sample_ids
    assert np.array_equal(b2.text_embeddings, bank.text_embeddings)
    assert b2.class_names == bank.class_names
    assert b2.prompt_template == bank.prompt_template


def test_file_starts_with_magic(tmp_path):
    table, bank = make_pair()
    path = tmp_path / "w.esb"
    save_store(table, bank, path)
    with open(path, "rb") as f:
        assert f.read(4) == b"ESB1"


def test_label_out_of_range_names_row(tmp_path):
    table, bank = make_pair(n=5, k=3)
    table.labels[3] = 7
    with pytest.raises(LabelOutOfRange) as err:
        save_store(table, bank, tmp_path / "w.esb")
    assert err.value.row == 3 and err.value.label == 7


def test_label_out_of_range_on_load(tmp_path):
    table, bank = make_pair(n=5, k=3)
    path = tmp_path / "w.esb"
    save_store(table, bank, path)
    data = bytearray(path.read_bytes())
    # labels sit right after the header, class names and prompt
    offset = 25 + sum(2 + len(name) for name in bank.class_names)
    offset += 2 + len(bank.prompt_template)
    data[offset : offset + 4] = (7).to_bytes(4, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(LabelOutOfRange) as err:
        load_store(path)
    assert err.value.row == 0 and err.value.label == 7


def test_truncated_file(tmp_path):
    table, bank = make_pair()
    path = tmp_path / "w.esb"
    save_store(table, bank, path)
    data = path.read_bytes()
    cut = tmp_path / "cut.esb"
    cut.write_bytes(data[: len(data) - 10])  # chop mid-matrix
    with pytest.raises(TruncatedFile) as err:
        load_store(cut)
    assert err.value.offset >= 0


def test_magic_mismatch(tmp_path):
    path = tmp_path / "bad.esb"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(MagicMismatch):
        load_store(path)


def test_version_unsupported(tmp_path):
    table, bank = make_pair()
    path = tmp_path / "w.esb"
    save_store(table, bank, path)
    data = bytearray(path.read_bytes())
    data[4] = 9  # version field
    path.write_bytes(bytes(data))
    with pytest.raises(VersionUnsupported):
        load_store(path)


def test_trailing_bytes_rejected(tmp_path):
    table, bank = make_pair()
    path = tmp_path / "w.esb"
    save_store(table, bank, path)
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(TrailingBytes):
        load_store(path)


def test_nan_rejected_on_save_and_load(tmp_path):
    table, bank = make_pair()
    table.embeddings[1, 2] = np.nan
    with pytest.raises(NonFiniteValue) as err:
        save_store(table, bank, tmp_path / "w.esb")
    assert err.value.row == 1

    # corrupt a stored float directly: first image embedding bytes
    table, bank = make_pair()
    path = tmp_path / "ok.esb"
    save_store(table, bank, path)
    data = bytearray(path.read_bytes())
    offset = len(data) - (table.n * table.dim + bank.k * bank.dim) * 4
    data[offset : offset + 4] = np.float32(np.inf).tobytes()
    path.write_bytes(bytes(data))
    with pytest.raises(NonFiniteValue):
        load_store(path)


def test_zero_norm_row_rejected_before_write(tmp_path):
    table, bank = make_pair()
    table.embeddings[4] = 0.0
    with pytest.raises(ZeroNormRow) as err:
        save_store(table, bank, tmp_path / "w.esb")
    assert err.value.row == 4


def test_duplicate_class_names_rejected(tmp_path):
    table, bank = make_pair(k=3)
    bank.class_names[2] = bank.class_names[0]
    with pytest.raises(DimensionMismatch):
        save_store(table, bank, tmp_path / "w.esb")


def test_dim_mismatch_rejected(tmp_path):
    table, _ = make_pair(dim=4)
    _, bank = make_pair(dim=6)
    with pytest.raises(DimensionMismatch):
        save_store(table, bank, tmp_path / "w.esb")


def test_l2_normalize_rows_345_triangle():
    out = l2_normalize_rows(np.array([[3.0, 4.0]]))
    assert np.allclose(out, [[0.6, 0.8]], atol=1e-12)
    norms = np.linalg.norm(out, axis=1)
    assert np.all(np.abs(norms - 1.0) < 1e-6)


def test_l2_normalize_rows_idempotent():
    rng = np.random.default_rng(7)
    m = rng.normal(size=(10, 5))
    once = l2_normalize_rows(m)
    twice = l2_normalize_rows(once)
    assert np.max(np.abs(once - twice)) < 1e-7


def test_l2_normalize_zero_row_raises():
    m = np.array([[1.0, 2.0], [0.0, 0.0]])
    with pytest.raises(ZeroNormRow) as err:
        l2_normalize_rows(m)
    assert err.value.row == 1


def test_golden_file_loads_identically():
    """The checked-in fixture must parse to these exact values on any host."""
    table, bank = load_store(os.path.join(HERE, "data", "golden.esb"))
    assert table.n == 3 and table.dim == 4 and bank.k == 2
    expected_img = np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.5, 0.5, 0.25, 0.125],
        ],
        dtype=np.float32,
    )
    expected_txt = np.array(
        [[3.0, 4.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]], dtype=np.float32
    )
    assert np.array_equal(table.embeddings, expected_img)
    assert np.array_equal(bank.text_embeddings, expected_txt)
    assert table.labels.tolist() == [0, 1, 0]
    assert table.sample_ids == ["img/a.png", "img/b.png", "img/c.png"]
    assert bank.class_names == ["cat", "dog"]
    assert bank.prompt_template == "A photo of {}"


def test_read_header(tmp_path):
    table, bank = make_pair(n=9, dim=5, k=4)
    path = tmp_path / "w.esb"
    save_store(table, bank, path)
    header = read_header(path)
    assert header == {
        "version": 1,
        "n": 9,
        "dim": 5,
        "k": 4,
        "normalized": False,
    }


def test_save_is_deterministic(tmp_path):
    table, bank = make_pair(seed=3)
    a, b = tmp_path / "a.esb", tmp_path / "b.esb"
    save_store(table, bank, a)
    save_store(table, bank, b)
    assert a.read_bytes() == b.read_bytes()
