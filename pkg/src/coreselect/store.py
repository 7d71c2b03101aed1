"""On-disk and in-memory embedding store.

The ESB1 file is a single self-describing little-endian binary:

    magic "ESB1" | u32 version=1 | u64 N | u32 dim | u32 K | u8 normalized
    K x (u16 len + utf-8 class name)
    u16 len + utf-8 prompt template
    N x u32 labels
    N x (u16 len + utf-8 sample id)
    N*dim f32 image embeddings (row-major)
    K*dim f32 text embeddings (row-major)

Embeddings are stored raw; normalization happens at use sites.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    LabelOutOfRange,
    MagicMismatch,
    NonFiniteValue,
    TrailingBytes,
    TruncatedFile,
    VersionUnsupported,
    ZeroNormRow,
)

MAGIC = b"ESB1"
VERSION = 1


@dataclass
class EmbeddingTable:
    """N image embeddings with integer class labels and opaque sample ids."""

    embeddings: np.ndarray  # (n, dim) float32
    labels: np.ndarray  # (n,) int
    sample_ids: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def validate(self) -> None:
        if self.embeddings.ndim != 2:
            raise DimensionMismatch("embeddings must be a 2-D matrix")
        if self.n < 1:
            raise DimensionMismatch("table needs at least one sample")
        if self.dim < 2:
            raise DimensionMismatch("embedding dim must be >= 2")
        if len(self.labels) != self.n or len(self.sample_ids) != self.n:
            raise DimensionMismatch(
                f"labels/sample_ids length must equal n={self.n}"
            )
        _check_rows(self.embeddings, "image embeddings")
        if np.any(self.labels < 0):
            row = int(np.argmax(self.labels < 0))
            raise LabelOutOfRange(row, int(self.labels[row]), 0)

    def slice(self, indices: np.ndarray) -> "EmbeddingTable":
        """Row subset preserving labels and ids (used for mini-batches)."""
        return EmbeddingTable(
            embeddings=self.embeddings[indices],
            labels=self.labels[indices],
            sample_ids=[self.sample_ids[i] for i in np.asarray(indices)],
        )


@dataclass
class ClassTextBank:
    """K class-level text embeddings, one per category prompt."""

    text_embeddings: np.ndarray  # (k, dim) float32
    class_names: list[str]
    prompt_template: str

    @property
    def k(self) -> int:
        return self.text_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.text_embeddings.shape[1]

    def validate(self) -> None:
        if self.text_embeddings.ndim != 2:
            raise DimensionMismatch("text embeddings must be a 2-D matrix")
        if self.k < 1:
            raise DimensionMismatch("bank needs at least one class")
        if len(self.class_names) != self.k:
            raise DimensionMismatch(f"need exactly {self.k} class names")
        if len(set(self.class_names)) != self.k:
            raise DimensionMismatch("class names must be unique")
        _check_rows(self.text_embeddings, "text embeddings")


def _check_rows(matrix: np.ndarray, where: str) -> None:
    finite = np.isfinite(matrix).all(axis=1)
    if not finite.all():
        raise NonFiniteValue(where, int(np.argmin(finite)))
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    if np.any(norms == 0.0):
        raise ZeroNormRow(int(np.argmax(norms == 0.0)))


def validate_pair(table: EmbeddingTable, bank: ClassTextBank) -> None:
    """Full invariant check for a table/bank pair."""
    table.validate()
    bank.validate()
    if table.dim != bank.dim:
        raise DimensionMismatch(
            f"table dim {table.dim} != bank dim {bank.dim}"
        )
    bad = table.labels >= bank.k
    if np.any(bad):
        row = int(np.argmax(bad))
        raise LabelOutOfRange(row, int(table.labels[row]), bank.k)


def l2_normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Scale every row to unit L2 norm (float64 output).

    Raises ZeroNormRow naming the first offending row.
    """
    m = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0.0):
        raise ZeroNormRow(int(np.argmax(norms == 0.0)))
    return m / norms[:, None]


class _Reader:
    """Byte cursor that raises TruncatedFile with exact offsets."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise TruncatedFile(self.pos, count, len(self.data) - self.pos)
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        length = self.u16()
        return self.take(length).decode("utf-8")

    def f32_matrix(self, rows: int, cols: int) -> np.ndarray:
        raw = self.take(rows * cols * 4)
        return np.frombuffer(raw, dtype="<f4").reshape(rows, cols).copy()

    def u32_array(self, count: int) -> np.ndarray:
        raw = self.take(count * 4)
        return np.frombuffer(raw, dtype="<u4").astype(np.int64)


def _pack_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"string too long for u16 length prefix: {len(raw)} bytes")
    return struct.pack("<H", len(raw)) + raw


def save_store(table: EmbeddingTable, bank: ClassTextBank, path) -> None:
    """Write a validated table/bank pair as an ESB1 file."""
    validate_pair(table, bank)
    img = np.ascontiguousarray(table.embeddings, dtype="<f4")
    txt = np.ascontiguousarray(bank.text_embeddings, dtype="<f4")
    norms = np.linalg.norm(img.astype(np.float64), axis=1)
    normalized = int(np.all(np.abs(norms - 1.0) < 1e-3))

    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<Q", table.n),
        struct.pack("<I", table.dim),
        struct.pack("<I", bank.k),
        struct.pack("<B", normalized),
    ]
    for name in bank.class_names:
        parts.append(_pack_string(name))
    parts.append(_pack_string(bank.prompt_template))
    parts.append(np.ascontiguousarray(table.labels, dtype="<u4").tobytes())
    for sid in table.sample_ids:
        parts.append(_pack_string(sid))
    parts.append(img.tobytes())
    parts.append(txt.tobytes())

    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read_header(path) -> dict:
    """Parse just the fixed header of an ESB1 file (for inspection)."""
    with open(path, "rb") as f:
        data = f.read(25)
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise MagicMismatch(MAGIC, magic)
    version = r.u32()
    if version != VERSION:
        raise VersionUnsupported(version)
    return {
        "version": version,
        "n": r.u64(),
        "dim": r.u32(),
        "k": r.u32(),
        "normalized": bool(r.u8()),
    }


def load_store(path) -> tuple[EmbeddingTable, ClassTextBank]:
    """Load and fully validate an ESB1 file."""
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise MagicMismatch(MAGIC, magic)
    version = r.u32()
    if version != VERSION:
        raise VersionUnsupported(version)
    n = r.u64()
    dim = r.u32()
    k = r.u32()
    r.u8()  # normalized flag, informational only

    class_names = [r.string() for _ in range(k)]
    prompt_template = r.string()
    labels = r.u32_array(n)
    sample_ids = [r.string() for _ in range(n)]
    img = r.f32_matrix(n, dim)
    txt = r.f32_matrix(k, dim)
    if r.pos != len(data):
        raise TrailingBytes(r.pos, len(data) - r.pos)

    table = EmbeddingTable(embeddings=img, labels=labels, sample_ids=sample_ids)
    bank = ClassTextBank(
        text_embeddings=txt, class_names=class_names, prompt_template=prompt_template
    )
    validate_pair(table, bank)
    return table, bank
