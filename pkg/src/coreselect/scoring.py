"""Per-sample alignment and diversity scores over adapted embeddings.

Alignment is the cosine between a sample's adapted image embedding and its
class's adapted text embedding. Diversity is the mean L2 distance to the k
nearest same-class neighbors (self excluded), computed by exact per-class
search; distances use raw adapted features unless `normalize` is set.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .adapter import AdapterParams, adapter_forward
from .errors import (
    ClassTooSmall,
    ConfigInvalid,
    DimensionMismatch,
    LengthMismatch,
    MagicMismatch,
    TruncatedFile,
    VersionUnsupported,
)
from .store import ClassTextBank, EmbeddingTable, l2_normalize_rows

SCR_MAGIC = b"SCR1"
SCR_VERSION = 1


@dataclass
class ScoreVector:
    """Alignment (sas) and diversity (sds) per sample, plus per-class k used."""

    sas: np.ndarray  # (n,) in [-1, 1]
    sds: np.ndarray  # (n,) >= 0
    k_used: np.ndarray | None = None  # (k,) neighbor count per class

    @property
    def n(self) -> int:
        return len(self.sas)

    def validate(self) -> None:
        if len(self.sas) != len(self.sds):
            raise LengthMismatch(
                f"sas has {len(self.sas)} entries, sds has {len(self.sds)}"
            )
        if np.any(self.sas < -1.0) or np.any(self.sas > 1.0):
            raise ConfigInvalid("sas values must lie in [-1, 1]")
        if np.any(self.sds < 0.0):
            raise ConfigInvalid("sds values must be non-negative")


def semantic_alignment(
    table: EmbeddingTable,
    bank: ClassTextBank,
    params_i: AdapterParams,
    params_t: AdapterParams,
) -> np.ndarray:
    """Cosine of adapted image rows against their class's adapted text row.

    The adapted text embedding is computed once per class and reused.
    """
    if table.dim != bank.dim:
        raise DimensionMismatch(f"table dim {table.dim} != bank dim {bank.dim}")
    img = l2_normalize_rows(adapter_forward(params_i, table.embeddings))
    txt = l2_normalize_rows(adapter_forward(params_t, bank.text_embeddings))
    sas = np.einsum("ij,ij->i", img, txt[table.labels])
    return np.clip(sas, -1.0, 1.0)


def adapted_image_embeddings(
    table: EmbeddingTable, params_i: AdapterParams, normalize: bool = False
) -> np.ndarray:
    adapted = adapter_forward(params_i, table.embeddings)
    return l2_normalize_rows(adapted) if normalize else adapted


def diversity_from_embeddings(
    adapted: np.ndarray,
    labels: np.ndarray,
    k_fraction: float,
    n_classes: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean distance to k nearest same-class rows; exact search, no self.

    k = max(1, floor(k_fraction * class size)), clamped to class size - 1.
    Distance ties break by ascending sample index. Returns (sds, k_used).
    """
    if not (0.0 < k_fraction <= 1.0):
        raise ConfigInvalid(f"k_fraction must lie in (0, 1], got {k_fraction}")
    labels = np.asarray(labels)
    if len(labels) != adapted.shape[0]:
        raise LengthMismatch("labels and embeddings disagree on sample count")
    k_total = int(n_classes if n_classes is not None else labels.max() + 1)
    sds = np.zeros(adapted.shape[0], dtype=np.float64)
    k_used = np.zeros(k_total, dtype=np.int64)
    for c in range(k_total):
        idx = np.flatnonzero(labels == c)
        m = len(idx)
        if m == 0:
            continue
        if m < 2:
            raise ClassTooSmall(c, m)
        k = min(max(1, math.floor(k_fraction * m)), m - 1)
        k_used[c] = k
        rows = adapted[idx]
        dists = _pairwise_distances(rows)
        np.fill_diagonal(dists, np.inf)
        # stable sort keeps ascending position (= ascending sample index) on ties
        order = np.argsort(dists, axis=1, kind="stable")[:, :k]
        nearest = np.take_along_axis(dists, order, axis=1)
        sds[idx] = nearest.mean(axis=1)
    return sds, k_used


def _pairwise_distances(rows: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Exact L2 distance matrix via explicit differences, row-chunked."""
    m = rows.shape[0]
    out = np.empty((m, m), dtype=np.float64)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        diff = rows[lo:hi, None, :] - rows[None, :, :]
        out[lo:hi] = np.sqrt(np.sum(diff * diff, axis=2))
    return out


def sample_diversity(
    table: EmbeddingTable,
    params_i: AdapterParams,
    k_fraction: float,
    n_classes: int | None = None,
    normalize: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample diversity over adapted image embeddings; see module docstring."""
    adapted = adapted_image_embeddings(table, params_i, normalize=normalize)
    return diversity_from_embeddings(adapted, table.labels, k_fraction, n_classes)


def compute_scores(
    table: EmbeddingTable,
    bank: ClassTextBank,
    params_i: AdapterParams,
    params_t: AdapterParams,
    k_fraction: float = 0.10,
    normalize_diversity: bool = False,
) -> ScoreVector:
    sas = semantic_alignment(table, bank, params_i, params_t)
    sds, k_used = sample_diversity(
        table, params_i, k_fraction, n_classes=bank.k, normalize=normalize_diversity
    )
    return ScoreVector(sas=sas, sds=sds, k_used=k_used)


def _stats(values: np.ndarray) -> dict:
    return {
        "mean": float(values.mean()),
        "std": float(values.std()),
        "min": float(values.min()),
        "max": float(values.max()),
    }


def _histogram(values: np.ndarray, lo: float, hi: float, bins: int = 20) -> dict:
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


def score_report(scores: ScoreVector, table: EmbeddingTable) -> dict:
    """Per-class and overall score statistics, JSON-serializable, deterministic."""
    if scores.n != table.n:
        raise LengthMismatch(
            f"scores cover {scores.n} samples, table has {table.n}"
        )
    sds_hi = float(scores.sds.max()) or 1.0
    per_class = {}
    for c in sorted(set(int(l) for l in table.labels)):
        mask = table.labels == c
        per_class[str(c)] = {
            "count": int(mask.sum()),
            "sas": _stats(scores.sas[mask]),
            "sds": _stats(scores.sds[mask]),
        }
    return {
        "n": table.n,
        "overall": {"sas": _stats(scores.sas), "sds": _stats(scores.sds)},
        "per_class": per_class,
        "histograms": {
            "sas": _histogram(scores.sas, -1.0, 1.0),
            "sds": _histogram(scores.sds, 0.0, sds_hi),
        },
    }


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def save_scores(scores: ScoreVector, path) -> None:
    """SCR1 binary: header, then sas and sds as little-endian f32 arrays."""
    scores.validate()
    parts = [
        SCR_MAGIC,
        struct.pack("<I", SCR_VERSION),
        struct.pack("<Q", scores.n),
        np.ascontiguousarray(scores.sas, dtype="<f4").tobytes(),
        np.ascontiguousarray(scores.sds, dtype="<f4").tobytes(),
    ]
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_scores(path) -> ScoreVector:
    with open(path, "rb") as f:
        data = f.read()
    pos = 0

    def take(count: int) -> bytes:
        nonlocal pos
        if pos + count > len(data):
            raise TruncatedFile(pos, count, len(data) - pos)
        out = data[pos : pos + count]
        pos += count
        return out

    magic = take(4)
    if magic != SCR_MAGIC:
        raise MagicMismatch(SCR_MAGIC, magic)
    version = struct.unpack("<I", take(4))[0]
    if version != SCR_VERSION:
        raise VersionUnsupported(version)
    n = struct.unpack("<Q", take(8))[0]
    sas = np.frombuffer(take(n * 4), dtype="<f4").astype(np.float64)
    sds = np.frombuffer(take(n * 4), dtype="<f4").astype(np.float64)
    scores = ScoreVector(sas=np.clip(sas, -1.0, 1.0), sds=sds)
    scores.validate()
    return scores


def scores_to_csv(scores: ScoreVector, table: EmbeddingTable, path) -> None:
    if scores.n != table.n:
        raise LengthMismatch(
            f"scores cover {scores.n} samples, table has {table.n}"
        )
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "label", "sas", "sds"])
        for i in range(table.n):
            writer.writerow(
                [
                    table.sample_ids[i],
                    int(table.labels[i]),
                    repr(float(scores.sas[i])),
                    repr(float(scores.sds[i])),
                ]
            )
