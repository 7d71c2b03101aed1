"""Standalone ESB1 writer.

Wire format (all little-endian), kept in sync with the selection engine's
reader; this module is the bridge's own implementation of that contract:

    magic "ESB1" | u32 version=1 | u64 N | u32 dim | u32 K | u8 normalized
    K x (u16 len + utf-8 class name)
    u16 len + utf-8 prompt template
    N x u32 labels
    N x (u16 len + utf-8 sample id)
    N*dim f32 image embeddings (row-major)
    K*dim f32 text embeddings (row-major)
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"ESB1"
VERSION = 1


class WriteError(Exception):
    pass


def _pack_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise WriteError(f"string too long for u16 length prefix: {len(raw)} bytes")
    return struct.pack("<H", len(raw)) + raw


def write_store(
    image_embeddings: np.ndarray,
    labels,
    sample_ids: list[str],
    text_embeddings: np.ndarray,
    class_names: list[str],
    prompt_template: str,
    path,
) -> None:
    """Validate and write one ESB1 file. Embeddings are written raw."""
    img = np.ascontiguousarray(image_embeddings, dtype="<f4")
    txt = np.ascontiguousarray(text_embeddings, dtype="<f4")
    if img.ndim != 2 or txt.ndim != 2:
        raise WriteError("embedding matrices must be 2-D")
    n, dim = img.shape
    k = txt.shape[0]
    if txt.shape[1] != dim:
        raise WriteError(
            f"image dim {dim} != text dim {txt.shape[1]}; refusing to write"
        )
    if n < 1 or dim < 2 or k < 1:
        raise WriteError(f"degenerate store: n={n}, dim={dim}, k={k}")
    if len(sample_ids) != n or len(labels) != n:
        raise WriteError("labels/sample_ids must have one entry per image")
    if len(class_names) != k or len(set(class_names)) != k:
        raise WriteError("class names must be unique, one per text row")
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise WriteError(f"labels must lie in [0, {k})")
    for name, matrix in (("image", img), ("text", txt)):
        if not np.all(np.isfinite(matrix)):
            raise WriteError(f"{name} embeddings contain non-finite values")
        norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
        if np.any(norms == 0.0):
            raise WriteError(f"{name} embeddings contain an all-zero row")

    norms = np.linalg.norm(img.astype(np.float64), axis=1)
    normalized = int(np.all(np.abs(norms - 1.0) < 1e-3))
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<Q", n),
        struct.pack("<I", dim),
        struct.pack("<I", k),
        struct.pack("<B", normalized),
    ]
    for name in class_names:
        parts.append(_pack_string(name))
    parts.append(_pack_string(prompt_template))
    parts.append(np.ascontiguousarray(labels, dtype="<u4").tobytes())
    for sid in sample_ids:
        parts.append(_pack_string(sid))
    parts.append(img.tobytes())
    parts.append(txt.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))
