"""Semantics-to-Space blobs.

Every instance's label vector is written into all pixels of its mask, giving
an ``(H, W, l_v)`` blob per object; the per-object blobs are then summed, so
a pixel covered by several objects carries the sum of their vectors.
Blobs are plain float32 ``numpy`` arrays in channels-last layout.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, FormatError
from .maskio import SceneAnnotation
from .wordvec import EmbeddingTable, embed_label

BLOB_DTYPE = np.float32
BLOB_MAGIC = b"S2SB"
BLOB_VERSION = 1


def object_blob(mask: np.ndarray, vector: np.ndarray, dim: int | None = None) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    vector = np.asarray(vector, dtype=np.float64).reshape(-1)
    if mask.ndim != 2:
        raise DimensionError(f"mask must be 2-D, got {mask.shape}")
    if dim is not None and vector.shape[0] != dim:
        raise DimensionError(f"vector has {vector.shape[0]} components, expected {dim}")
    blob = np.zeros(mask.shape + vector.shape, dtype=BLOB_DTYPE)
    blob[mask] = vector
    return blob


def aggregate_blobs(blobs: Sequence[np.ndarray], shape: tuple[int, int, int] | None = None) -> np.ndarray:
    """Element-wise sum of per-object blobs.

    ``shape`` gives the result for an empty list and is checked otherwise.
    """
    if not blobs:
        if shape is None:
            raise DimensionError("shape is required to aggregate an empty blob list")
        return np.zeros(shape, dtype=BLOB_DTYPE)
    ref = blobs[0].shape
    if shape is not None and tuple(shape) != ref:
        raise DimensionError(f"blob shape {ref} does not match requested {tuple(shape)}")
    acc = np.zeros(ref, dtype=np.float64)
    for b in blobs:
        if b.shape != ref:
            raise DimensionError(f"blob shape {b.shape} does not match {ref}")
        acc += b
    return acc.astype(BLOB_DTYPE)


def nearest_indices(src: int, dst: int) -> np.ndarray:
    """Source index for each of ``dst`` output positions (floor scaling)."""
    return (np.arange(dst) * src) // dst


def resize_mask(mask: np.ndarray, out_h: int, out_w: int | None = None) -> np.ndarray:
    """Nearest-neighbour resize; each axis is scaled independently."""
    out_w = out_h if out_w is None else out_w
    h, w = mask.shape
    return mask[np.ix_(nearest_indices(h, out_h), nearest_indices(w, out_w))]


def scene_masks(scene: SceneAnnotation, out_size: int) -> np.ndarray:
    """Resized instance masks stacked as ``(N, out_size, out_size)`` bool."""
    if not scene.instances:
        return np.zeros((0, out_size, out_size), dtype=bool)
    return np.stack([resize_mask(inst.mask, out_size) for inst in scene.instances])


def stamp(masks: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Sum of ``masks[i] (x) vectors[i]``, accumulated in float64 in instance order."""
    n, h, w = masks.shape
    dim = vectors.shape[-1]
    acc = np.zeros((h, w, dim), dtype=np.float64)
    for m, v in zip(masks, vectors):
        acc[m] += v
    return acc.astype(BLOB_DTYPE)


def build_s2s(scene: SceneAnnotation, table: EmbeddingTable, out_size: int = 64) -> np.ndarray:
    """Scene blob of shape ``(out_size, out_size, table.dim)``.

    Stamping is per instance, so two instances of one class double the
    vector where they overlap.
    """
    if out_size <= 0:
        raise DimensionError("out_size must be positive")
    vectors = np.array([embed_label(table, inst.label) for inst in scene.instances], dtype=np.float64)
    if not len(vectors):
        return np.zeros((out_size, out_size, table.dim), dtype=BLOB_DTYPE)
    return stamp(scene_masks(scene, out_size), vectors)


def write_blob(path: str | Path, blob: np.ndarray) -> None:
    if blob.ndim != 3:
        raise DimensionError(f"blob must be 3-D, got {blob.shape}")
    h, w, d = blob.shape
    header = BLOB_MAGIC + struct.pack("<IIII", BLOB_VERSION, h, w, d)
    Path(path).write_bytes(header + np.ascontiguousarray(blob, dtype="<f4").tobytes())


def read_blob(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != BLOB_MAGIC:
        raise FormatError(f"{path}: not an S2SB blob")
    version, h, w, d = struct.unpack_from("<IIII", data, 4)
    if version != BLOB_VERSION:
        raise FormatError(f"{path}: unsupported blob version {version}")
    body = data[20:]
    if len(body) != 4 * h * w * d:
        raise FormatError(f"{path}: expected {4 * h * w * d} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w, d).astype(BLOB_DTYPE)
