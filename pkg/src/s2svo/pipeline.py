"""Turning stored scenes into network inputs for each input mode."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import ConfigurationError, DimensionError
from .maskio import SceneAnnotation, read_scene
from .s2s import BLOB_DTYPE, nearest_indices, scene_masks, stamp
from .synthgen import PERSON, read_manifest
from .wordvec import EmbeddingTable, embed_label, make_orthonormal_table

RGB_MEAN = 0.5
RGB_STD = 0.25


def rgb_input(scene: SceneAnnotation, out_size: int) -> np.ndarray:
    """Normalized float32 ``(out_size, out_size, 3)`` image."""
    if scene.rgb_path is None:
        raise FileNotFoundError(f"{scene.image_id}: no RGB rendering on disk")
    img = np.asarray(Image.open(scene.rgb_path).convert("RGB"))
    h, w, _ = img.shape
    img = img[np.ix_(nearest_indices(h, out_size), nearest_indices(w, out_size))]
    return ((img.astype(np.float32) / 255.0 - RGB_MEAN) / RGB_STD).astype(np.float32)


def orthovec_table(labels: Iterable[str], dim: int, seed: int) -> EmbeddingTable:
    """Orthonormal stand-ins for every visual label (sorted, ``person`` included)."""
    return make_orthonormal_table(sorted(set(labels) | {PERSON}), dim, seed)


def visual_labels(manifest: Sequence[dict]) -> list[str]:
    return sorted({e["object"] for e in manifest} | {PERSON})


class InputBuilder:
    """Builds V-Net inputs for image ids, caching parsed scenes.

    ``visual_table`` supplies the stamped vectors (word vectors for ``s2s``,
    orthonormal vectors for ``orthovec2s``); it is unused for ``rgb``.
    """

    def __init__(self, root: str | Path, mode: str, visual_table: EmbeddingTable | None, out_size: int = 64):
        if mode not in ("rgb", "s2s", "orthovec2s"):
            raise ConfigurationError(f"unknown input mode {mode!r}")
        if mode != "rgb" and visual_table is None:
            raise ConfigurationError(f"{mode} input needs a visual embedding table")
        self.root = Path(root)
        self.mode = mode
        self.table = visual_table
        self.out_size = out_size
        self._scenes: dict[str, SceneAnnotation] = {}
        self._stamps: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._rgb: dict[str, np.ndarray] = {}

    @property
    def channels(self) -> int:
        return 3 if self.mode == "rgb" else self.table.dim

    def scene(self, image_id: str) -> SceneAnnotation:
        if image_id not in self._scenes:
            self._scenes[image_id] = read_scene(self.root, image_id)
        return self._scenes[image_id]

    def one(self, image_id: str) -> np.ndarray:
        if self.mode == "rgb":
            if image_id not in self._rgb:
                self._rgb[image_id] = rgb_input(self.scene(image_id), self.out_size)
            return self._rgb[image_id]
        if image_id not in self._stamps:
            scene = self.scene(image_id)
            vecs = np.array([embed_label(self.table, i.label) for i in scene.instances], dtype=np.float64)
            self._stamps[image_id] = (scene_masks(scene, self.out_size), vecs.reshape(-1, self.table.dim))
        masks, vecs = self._stamps[image_id]
        return stamp(masks, vecs)

    def __call__(self, image_ids: Sequence[str]) -> np.ndarray:
        if not image_ids:
            return np.zeros((0, self.out_size, self.out_size, self.channels), dtype=BLOB_DTYPE)
        return np.stack([self.one(i) for i in image_ids])


def make_input_builder(
    root: str | Path,
    mode: str,
    word_table: EmbeddingTable,
    out_size: int = 64,
    ortho_seed: int = 0,
    manifest: Sequence[dict] | None = None,
) -> InputBuilder:
    if mode == "orthovec2s":
        manifest = read_manifest(root) if manifest is None else manifest
        return InputBuilder(root, mode, orthovec_table(visual_labels(manifest), word_table.dim, ortho_seed), out_size)
    return InputBuilder(root, mode, None if mode == "rgb" else word_table, out_size)


def query_vectors(table: EmbeddingTable, pairs: Sequence[tuple[str, str]]) -> tuple[np.ndarray, np.ndarray]:
    """Stacked verb and object vectors for a list of pairs."""
    if not pairs:
        raise DimensionError("no query pairs given")
    verbs = np.array([embed_label(table, v) for v, _ in pairs])
    objs = np.array([embed_label(table, o) for _, o in pairs])
    return verbs, objs
