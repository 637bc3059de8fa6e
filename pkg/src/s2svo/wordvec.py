"""Label-to-vector embedding tables.

Tables are read from the plain word-vector text format (``token c_1 ... c_dim``
per line, optional ``count dim`` header) or synthesized as an orthonormal
control set with no semantic content.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CapacityError,
    DimensionError,
    DuplicateKeyError,
    ParseError,
    UnknownLabelError,
)

log = logging.getLogger(__name__)

DEFAULT_DIM = 300
FIXTURE_PATH = Path(__file__).parent / "data" / "fixture_vectors.txt"


def _normalize(label: str) -> str:
    """Canonical key: lowercase, whitespace runs joined by underscores."""
    return "_".join(label.lower().split())


@dataclass(frozen=True)
class EmbeddingTable:
    """Immutable mapping from lowercase label to a float64 vector of length ``dim``."""

    dim: int
    entries: Mapping[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        if self.dim <= 0:
            raise DimensionError(f"dim must be positive, got {self.dim}")
        frozen: dict[str, np.ndarray] = {}
        for label, vec in self.entries.items():
            key = _normalize(label)
            if not key:
                raise ValueError("labels must be non-empty")
            arr = np.array(vec, dtype=np.float64).reshape(-1)
            if arr.shape[0] != self.dim:
                raise DimensionError(f"{label!r}: expected {self.dim} components, got {arr.shape[0]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{label!r}: non-finite component")
            if key in frozen:
                raise DuplicateKeyError(f"duplicate label {key!r}")
            arr.setflags(write=False)
            frozen[key] = arr
        object.__setattr__(self, "entries", frozen)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, label: object) -> bool:
        return isinstance(label, str) and _normalize(label) in self.entries

    def __getitem__(self, label: str) -> np.ndarray:
        return self.lookup(label)

    @property
    def labels(self) -> list[str]:
        return list(self.entries)

    def lookup(self, label: str) -> np.ndarray:
        key = _normalize(label)
        try:
            return self.entries[key]
        except KeyError:
            raise UnknownLabelError(key) from None

    def subset(self, labels: Iterable[str]) -> "EmbeddingTable":
        return EmbeddingTable(self.dim, {_normalize(l): self.lookup(l) for l in labels})


def _parse_vector(parts: Sequence[str], lineno: int) -> np.ndarray:
    try:
        vec = np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"non-numeric component ({exc})", lineno) from None
    if not np.all(np.isfinite(vec)):
        raise ParseError("non-finite component", lineno)
    return vec


def _is_header(parts: Sequence[str]) -> bool:
    if len(parts) != 2:
        return False
    try:
        int(parts[0]), int(parts[1])
    except ValueError:
        return False
    return True


def load_embeddings(path: str | Path, expected_dim: int | None = None) -> EmbeddingTable:
    """Read a whitespace-delimited word-vector text file.

    Tokens are lowercased on load. An exact repeat of a token raises
    :class:`DuplicateKeyError`; a token that only collides after lowercasing
    keeps its first occurrence (large news-corpus tables list case variants
    by frequency).
    """
    path = Path(path)
    entries: dict[str, np.ndarray] = {}
    raw_seen: set[str] = set()
    dim = expected_dim
    declared = expected_dim is not None
    header_count = None
    first = True
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if first:
                first = False
                if _is_header(parts):
                    header_count, header_dim = int(parts[0]), int(parts[1])
                    if expected_dim is not None and header_dim != expected_dim:
                        raise DimensionError(
                            f"header declares dim {header_dim}, expected {expected_dim}"
                        )
                    dim = header_dim
                    declared = True
                    continue
            token, comps = parts[0], parts[1:]
            if not comps:
                raise ParseError(f"token {token!r} has no components", lineno)
            if dim is None:
                dim = len(comps)
            elif len(comps) != dim:
                if declared:
                    raise DimensionError(f"line {lineno}: got {len(comps)} components, expected {dim}")
                raise ParseError(f"expected {dim} components, got {len(comps)}", lineno)
            vec = _parse_vector(comps, lineno)
            if token in raw_seen:
                raise DuplicateKeyError(f"line {lineno}: duplicate token {token!r}")
            raw_seen.add(token)
            key = token.lower()
            if key in entries:
                log.debug("line %d: case variant %r shadowed by earlier entry", lineno, token)
                continue
            entries[key] = vec
    if dim is None:
        raise ParseError(f"{path}: no vectors found")
    if header_count is not None and header_count != len(raw_seen):
        log.info("%s: header lists %d tokens, file holds %d", path, header_count, len(raw_seen))
    return EmbeddingTable(dim, entries)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Write ``table`` in the text format with a ``count dim`` header.

    Components are written with ``repr`` so a reload is bit-exact.
    """
    lines = [f"{len(table)} {table.dim}"]
    for label, vec in table.entries.items():
        lines.append(label + " " + " ".join(repr(float(c)) for c in vec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def embed_label(table: EmbeddingTable, label: str) -> np.ndarray:
    """Vector for a possibly multi-word label.

    The underscore-joined phrase wins when present ("baseball bat" ->
    ``baseball_bat``); otherwise the per-token vectors are averaged.
    """
    tokens = label.lower().split()
    if not tokens:
        raise ValueError("label must be non-empty")
    phrase = "_".join(tokens)
    if phrase in table.entries:
        return table.entries[phrase]
    vecs = []
    for tok in tokens:
        if tok not in table.entries:
            raise UnknownLabelError(tok, label)
        vecs.append(table.entries[tok])
    if len(vecs) == 1:
        return vecs[0]
    return np.mean(vecs, axis=0)


def make_orthonormal_table(labels: Sequence[str], dim: int = DEFAULT_DIM, seed: int = 0) -> EmbeddingTable:
    """Orthonormal control vectors assigned to ``labels`` in list order.

    Modified Gram-Schmidt over rows of a seeded Gaussian matrix, with one
    re-orthogonalization pass for stability.
    """
    labels = [_normalize(l) for l in labels]
    if len(labels) > dim:
        raise CapacityError(f"{len(labels)} labels cannot be orthonormal in {dim} dimensions")
    if len(set(labels)) != len(labels):
        raise DuplicateKeyError("labels must be distinct")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((len(labels), dim))
    basis: list[np.ndarray] = []
    for row in raw:
        v = row.copy()
        for _ in range(2):
            for b in basis:
                v -= (v @ b) * b
        norm = math.sqrt(float(v @ v))
        if norm < 1e-10:
            raise CapacityError("degenerate draw during orthogonalization")
        basis.append(v / norm)
    return EmbeddingTable(dim, dict(zip(labels, basis)))
