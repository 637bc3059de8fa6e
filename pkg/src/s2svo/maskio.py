"""Per-image instance masks on disk.

Each scene is stored as two files under a root directory:

* ``<image_id>.pgm``: binary 16-bit PGM id map, 0 = background, ``k`` = the
  topmost instance covering the pixel (higher ids are drawn later, so on top).
* ``<image_id>.json``: sidecar with labels, the VO pair and every instance's
  full mask as a row-major run-length encoding ``[start, len, ...]``.

The id map is a convenience view; the RLE is authoritative, which keeps
overlapping instances intact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, DimensionError, FormatError

PGM_MAXVAL = 65535


@dataclass(frozen=True, eq=False)
class InstanceMask:
    label: str
    mask: np.ndarray  # (H, W) bool

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise DimensionError(f"mask must be 2-D, got shape {m.shape}")
        if not m.any():
            raise ValueError(f"instance {self.label!r} has an empty mask")
        if not self.label:
            raise ValueError("instance label must be non-empty")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InstanceMask):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.mask, other.mask)


@dataclass(frozen=True, eq=False)
class SceneAnnotation:
    image_id: str
    width: int
    height: int
    instances: tuple[InstanceMask, ...]
    verb: str
    object: str
    rgb_path: Path | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if self.width <= 0 or self.height <= 0:
            raise DimensionError("scene dimensions must be positive")
        if not self.verb or not self.object:
            raise ValueError("verb and object must be non-empty")
        if not self.image_id or "/" in self.image_id:
            raise ValueError(f"bad image_id {self.image_id!r}")
        for inst in self.instances:
            if inst.mask.shape != (self.height, self.width):
                raise DimensionError(
                    f"{inst.label!r} mask {inst.mask.shape} does not match scene "
                    f"{(self.height, self.width)}"
                )

    @property
    def pair(self) -> tuple[str, str]:
        return (self.verb, self.object)

    def id_map(self) -> np.ndarray:
        """Topmost-instance id per pixel (uint16)."""
        ids = np.zeros((self.height, self.width), dtype=np.uint16)
        for k, inst in enumerate(self.instances, start=1):
            ids[inst.mask] = k
        return ids

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SceneAnnotation):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.width == other.width
            and self.height == other.height
            and self.verb == other.verb
            and self.object == other.object
            and self.instances == other.instances
        )


def rle_encode(mask: np.ndarray) -> list[int]:
    """Row-major runs of True pixels as a flat ``[start, len, ...]`` list."""
    flat = np.asarray(mask, dtype=bool).reshape(-1).astype(np.int8)
    edges = np.diff(np.concatenate(([0], flat, [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    out = np.empty(2 * len(starts), dtype=np.int64)
    out[0::2] = starts
    out[1::2] = ends - starts
    return out.tolist()


def rle_decode(rle: list[int], height: int, width: int) -> np.ndarray:
    if len(rle) % 2:
        raise FormatError("RLE must hold an even number of integers")
    n = height * width
    flat = np.zeros(n, dtype=bool)
    prev_end = 0
    for start, length in zip(rle[0::2], rle[1::2]):
        if not (isinstance(start, int) and isinstance(length, int)):
            raise FormatError("RLE entries must be integers")
        if length <= 0 or start < prev_end or start + length > n:
            raise FormatError(f"bad RLE run ({start}, {length})")
        flat[start : start + length] = True
        prev_end = start + length
    return flat.reshape(height, width)


def write_pgm(path: Path, ids: np.ndarray) -> None:
    h, w = ids.shape
    header = f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii")
    path.write_bytes(header + ids.astype(">u2").tobytes())


def read_pgm(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise FormatError(f"{path}: non-integer PGM header field") from None
    if width <= 0 or height <= 0 or not 0 < maxval <= PGM_MAXVAL:
        raise FormatError(f"{path}: bad PGM header {width}x{height} maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    itemsize = 2 if maxval > 255 else 1
    body = data[pos:]
    if len(body) != width * height * itemsize:
        raise FormatError(f"{path}: expected {width * height * itemsize} data bytes, found {len(body)}")
    dtype = ">u2" if itemsize == 2 else "u1"
    return np.frombuffer(body, dtype=dtype).reshape(height, width).astype(np.uint16)


def _sidecar(scene: SceneAnnotation) -> dict:
    return {
        "image_id": scene.image_id,
        "width": scene.width,
        "height": scene.height,
        "verb": scene.verb,
        "object": scene.object,
        "instances": [
            {"id": k, "label": inst.label, "rle": rle_encode(inst.mask)}
            for k, inst in enumerate(scene.instances, start=1)
        ],
    }


def write_scene(root: str | Path, scene: SceneAnnotation) -> None:
    root = Path(root)
    if len(scene.instances) > PGM_MAXVAL:
        raise ValueError("too many instances for a 16-bit id map")
    write_pgm(root / f"{scene.image_id}.pgm", scene.id_map())
    text = json.dumps(_sidecar(scene), ensure_ascii=False, separators=(",", ":"))
    (root / f"{scene.image_id}.json").write_text(text + "\n", encoding="utf-8")


def read_scene(root: str | Path, image_id: str) -> SceneAnnotation:
    root = Path(root)
    ids = read_pgm(root / f"{image_id}.pgm")
    try:
        meta = json.loads((root / f"{image_id}.json").read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{image_id}.json: {exc}") from None
    try:
        width, height = int(meta["width"]), int(meta["height"])
        records = meta["instances"]
        verb, obj = meta["verb"], meta["object"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{image_id}.json: missing or bad field ({exc})") from None
    if ids.shape != (height, width):
        raise ConsistencyError(f"{image_id}: id map {ids.shape} vs sidecar {(height, width)}")

    sidecar_ids = [r.get("id") for r in records]
    if sidecar_ids != list(range(1, len(records) + 1)):
        raise ConsistencyError(f"{image_id}: sidecar ids {sidecar_ids} are not 1..{len(records)} in order")
    map_ids = set(np.unique(ids).tolist()) - {0}
    stray = map_ids - set(sidecar_ids)
    if stray:
        raise ConsistencyError(f"{image_id}: id map holds ids {sorted(stray)} absent from sidecar")

    instances = []
    for r in records:
        mask = rle_decode(r["rle"], height, width)
        if not mask.any():
            raise ConsistencyError(f"{image_id}: instance {r['id']} has an empty mask")
        instances.append(InstanceMask(r["label"], mask))
    scene = SceneAnnotation(image_id, width, height, tuple(instances), verb, obj)

    # the id map must be exactly what the masks imply, which also catches a
    # sidecar instance that should be visible but is missing from the map
    expected = scene.id_map()
    if not np.array_equal(expected, ids):
        missing = set(np.unique(expected).tolist()) - map_ids - {0}
        what = f"sidecar ids {sorted(missing)} absent from id map" if missing else "id map disagrees with masks"
        raise ConsistencyError(f"{image_id}: {what}")

    rgb = root / f"{image_id}.png"
    if rgb.exists():
        scene = SceneAnnotation(image_id, width, height, scene.instances, verb, obj, rgb_path=rgb)
    return scene
