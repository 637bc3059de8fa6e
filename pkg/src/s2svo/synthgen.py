"""Deterministic synthetic stand-in for a verb-object image dataset.

Each scene holds one ``person`` instance and one object instance. A verb is
realized geometrically: a spatial relation between the two blobs plus the
person's posture (silhouette). Objects are labeled shape families with a size
class. Every scene draws from its own RNG stream keyed by ``(seed, image_id)``
so output never depends on generation order.
"""

from __future__ import annotations

import colorsys
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from .errors import GenerationError, SplitError
from .maskio import InstanceMask, SceneAnnotation, write_scene

RELATIONS = ("above-contact", "overlap-major", "adjacent-side", "beneath-contact")
POSTURES = ("upright", "crouched", "prone")
SHAPES = ("circle", "rectangle", "triangle", "ring")
SIZE_RANGES = {"small": (8, 12), "medium": (12, 17), "large": (17, 23)}
PERSON = "person"
MANIFEST_NAME = "manifest.json"

Pair = tuple[str, str]


@dataclass(frozen=True)
class VerbSpec:
    name: str
    relation: str
    posture: str = "upright"
    person_on_top: bool = False  # draw order; matters only where masks overlap

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation kind {self.relation!r}")
        if self.posture not in POSTURES:
            raise ValueError(f"unknown posture {self.posture!r}")


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    shape: str
    size: str = "medium"

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape family {self.shape!r}")
        if self.size not in SIZE_RANGES:
            raise ValueError(f"unknown size class {self.size!r}")


@dataclass(frozen=True)
class SynthConfig:
    verbs: tuple[VerbSpec, ...]
    objects: tuple[ObjectSpec, ...]
    image_size: int = 64
    samples_per_pair: int = 50
    seed: int = 0
    render_rgb: bool = True

    def __post_init__(self):
        object.__setattr__(self, "verbs", tuple(self.verbs))
        object.__setattr__(self, "objects", tuple(self.objects))
        if not self.verbs or not self.objects:
            raise ValueError("verbs and objects must be non-empty")
        if self.image_size <= 0 or self.samples_per_pair < 0:
            raise ValueError("image_size must be positive and samples_per_pair non-negative")

    def verb(self, name: str) -> VerbSpec:
        for v in self.verbs:
            if v.name == name:
                return v
        raise KeyError(name)

    def object(self, name: str) -> ObjectSpec:
        for o in self.objects:
            if o.name == name:
                return o
        raise KeyError(name)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class VOSplit:
    train_pairs: frozenset[Pair]
    test_pairs: frozenset[Pair]

    def __post_init__(self):
        object.__setattr__(self, "train_pairs", frozenset(map(tuple, self.train_pairs)))
        object.__setattr__(self, "test_pairs", frozenset(map(tuple, self.test_pairs)))
        shared = self.train_pairs & self.test_pairs
        if shared:
            raise SplitError(f"pairs on both sides: {sorted(shared)}")
        unseen = {v for v, _ in self.test_pairs} - {v for v, _ in self.train_pairs}
        if unseen:
            raise SplitError(f"test verbs never seen in training: {sorted(unseen)}")

    @property
    def verbs(self) -> list[str]:
        return sorted({v for v, _ in self.train_pairs | self.test_pairs})

    def side(self, pair: Pair) -> str:
        if pair in self.train_pairs:
            return "train"
        if pair in self.test_pairs:
            return "test"
        raise KeyError(pair)

    def to_dict(self) -> dict:
        return {
            "train": [list(p) for p in sorted(self.train_pairs)],
            "test": [list(p) for p in sorted(self.test_pairs)],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "VOSplit":
        return cls(frozenset(tuple(p) for p in d["train"]), frozenset(tuple(p) for p in d["test"]))


# --- presets -----------------------------------------------------------------

VT60_TRAIN: dict[str, list[str]] = {
    "eat": ["apple", "banana"],
    "feed": ["bird", "cat", "cow"],
    "hold": ["baseball bat", "book", "bottle", "carrot", "cell phone", "cup",
             "frisbee", "hair dryer", "handbag", "knife"],
    "kiss": ["dog", "giraffe", "horse"],
    "lie on": ["bed", "bench"],
    "ride": ["bicycle", "cow", "elephant"],
    "sit on": ["bed", "bench"],
    "stand on": ["bed", "bench"],
    "wash": ["bicycle", "cow", "dog"],
}
VT60_TEST: dict[str, list[str]] = {
    "eat": ["broccoli", "donut"],
    "feed": ["dog", "giraffe", "horse", "sheep"],
    "hold": ["orange", "scissors", "skateboard", "sports ball", "surfboard",
             "tennis racket", "toothbrush", "vase", "wine glass"],
    "kiss": ["bird", "cat", "cow"],
    "lie on": ["couch", "surfboard"],
    "ride": ["horse", "motorcycle", "sheep"],
    "sit on": ["chair", "couch"],
    "stand on": ["chair", "couch"],
    "wash": ["elephant", "horse", "motorcycle"],
}

VT60_VERBS = (
    VerbSpec("eat", "adjacent-side", "crouched"),
    VerbSpec("feed", "adjacent-side", "upright"),
    VerbSpec("hold", "overlap-major", "upright"),
    VerbSpec("kiss", "beneath-contact", "upright"),
    VerbSpec("lie on", "above-contact", "prone"),
    VerbSpec("ride", "overlap-major", "crouched", person_on_top=True),
    VerbSpec("sit on", "above-contact", "crouched"),
    VerbSpec("stand on", "above-contact", "upright"),
    VerbSpec("wash", "beneath-contact", "crouched"),
)

VT60_OBJECTS = (
    ObjectSpec("apple", "circle", "small"),
    ObjectSpec("banana", "triangle", "small"),
    ObjectSpec("broccoli", "triangle", "small"),
    ObjectSpec("donut", "ring", "small"),
    ObjectSpec("carrot", "triangle", "small"),
    ObjectSpec("orange", "circle", "small"),
    ObjectSpec("bird", "triangle", "small"),
    ObjectSpec("cat", "circle", "medium"),
    ObjectSpec("dog", "rectangle", "medium"),
    ObjectSpec("sheep", "circle", "medium"),
    ObjectSpec("cow", "rectangle", "large"),
    ObjectSpec("horse", "rectangle", "large"),
    ObjectSpec("giraffe", "triangle", "large"),
    ObjectSpec("elephant", "circle", "large"),
    ObjectSpec("bed", "rectangle", "large"),
    ObjectSpec("bench", "rectangle", "large"),
    ObjectSpec("couch", "rectangle", "large"),
    ObjectSpec("chair", "rectangle", "medium"),
    ObjectSpec("bicycle", "ring", "large"),
    ObjectSpec("motorcycle", "ring", "large"),
    ObjectSpec("skateboard", "rectangle", "medium"),
    ObjectSpec("surfboard", "rectangle", "large"),
    ObjectSpec("baseball bat", "rectangle", "small"),
    ObjectSpec("frisbee", "circle", "small"),
    ObjectSpec("sports ball", "circle", "small"),
    ObjectSpec("tennis racket", "ring", "medium"),
    ObjectSpec("bottle", "rectangle", "small"),
    ObjectSpec("cup", "rectangle", "small"),
    ObjectSpec("wine glass", "triangle", "small"),
    ObjectSpec("vase", "triangle", "medium"),
    ObjectSpec("knife", "triangle", "small"),
    ObjectSpec("book", "rectangle", "small"),
    ObjectSpec("cell phone", "rectangle", "small"),
    ObjectSpec("hair dryer", "triangle", "medium"),
    ObjectSpec("handbag", "ring", "medium"),
    ObjectSpec("scissors", "ring", "small"),
    ObjectSpec("toothbrush", "rectangle", "small"),
)

CONFUSION_VERBS = ("ride", "wash")
CONFUSION_OBJECTS = ("horse", "cow", "bicycle", "elephant")


def vt60_config(samples_per_pair: int = 50, image_size: int = 64, seed: int = 0) -> SynthConfig:
    return SynthConfig(VT60_VERBS, VT60_OBJECTS, image_size, samples_per_pair, seed)


def vt60_split() -> VOSplit:
    """The published 30/30 train/test split."""
    return VOSplit(
        frozenset((v, o) for v, objs in VT60_TRAIN.items() for o in objs),
        frozenset((v, o) for v, objs in VT60_TEST.items() for o in objs),
    )


def vt60_objects_per_verb() -> dict[str, list[str]]:
    return {v: VT60_TRAIN[v] + VT60_TEST[v] for v in VT60_TRAIN}


def confusion_config(samples_per_pair: int = 100, image_size: int = 64, seed: int = 0) -> SynthConfig:
    verbs = tuple(v for v in VT60_VERBS if v.name in CONFUSION_VERBS)
    objects = tuple(o for o in VT60_OBJECTS if o.name in CONFUSION_OBJECTS)
    return SynthConfig(verbs, objects, image_size, samples_per_pair, seed)


def make_split(verbs: Sequence[str], objects_per_verb: Mapping[str, Sequence[str]], seed: int = 0) -> VOSplit:
    """Split each verb's objects in half, the larger half going to training."""
    rng = np.random.default_rng(seed)
    train, test = set(), set()
    for verb in verbs:
        objs = list(dict.fromkeys(objects_per_verb.get(verb, ())))
        if len(objs) < 2:
            raise SplitError(f"verb {verb!r} needs at least 2 objects, has {len(objs)}")
        order = rng.permutation(len(objs))
        n_train = math.ceil(len(objs) / 2)
        train.update((verb, objs[i]) for i in order[:n_train])
        test.update((verb, objs[i]) for i in order[n_train:])
    return VOSplit(frozenset(train), frozenset(test))


def make_confusion_split(verbs: Sequence[str], objects: Sequence[str], seed: int = 0) -> VOSplit:
    """Cross every object with every verb; each object is seen with one verb.

    Training pairs each object with a single verb (round-robin over a seeded
    object order); all other combinations are held out, so verbs and objects
    are shared between sides but no pair is.
    """
    if len(verbs) < 2 or len(objects) < len(verbs):
        raise SplitError("need at least 2 verbs and no fewer objects than verbs")
    order = np.random.default_rng(seed).permutation(len(objects))
    train, test = set(), set()
    for rank, i in enumerate(order):
        obj = objects[i]
        seen = verbs[rank % len(verbs)]
        train.add((seen, obj))
        test.update((v, obj) for v in verbs if v != seen)
    return VOSplit(frozenset(train), frozenset(test))


# --- geometry ----------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    top: int
    left: int
    bottom: int  # inclusive
    right: int  # inclusive

    @property
    def height(self) -> int:
        return self.bottom - self.top + 1

    @property
    def width(self) -> int:
        return self.right - self.left + 1


def bbox(mask: np.ndarray) -> Box:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return Box(int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1]))


def _interval_overlap(a0: int, a1: int, b0: int, b1: int) -> int:
    return max(0, min(a1, b1) - max(a0, b0) + 1)


def relation_holds(kind: str, person: np.ndarray, obj: np.ndarray) -> bool:
    """Closed-form predicate for each relation kind.

    * above-contact: person's bottom row within 1 of the object's top row,
      column overlap >= 30% of the narrower box.
    * beneath-contact: the mirror image (object resting on the person).
    * adjacent-side: facing edges within 1 column, row overlap >= 30% of the
      shorter box.
    * overlap-major: the shared pixels make up at least half of the smaller
      of the two masks.

    The three contact kinds also require that overlap to stay below half,
    which makes all four mutually exclusive.
    """
    p, o = bbox(person), bbox(obj)
    covered = np.logical_and(person, obj).sum() / min(person.sum(), obj.sum())
    if kind == "overlap-major":
        return bool(covered >= 0.5)
    if covered >= 0.5:
        return False
    h_frac = _interval_overlap(p.left, p.right, o.left, o.right) / min(p.width, o.width)
    v_frac = _interval_overlap(p.top, p.bottom, o.top, o.bottom) / min(p.height, o.height)
    if kind == "above-contact":
        return abs(p.bottom - o.top) <= 1 and h_frac >= 0.3
    if kind == "beneath-contact":
        return abs(o.bottom - p.top) <= 1 and h_frac >= 0.3
    if kind == "adjacent-side":
        side = abs(p.right - o.left) <= 1 or abs(o.right - p.left) <= 1
        return side and v_frac >= 0.3
    raise ValueError(f"unknown relation kind {kind!r}")


def _disk(h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    return ((yy - cy) / (h / 2)) ** 2 + ((xx - cx) / (w / 2)) ** 2 <= 1.0


def shape_mask(shape: str, h: int, w: int) -> np.ndarray:
    if shape == "rectangle":
        return np.ones((h, w), dtype=bool)
    if shape == "circle":
        return _disk(h, w)
    if shape == "ring":
        outer = _disk(h, w)
        ih, iw = max(1, h // 2), max(1, w // 2)
        inner = np.zeros_like(outer)
        t, l = (h - ih) // 2, (w - iw) // 2
        inner[t : t + ih, l : l + iw] = _disk(ih, iw)
        return outer & ~inner
    if shape == "triangle":
        yy, xx = np.mgrid[0:h, 0:w]
        half = (yy + 1) / h * (w / 2)
        return np.abs(xx - (w - 1) / 2) <= half
    raise ValueError(f"unknown shape {shape!r}")


def person_mask(posture: str, rng: np.random.Generator) -> np.ndarray:
    """Head disk plus body rectangle; returns a tight local canvas."""
    if posture == "upright":
        h, w = int(rng.integers(22, 29)), int(rng.integers(7, 10))
        head = w
        m = np.zeros((h, w), dtype=bool)
        m[:head, :] = _disk(head, w)
        m[head - 1 :, 1 : w - 1] = True
    elif posture == "crouched":
        h, w = int(rng.integers(14, 19)), int(rng.integers(10, 14))
        head = int(rng.integers(6, 8))
        m = np.zeros((h, w), dtype=bool)
        hl = (w - head) // 2
        m[:head, hl : hl + head] = _disk(head, head)
        m[head - 1 :, :] = True
        m[h - 3 :, w // 2 - 1 : w // 2 + 1] = False  # gap between the knees
    elif posture == "prone":
        h, w = int(rng.integers(7, 10)), int(rng.integers(22, 29))
        head = h
        m = np.zeros((h, w), dtype=bool)
        m[:, :head] = _disk(h, head)
        m[1 : h - 1, head - 1 :] = True
    else:
        raise ValueError(f"unknown posture {posture!r}")
    return m


def object_mask(spec: ObjectSpec, rng: np.random.Generator) -> np.ndarray:
    lo, hi = SIZE_RANGES[spec.size]
    s = int(rng.integers(lo, hi + 1))
    if spec.shape == "rectangle":
        aspect = float(rng.uniform(0.45, 1.0))
        if rng.random() < 0.5:
            h, w = max(7, round(s * aspect)), s
        else:
            h, w = s, max(7, round(s * aspect))
    elif spec.shape == "triangle":
        h, w = max(7, round(s * float(rng.uniform(0.8, 1.1)))), s
    else:
        h = w = s
    return shape_mask(spec.shape, h, w)


def _relative_offset(kind: str, pm: np.ndarray, om: np.ndarray, rng: np.random.Generator) -> tuple[int, int]:
    """Object top-left relative to the person's top-left."""
    ph, pw = pm.shape
    oh, ow = om.shape
    if kind in ("above-contact", "beneath-contact"):
        # centres within a fraction of the narrower width keep column overlap high
        slack = max(0, (pw + ow) // 2 - max(3, math.ceil(0.45 * min(pw, ow))))
        dx = int(rng.integers(-slack, slack + 1)) if slack else 0
        left = (pw - ow) // 2 + dx
        top = ph if kind == "above-contact" else -oh
        return top, left
    if kind == "adjacent-side":
        bottom_jitter = int(rng.integers(-2, 3))
        top = ph - oh + bottom_jitter
        left = pw if rng.random() < 0.5 else -ow
        return top, left
    if kind == "overlap-major":
        dy = int(rng.integers(-max(1, ph // 4), max(1, ph // 4) + 1))
        dx = int(rng.integers(-max(1, pw // 4), max(1, pw // 4) + 1))
        return (ph - oh) // 2 + dy, (pw - ow) // 2 + dx
    raise ValueError(f"unknown relation kind {kind!r}")


def compose_scene(
    verb: VerbSpec, obj: ObjectSpec, size: int, rng: np.random.Generator, attempts: int = 200
) -> tuple[np.ndarray, np.ndarray]:
    """Person and object masks satisfying exactly the verb's relation kind."""
    for _ in range(attempts):
        pm = person_mask(verb.posture, rng)
        om = object_mask(obj, rng)
        oy, ox = _relative_offset(verb.relation, pm, om, rng)
        top, left = min(0, oy), min(0, ox)
        bottom = max(pm.shape[0], oy + om.shape[0])
        right = max(pm.shape[1], ox + om.shape[1])
        span_h, span_w = bottom - top, right - left
        if span_h > size - 2 or span_w > size - 2:
            continue
        gy = int(rng.integers(1, size - span_h)) - top
        gx = int(rng.integers(1, size - span_w)) - left
        person = np.zeros((size, size), dtype=bool)
        person[gy : gy + pm.shape[0], gx : gx + pm.shape[1]] = pm
        thing = np.zeros((size, size), dtype=bool)
        thing[gy + oy : gy + oy + om.shape[0], gx + ox : gx + ox + om.shape[1]] = om
        if all(relation_holds(k, person, thing) == (k == verb.relation) for k in RELATIONS):
            return person, thing
    raise GenerationError(
        f"could not place {obj.name!r} for relation {verb.relation!r} in a {size}x{size} image"
    )


# --- rendering ---------------------------------------------------------------

def _label_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def _class_style(label: str) -> tuple[np.ndarray, int]:
    h = _label_hash(label)
    hue = (h % 360) / 360.0
    rgb = np.array(colorsys.hsv_to_rgb(hue, 0.55 + 0.4 * ((h >> 12) % 100) / 100, 0.85))
    return rgb, (h >> 24) % 4


def _pattern(kind: int, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == 0:
        return np.ones((h, w))
    if kind == 1:
        return np.where((yy // 2) % 2 == 0, 1.0, 0.6)
    if kind == 2:
        return np.where((xx // 2) % 2 == 0, 1.0, 0.6)
    return np.where(((yy // 2) + (xx // 2)) % 2 == 0, 1.0, 0.6)


def render_rgb(scene: SceneAnnotation, rng: np.random.Generator) -> np.ndarray:
    """uint8 ``(H, W, 3)`` image: cluttered background, instances drawn in order."""
    h, w = scene.height, scene.width
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
    t = (yy * rng.uniform(-1, 1) + xx * rng.uniform(-1, 1))[..., None]
    img = c0 + (c1 - c0) * (t - t.min()) / max(float(np.ptp(t)), 1e-9)
    for _ in range(int(rng.integers(2, 5))):
        bh, bw = int(rng.integers(4, h // 3)), int(rng.integers(4, w // 3))
        y0, x0 = int(rng.integers(0, h - bh)), int(rng.integers(0, w - bw))
        img[y0 : y0 + bh, x0 : x0 + bw] = rng.uniform(0.1, 0.9, 3)
    for inst in scene.instances:
        color, kind = _class_style(inst.label)
        shade = _pattern(kind, h, w)[..., None] * color * rng.uniform(0.85, 1.0)
        img = np.where(inst.mask[..., None], shade, img)
    img = img + rng.normal(0.0, 0.04, img.shape)
    return (np.clip(img, 0.0, 1.0) * 255).round().astype(np.uint8)


# --- dataset -----------------------------------------------------------------

def _slug(text: str) -> str:
    return "-".join(text.split())


def image_id_for(pair: Pair, index: int) -> str:
    return f"{_slug(pair[0])}__{_slug(pair[1])}__{index:03d}"


def scene_rng(seed: int, image_id: str) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, _label_hash(image_id)])


def make_scene(config: SynthConfig, pair: Pair, index: int) -> tuple[SceneAnnotation, np.random.Generator]:
    image_id = image_id_for(pair, index)
    rng = scene_rng(config.seed, image_id)
    verb = config.verb(pair[0])
    person, thing = compose_scene(verb, config.object(pair[1]), config.image_size, rng)
    instances = (InstanceMask(PERSON, person), InstanceMask(pair[1], thing))
    if verb.person_on_top:
        instances = instances[::-1]
    n = config.image_size
    scene = SceneAnnotation(image_id, n, n, instances, pair[0], pair[1])
    return scene, rng


def generate_dataset(config: SynthConfig, split: VOSplit, out_root: str | Path) -> list[dict]:
    """Write every scene of ``split`` under ``out_root`` and return the manifest.

    Files: one maskio scene (+ PNG rendering) per sample, ``manifest.json``
    listing ``{image_id, verb, object, split}`` and ``split.json``.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    manifest: list[dict] = []
    for side, pairs in (("train", split.train_pairs), ("test", split.test_pairs)):
        for pair in sorted(pairs):
            for i in range(config.samples_per_pair):
                scene, rng = make_scene(config, pair, i)
                write_scene(out_root, scene)
                if config.render_rgb:
                    Image.fromarray(render_rgb(scene, rng)).save(
                        out_root / f"{scene.image_id}.png", format="PNG"
                    )
                manifest.append({"image_id": scene.image_id, "verb": pair[0], "object": pair[1], "split": side})
    write_manifest(out_root / MANIFEST_NAME, manifest)
    (out_root / "split.json").write_text(json.dumps(split.to_dict(), indent=1) + "\n", encoding="utf-8")
    return manifest


def write_manifest(path: str | Path, manifest: Iterable[dict]) -> None:
    Path(path).write_text(json.dumps(list(manifest), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return json.loads(path.read_text(encoding="utf-8"))


def read_split(root: str | Path) -> VOSplit:
    return VOSplit.from_dict(json.loads((Path(root) / "split.json").read_text(encoding="utf-8")))
