"""Regenerate src/s2svo/data/fixture_vectors.txt.

The shipped table stands in for a large pretrained word-vector file. Words
are drawn around shared category centres so that related words (foods,
animals, furniture, ...) are closer to each other than to unrelated ones,
which is the property the semantic stamping relies on. Output is a pure
function of SEED.

    python scripts/make_fixture_vectors.py
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

SEED = 20190707
DIM = 300
SCALE = 2.5  # typical norm of news-corpus vectors

GROUPS = {
    "food": ["apple", "banana", "broccoli", "donut", "carrot", "orange"],
    "animal": ["bird", "cat", "cow", "dog", "giraffe", "horse", "sheep", "elephant"],
    "furniture": ["bed", "bench", "couch", "chair"],
    "vehicle": ["bicycle", "motorcycle", "skateboard", "surfboard"],
    "sports": ["baseball_bat", "frisbee", "sports_ball", "tennis_racket", "skateboard", "surfboard"],
    "kitchen": ["bottle", "cup", "wine_glass", "vase", "knife"],
    "personal": ["book", "cell_phone", "hair_dryer", "handbag", "scissors", "toothbrush"],
}
SUBGROUPS = {
    "pet": ["cat", "dog", "bird"],
    "livestock": ["cow", "sheep", "horse"],
    "wild": ["giraffe", "elephant"],
    "fruit": ["apple", "banana", "orange"],
    "vegetable": ["broccoli", "carrot"],
    "seat": ["bench", "couch", "chair"],
    "board": ["skateboard", "surfboard"],
}
# verbs lean mildly toward the objects they usually take
VERBS = {
    "eat": ["food"],
    "feed": ["animal"],
    "hold": ["personal", "kitchen"],
    "kiss": ["animal"],
    "lie": ["furniture"],
    "ride": ["vehicle", "animal"],
    "sit": ["furniture"],
    "stand": [],
    "wash": ["vehicle", "animal"],
}
EXTRA = ["person", "on"]


def build() -> dict[str, np.ndarray]:
    rng = np.random.default_rng(SEED)
    unit = lambda v: v / np.linalg.norm(v)
    centres = {g: unit(rng.standard_normal(DIM)) for g in list(GROUPS) + list(SUBGROUPS)}

    words: dict[str, np.ndarray] = {}
    objects = sorted({w for ws in GROUPS.values() for w in ws})
    for word in objects:
        groups = [g for g, ws in GROUPS.items() if word in ws]
        subs = [g for g, ws in SUBGROUPS.items() if word in ws]
        vec = 0.8 * np.mean([centres[g] for g in groups], axis=0)
        if subs:
            vec += 0.35 * np.mean([centres[g] for g in subs], axis=0)
        vec += 0.45 * unit(rng.standard_normal(DIM))
        words[word] = SCALE * unit(vec)
    for verb, groups in VERBS.items():
        vec = unit(rng.standard_normal(DIM))
        if groups:
            vec = vec + 0.3 * np.mean([centres[g] for g in groups], axis=0)
        words[verb] = SCALE * unit(vec)
    for word in EXTRA:
        words[word] = SCALE * unit(rng.standard_normal(DIM))
    return words


def main() -> None:
    out = Path(__file__).resolve().parents[1] / "src" / "s2svo" / "data" / "fixture_vectors.txt"
    words = build()
    lines = [f"{len(words)} {DIM}"]
    lines += [w + " " + " ".join(f"{c:.6f}" for c in v) for w, v in words.items()]
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(words)} vectors to {out}")


if __name__ == "__main__":
    main()
