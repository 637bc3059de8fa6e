"""Zero-shot evaluation protocols and feature analysis.

A *scorer* is any callable ``scorer(image_id, candidates) -> scores`` giving
one closeness value per candidate ``(verb, object)`` pair; protocols take the
argmax. :class:`ModelScorer` wraps a trained network, and the oracle/random
scorers are reference points.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from .errors import ConfigurationError, ProtocolError
from .model import TwoStreamModel
from .pipeline import InputBuilder, query_vectors
from .synthgen import Pair
from .wordvec import EmbeddingTable

log = logging.getLogger(__name__)

Scorer = Callable[[str, Sequence[Pair]], np.ndarray]
FEATURE_KINDS = ("vnet", "qnet", "concat_matched", "concat_unmatched")


@dataclass
class EvalReport:
    protocol: str
    accuracy: float
    hits: int
    total: int
    per_class: dict[str, dict[str, int]]
    records: list[dict] = field(repr=False)

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


def pair_key(pair: Pair) -> str:
    return f"{pair[0]}:{pair[1]}"


def _run_protocol(
    protocol: str,
    scorer: Scorer,
    entries: Sequence[Mapping],
    candidates_for: Callable[[Pair], list[Pair]],
    is_hit: Callable[[Pair, Pair], bool],
) -> EvalReport:
    per_class: dict[str, dict[str, int]] = {}
    records = []
    hits = 0
    for e in entries:
        truth = (e["verb"], e["object"])
        cands = candidates_for(truth)
        scores = np.asarray(scorer(e["image_id"], cands), dtype=np.float64).reshape(-1)
        if scores.shape[0] != len(cands):
            raise ProtocolError(f"scorer returned {scores.shape[0]} scores for {len(cands)} candidates")
        pred = cands[int(np.argmax(scores))]  # first maximum wins ties
        hit = is_hit(pred, truth)
        hits += hit
        cls = per_class.setdefault(pair_key(truth), {"hits": 0, "total": 0})
        cls["hits"] += int(hit)
        cls["total"] += 1
        records.append({
            "image_id": e["image_id"],
            "truth": list(truth),
            "predicted": list(pred),
            "scores": [{"verb": v, "object": o, "score": float(s)} for (v, o), s in zip(cands, scores)],
        })
    total = len(records)
    return EvalReport(protocol, hits / total if total else 0.0, hits, total, dict(sorted(per_class.items())), records)


def verb_transfer_eval(scorer: Scorer, entries: Sequence[Mapping], verb_set: Sequence[str]) -> EvalReport:
    """Per image, query every verb with the image's own object; hit if the verb is right."""
    verbs = list(verb_set)
    if not verbs:
        raise ProtocolError("verb_set is empty")
    return _run_protocol(
        "verb_transfer",
        scorer,
        entries,
        lambda truth: [(v, truth[1]) for v in verbs],
        lambda pred, truth: pred[0] == truth[0],
    )


def confusion_eval(scorer: Scorer, entries: Sequence[Mapping], test_pairs: Sequence[Pair]) -> EvalReport:
    """Per image, query every held-out pair (lexicographic order); hit if the pair is right."""
    cands = sorted({tuple(p) for p in test_pairs})
    if not cands:
        raise ProtocolError("test_pairs is empty")
    return _run_protocol(
        "vo_confusion", scorer, entries, lambda truth: cands, lambda pred, truth: pred == truth
    )


def oracle_scorer(entries: Sequence[Mapping]) -> Scorer:
    truth = {e["image_id"]: (e["verb"], e["object"]) for e in entries}

    def score(image_id: str, cands: Sequence[Pair]) -> np.ndarray:
        return np.array([1.0 if tuple(c) == truth[image_id] else 0.0 for c in cands])

    return score


def random_scorer(seed: int = 0) -> Scorer:
    rng = np.random.default_rng(seed)
    return lambda image_id, cands: rng.random(len(cands))


class ModelScorer:
    """Scores candidates with a frozen network; V-Net runs once per image."""

    def __init__(self, model: TwoStreamModel, inputs: InputBuilder, table: EmbeddingTable):
        if model.config.input_mode != inputs.mode:
            raise ConfigurationError(f"model expects {model.config.input_mode} input, builder makes {inputs.mode}")
        self.model = model.eval()
        self.inputs = inputs
        self.table = table
        self._queries: dict[tuple[Pair, ...], torch.Tensor] = {}

    @torch.no_grad()
    def query_features(self, cands: Sequence[Pair]) -> torch.Tensor:
        key = tuple(tuple(c) for c in cands)
        if key not in self._queries:
            self._queries[key] = self.model.encode_query(*query_vectors(self.table, list(key)))
        return self._queries[key]

    @torch.no_grad()
    def visual_features(self, image_id: str) -> torch.Tensor:
        return self.model.forward_vnet(self.inputs.one(image_id))

    @torch.no_grad()
    def __call__(self, image_id: str, cands: Sequence[Pair]) -> np.ndarray:
        f_q = self.query_features(cands)
        f_v = self.visual_features(image_id).expand(len(cands), -1)
        return self.model.closeness(f_v, f_q).double().numpy()


# --- feature dumps -----------------------------------------------------------

@torch.no_grad()
def dump_features(
    scorer: ModelScorer,
    entries: Sequence[Mapping],
    which: str,
    out: str | Path,
    seed: int = 0,
    query_pairs: Sequence[Pair] | None = None,
) -> Path:
    """Write one CSV row per image: labels, query pair, matched flag, features.

    ``concat_unmatched`` pairs each image's V-Net feature with the Q-Net
    feature of one uniformly drawn pair other than its own, chosen from
    ``query_pairs`` (default: every pair present in ``entries``).
    """
    if which not in FEATURE_KINDS:
        raise ConfigurationError(f"which must be one of {FEATURE_KINDS}")
    pool = sorted({tuple(p) for p in query_pairs} if query_pairs else {(e["verb"], e["object"]) for e in entries})
    rng = np.random.default_rng(seed)
    out = Path(out)
    rows = []
    for e in entries:
        truth = (e["verb"], e["object"])
        query, matched = truth, 1
        if which == "concat_unmatched":
            others = [p for p in pool if p != truth]
            if not others:
                raise ConfigurationError("no non-matching query available")
            query, matched = others[int(rng.integers(len(others)))], 0
        parts = []
        if which in ("vnet", "concat_matched", "concat_unmatched"):
            parts.append(scorer.visual_features(e["image_id"]))
        if which != "vnet":
            parts.append(scorer.query_features([query])[0])
        feat = torch.cat(parts).numpy()
        rows.append([e["image_id"], truth[0], truth[1], query[0], query[1], matched, *map(repr, map(float, feat))])
    width = len(rows[0]) - 6 if rows else 0
    with out.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "verb", "object", "query_verb", "query_object", "matched"]
                   + [f"f{i}" for i in range(width)])
        w.writerows(rows)
    return out


def read_features(path: str | Path) -> tuple[list[dict], np.ndarray]:
    """``(label rows, feature matrix)`` from a feature CSV."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        split = next((i for i, h in enumerate(header) if h == "f0"), len(header))
        labels, feats = [], []
        for row in reader:
            labels.append(dict(zip(header[:split], row[:split])))
            feats.append([float(x) for x in row[split:]])
    return labels, np.array(feats, dtype=np.float64).reshape(len(labels), -1)


def project2d(
    feature_path: str | Path,
    coords_path: str | Path,
    plot_path: str | Path | None = None,
    seed: int = 0,
    color_by: str = "verb",
) -> np.ndarray:
    """t-SNE to two dimensions; writes ``x,y,<labels>`` rows and a scatter PNG."""
    from sklearn.manifold import TSNE

    labels, feats = read_features(feature_path)
    n = len(labels)
    if n < 2:
        raise ValueError("projection needs at least 2 rows")
    if np.allclose(feats, feats[0]):
        warnings.warn("all feature rows are identical; jittering before projection", RuntimeWarning, stacklevel=2)
        feats = feats + np.random.default_rng(seed).normal(0.0, 1e-6, feats.shape)
    perplexity = float(min(30.0, max(1.0, (n - 1) / 3)))
    coords = TSNE(
        n_components=2, perplexity=perplexity, init="random", random_state=seed, max_iter=500 if n > 2 else 250
    ).fit_transform(feats)

    label_cols = list(labels[0]) if labels else []
    with Path(coords_path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", *label_cols])
        for (x, y), lab in zip(coords, labels):
            w.writerow([repr(float(x)), repr(float(y)), *(lab[c] for c in label_cols)])

    if plot_path is not None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        groups = [lab.get(color_by, "") for lab in labels]
        fig, ax = plt.subplots(figsize=(6, 6), dpi=100)
        for g in sorted(set(groups)):
            idx = [i for i, v in enumerate(groups) if v == g]
            ax.scatter(coords[idx, 0], coords[idx, 1], s=10, label=g)
        if len(set(groups)) <= 20:
            ax.legend(fontsize=7, markerscale=1.5)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.tight_layout()
        fig.savefig(plot_path, format="png")
        plt.close(fig)
    return coords
