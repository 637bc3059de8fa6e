"""Episode-based matched/unmatched regression training."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .errors import ConfigurationError, DivergenceError, LossError, NumericError, SamplingError
from .model import TwoStreamModel, read_checkpoint, write_checkpoint
from .pipeline import InputBuilder, query_vectors
from .synthgen import Pair, VOSplit
from .wordvec import EmbeddingTable

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-5
    anneal_factor: float = 0.5
    anneal_every: int = 200_000
    weight_decay: float = 1e-5  # Q-Net affine parameters only
    batch_size: int = 32
    iterations: int = 1000
    seed: int = 0
    episode_classes: int = 10
    negatives_per_positive: int = 1
    log_every: int = 10

    def __post_init__(self):
        if self.lr0 <= 0 or self.anneal_factor <= 0 or self.anneal_every <= 0:
            raise ConfigurationError("learning-rate settings must be positive")
        if self.weight_decay < 0 or self.iterations < 0 or self.log_every <= 0:
            raise ConfigurationError("weight_decay and iterations must be non-negative")
        if self.episode_classes < 2:
            raise ConfigurationError("an episode needs at least 2 classes so an unmatched query exists")
        if self.negatives_per_positive < 1:
            raise ConfigurationError("negatives_per_positive must be >= 1")
        if self.batch_size <= 0 or self.batch_size % (1 + self.negatives_per_positive):
            raise ConfigurationError(
                f"batch_size must be a positive multiple of {1 + self.negatives_per_positive}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Sample:
    image_id: str
    verb: str
    object: str
    target: float

    @property
    def pair(self) -> Pair:
        return (self.verb, self.object)


def lr_at(iteration: int, config: TrainConfig) -> float:
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return config.lr0 * config.anneal_factor ** (iteration // config.anneal_every)


def images_by_pair(entries: Sequence[Mapping]) -> dict[Pair, list[str]]:
    out: dict[Pair, list[str]] = {}
    for e in entries:
        out.setdefault((e["verb"], e["object"]), []).append(e["image_id"])
    return dict(sorted(out.items()))


def sample_episode(entries: Sequence[Mapping], config: TrainConfig, rng: np.random.Generator) -> list[Sample]:
    """One training batch drawn from a random subset of VO classes.

    Each matched sample (image with its own pair, target 1) is followed by
    ``negatives_per_positive`` unmatched samples pairing the same image with a
    different class of the episode (target 0).
    """
    groups = images_by_pair(entries)
    pairs = list(groups)
    if len(pairs) < config.episode_classes:
        raise SamplingError(f"episode needs {config.episode_classes} VO pairs, training side has {len(pairs)}")
    classes = [pairs[i] for i in rng.choice(len(pairs), config.episode_classes, replace=False)]
    n_pos = config.batch_size // (1 + config.negatives_per_positive)
    batch: list[Sample] = []
    for _ in range(n_pos):
        c = int(rng.integers(len(classes)))
        pair = classes[c]
        ids = groups[pair]
        image_id = ids[int(rng.integers(len(ids)))]
        batch.append(Sample(image_id, pair[0], pair[1], 1.0))
        others = classes[:c] + classes[c + 1 :]
        for _ in range(config.negatives_per_positive):
            neg = others[int(rng.integers(len(others)))]
            batch.append(Sample(image_id, neg[0], neg[1], 0.0))
    return batch


def mse_loss(predictions, targets):
    """Mean squared error; returns a tensor for tensor input, else a float."""
    if len(predictions) != len(targets):
        raise LossError(f"{len(predictions)} predictions vs {len(targets)} targets")
    if len(predictions) == 0:
        raise LossError("empty batch")
    if isinstance(predictions, torch.Tensor):
        targets = torch.as_tensor(targets, dtype=predictions.dtype)
        return torch.mean((predictions - targets) ** 2)
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    return float(np.mean((p - t) ** 2))


def qnet_l2_penalty(model: TwoStreamModel, weight_decay: float) -> torch.Tensor:
    """``0.5 * wd * ||theta||^2`` over Q-Net affine parameters (gradient ``wd * theta``)."""
    if weight_decay == 0:
        return torch.zeros((), dtype=model.dtype)
    return 0.5 * weight_decay * sum(p.pow(2).sum() for p in model.qnet_parameters())


def batch_loss(
    model: TwoStreamModel, batch: Sequence[Sample], inputs: InputBuilder, table: EmbeddingTable, weight_decay: float
) -> tuple[torch.Tensor, torch.Tensor]:
    """``(total loss, predictions)``; each distinct image passes V-Net once."""
    unique = list(dict.fromkeys(s.image_id for s in batch))
    where = {img: k for k, img in enumerate(unique)}
    f_v = model.forward_vnet(inputs(unique))
    f_v = f_v[torch.tensor([where[s.image_id] for s in batch])]
    verbs, objs = query_vectors(table, [s.pair for s in batch])
    tau = model.closeness(f_v, model.encode_query(verbs, objs))
    loss = mse_loss(tau, [s.target for s in batch]) + qnet_l2_penalty(model, weight_decay)
    return loss, tau


def make_optimizer(model: TwoStreamModel, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=config.lr0, betas=ADAM_BETAS, eps=ADAM_EPS)


def _optimizer_tensors(model: TwoStreamModel, opt: torch.optim.Adam) -> tuple[dict[str, torch.Tensor], int]:
    out, step = {}, 0
    for name, p in model.named_parameters():
        st = opt.state.get(p)
        if not st:
            continue
        out[f"adam.exp_avg.{name}"] = st["exp_avg"]
        out[f"adam.exp_avg_sq.{name}"] = st["exp_avg_sq"]
        step = int(st["step"])
    return out, step


def _restore_optimizer(model: TwoStreamModel, opt: torch.optim.Adam, tensors: Mapping[str, torch.Tensor], step: int):
    for name, p in model.named_parameters():
        key = f"adam.exp_avg.{name}"
        if key not in tensors:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(step)),
            "exp_avg": tensors[key].to(p.dtype).clone(),
            "exp_avg_sq": tensors[f"adam.exp_avg_sq.{name}"].to(p.dtype).clone(),
        }


def train_entries(manifest: Sequence[Mapping], split: VOSplit | None = None) -> list[Mapping]:
    if split is None:
        return [e for e in manifest if e.get("split") == "train"]
    return [e for e in manifest if (e["verb"], e["object"]) in split.train_pairs]


def train_loop(
    model: TwoStreamModel,
    manifest: Sequence[Mapping],
    split: VOSplit | None,
    config: TrainConfig,
    inputs: InputBuilder,
    table: EmbeddingTable,
    *,
    log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    resume_from: str | Path | None = None,
    meta: Mapping | None = None,
) -> tuple[TwoStreamModel, list[dict]]:
    """Run ``config.iterations`` total steps of sample -> forward -> MSE -> Adam.

    Batch ``i`` is drawn from an RNG seeded with ``(config.seed, i)``, so a run
    resumed from a checkpoint reproduces the uninterrupted run exactly.
    Returns the trained model and the metric records written this call.
    """
    if model.config.input_mode != inputs.mode:
        raise ConfigurationError(f"model expects {model.config.input_mode} input, builder makes {inputs.mode}")
    entries = train_entries(manifest, split)
    opt = make_optimizer(model, config)
    start = 0
    if resume_from is not None:
        model, ck_meta, tensors = read_checkpoint(resume_from)
        start = int(ck_meta.get("iteration", 0))
        opt = make_optimizer(model, config)
        _restore_optimizer(model, opt, tensors, int(ck_meta.get("adam_step", 0)))

    records: list[dict] = []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path is not None else None
    try:
        model.train()
        for it in range(start, config.iterations):
            rng = np.random.default_rng([config.seed & 0xFFFFFFFF, it])
            batch = sample_episode(entries, config, rng)
            try:
                loss, _ = batch_loss(model, batch, inputs, table, config.weight_decay)
            except NumericError:
                # parameters or inputs already went non-finite upstream of the head
                raise DivergenceError(it, math.nan) from None
            value = float(loss.detach())
            if not math.isfinite(value):
                raise DivergenceError(it, value)
            lr = lr_at(it, config)
            for group in opt.param_groups:
                group["lr"] = lr
            opt.zero_grad()
            loss.backward()
            opt.step()
            if it % config.log_every == 0 or it == config.iterations - 1:
                rec = {"iter": it, "loss": value, "lr": lr}
                records.append(rec)
                if log_fh is not None:
                    log_fh.write(f"{it},{value!r},{lr!r}\n")
                    log_fh.flush()
                log.debug("iter %d loss %.5f lr %.3g", it, value, lr)
    finally:
        if log_fh is not None:
            log_fh.close()
    model.eval()

    if checkpoint_path is not None:
        tensors, step = _optimizer_tensors(model, opt)
        full_meta = {**dict(meta or {}), "iteration": max(start, config.iterations), "adam_step": step,
                     "train": config.to_dict()}
        write_checkpoint(checkpoint_path, model, full_meta, tensors)
    return model, records


def read_metrics(path: str | Path) -> list[dict]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            it, loss, lr = line.split(",")
            out.append({"iter": int(it), "loss": float(loss), "lr": float(lr)})
    return out


@torch.no_grad()
def match_accuracy(
    model: TwoStreamModel, entries: Sequence[Mapping], inputs: InputBuilder, table: EmbeddingTable
) -> dict[str, float]:
    """Thresholded (0.5) matched/unmatched accuracy over every (image, pair) combination.

    ``balanced`` averages the matched and unmatched rates, mirroring the 1:1
    composition of training episodes.
    """
    model.eval()
    pairs = list(images_by_pair(entries))
    verbs, objs = query_vectors(table, pairs)
    f_q = model.encode_query(verbs, objs)
    hits_pos = hits_neg = n_neg = 0
    for e in entries:
        f_v = model.forward_vnet(inputs.one(e["image_id"]))
        tau = model.closeness(f_v.expand(len(pairs), -1), f_q).numpy()
        truth = pairs.index((e["verb"], e["object"]))
        hits_pos += int(tau[truth] > 0.5)
        neg = np.delete(tau, truth)
        hits_neg += int((neg < 0.5).sum())
        n_neg += len(neg)
    matched = hits_pos / len(entries)
    unmatched = hits_neg / n_neg if n_neg else 1.0
    return {"matched": matched, "unmatched": unmatched, "balanced": 0.5 * (matched + unmatched)}
