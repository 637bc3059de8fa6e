"""Command-line entry point: ``s2svo <command> [options]``.

Every option can also come from a flat ``key=value`` file passed with
``--config``; explicit flags win over the file, and the file wins over
built-in defaults. Each command writes its fully resolved settings to
``<out>/<command>.config`` (minus ``out`` itself, so two runs into
different directories produce identical files).

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from .errors import S2SError
from .model import COMBINERS, INPUT_MODES

log = logging.getLogger("s2svo")

BOOL_WORDS = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _bool(text: str) -> bool:
    try:
        return BOOL_WORDS[str(text).strip().lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}") from None


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise argparse.ArgumentTypeError(f"expected one of {', '.join(options)}; got {text!r}")
        return text

    return parse


def _csv_of(*options: str) -> Callable[[str], tuple[str, ...]]:
    def parse(text: str) -> tuple[str, ...]:
        items = tuple(x.strip() for x in str(text).split(",") if x.strip())
        bad = [x for x in items if x not in options]
        if bad or not items:
            raise argparse.ArgumentTypeError(f"expected a comma list drawn from {', '.join(options)}")
        return items

    return parse


def _opt_int(text: str) -> int | None:
    return None if str(text).lower() in ("", "none") else int(text)


# key -> (parser, default, help)
KEYS: dict[str, tuple[Callable[[str], Any], Any, str]] = {
    "seed": (int, 0, "global seed"),
    "out": (str, None, "output directory"),
    "preset": (_choice("vt60", "confusion"), "vt60", "label set to generate"),
    "split": (_choice("published", "random"), "published", "vt60 split: the published table or a seeded one"),
    "samples_per_pair": (_opt_int, None, "scenes per VO pair (default 50 for vt60, 100 for confusion)"),
    "image_size": (int, 64, "generated image side"),
    "render_rgb": (_bool, True, "write PNG renderings"),
    "data": (str, None, "dataset directory written by gen-data"),
    "mode": (_choice(*INPUT_MODES), "s2s", "visual input pathway"),
    "embeddings": (str, None, "word-vector text file (default: bundled fixture vectors)"),
    "input_size": (int, 64, "network input side"),
    "backbone": (_choice("tiny", "paper18", "paper34", "paper50"), "tiny", "V-Net backbone"),
    "d_v": (int, 128, "feature width"),
    "q_hidden": (_opt_int, None, "Q-Net hidden width (default d_v)"),
    "c_hidden": (_opt_int, None, "C-Net hidden width (default 2*d_v)"),
    "combiner": (_choice(*COMBINERS), "sum", "query combination"),
    "separate_qnets": (_bool, False, "encode verb and object with separate Q-Nets"),
    "tiny_width": (int, 16, "first conv width of the tiny backbone"),
    "lr0": (float, 1e-5, "initial learning rate"),
    "anneal_factor": (float, 0.5, "learning-rate decay factor"),
    "anneal_every": (int, 200_000, "iterations between decays"),
    "weight_decay": (float, 1e-5, "L2 penalty on Q-Net affine parameters"),
    "batch_size": (int, 32, "samples per step"),
    "iterations": (int, 1000, "total training steps"),
    "episode_classes": (int, 10, "VO pairs per episode"),
    "negatives_per_positive": (int, 1, "unmatched samples per matched one"),
    "log_every": (int, 10, "metrics logging interval"),
    "resume": (str, None, "checkpoint to continue from"),
    "checkpoint": (str, None, "trained model checkpoint"),
    "protocol": (_choice("verb_transfer", "vo_confusion"), "verb_transfer", "evaluation protocol"),
    "scorer": (_choice("model", "oracle", "random"), "model", "what produces closeness scores"),
    "side": (_choice("test", "train"), "test", "which split side to use"),
    "which": (_choice("vnet", "qnet", "concat_matched", "concat_unmatched"), "vnet", "features to dump"),
    "features": (str, None, "feature CSV written by dump-features"),
    "color_by": (str, "verb", "label column used for plot colours"),
    "modes": (_csv_of(*INPUT_MODES), INPUT_MODES, "input modes in the ablation grid"),
    "combiners": (_csv_of(*COMBINERS), COMBINERS, "combiners in the ablation grid"),
}

MODEL_KEYS = ("backbone", "d_v", "q_hidden", "c_hidden", "tiny_width")
TRAIN_KEYS = ("lr0", "anneal_factor", "anneal_every", "weight_decay", "batch_size", "iterations",
              "episode_classes", "negatives_per_positive", "log_every")

COMMANDS: dict[str, tuple[str, tuple[str, ...], tuple[str, ...]]] = {
    # name -> (help, keys, required keys)
    "gen-data": ("generate a synthetic dataset",
                 ("preset", "split", "samples_per_pair", "image_size", "render_rgb"), ()),
    "train": ("train one model",
              ("data", "mode", "embeddings", "input_size", "combiner", "separate_qnets", *MODEL_KEYS,
               *TRAIN_KEYS, "resume"), ("data",)),
    "eval": ("evaluate a model on the test side",
             ("data", "checkpoint", "protocol", "scorer", "side", "embeddings"), ("data",)),
    "ablate": ("train and evaluate the combiner x Q-Net x input grid",
               ("data", "embeddings", "input_size", *MODEL_KEYS, *TRAIN_KEYS, "protocol", "modes", "combiners"),
               ("data",)),
    "dump-features": ("write per-image feature rows", ("data", "checkpoint", "which", "side", "embeddings"),
                      ("data", "checkpoint")),
    "plot": ("project a feature file to 2-D", ("features", "color_by"), ("features",)),
}


class UsageError(Exception):
    pass


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file; flags override it")
    for key in ("seed", "out"):
        common.add_argument(f"--{key}", default=None, type=KEYS[key][0], help=KEYS[key][2])
    parser = argparse.ArgumentParser(prog="s2svo", description="Semantic-blob zero-shot verb-object inference.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (text, keys, _) in COMMANDS.items():
        p = sub.add_parser(name, help=text, parents=[common])
        for key in keys:
            fn, default, hint = KEYS[key]
            shown = ",".join(default) if isinstance(default, tuple) else default
            if shown is not None:
                hint = f"{hint} (default: {shown})"
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, type=fn, help=hint)
    return parser


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults, config file and explicit flags for ``args.command``."""
    _, keys, required = COMMANDS[args.command]
    keys = ("seed", "out", *keys)
    from_file = read_config_file(args.config) if args.config else {}
    cfg: dict[str, Any] = {}
    for key in keys:
        fn, default, _ = KEYS[key]
        value = getattr(args, key, None)
        if value is None and key in from_file:
            try:
                value = fn(from_file[key])
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key}: {exc}") from None
        cfg[key] = default if value is None else value
    for key in ("out", *required):
        if cfg.get(key) is None:
            raise UsageError(f"--{key.replace('_', '-')} is required")
    if args.command == "eval" and cfg["scorer"] == "model" and cfg["checkpoint"] is None:
        raise UsageError("--checkpoint is required with --scorer model")
    return cfg


def echo_config(cfg: dict[str, Any], path: Path) -> None:
    """Write ``cfg`` as ``key=value`` lines; ``out`` is implied by the file's location."""
    lines = []
    for key in sorted(k for k in cfg if k != "out"):
        v = cfg[key]
        v = ",".join(v) if isinstance(v, tuple) else ("" if v is None else v)
        lines.append(f"{key}={str(v).lower() if isinstance(cfg[key], bool) else v}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- shared plumbing ---------------------------------------------------------

def _word_table(path: str | None):
    from .wordvec import FIXTURE_PATH, load_embeddings

    return load_embeddings(path or FIXTURE_PATH)


def _model_config(cfg: dict, mode: str, channels: int, word_dim: int, combiner: str, separate: bool):
    from .model import ModelConfig

    return ModelConfig(
        input_mode=mode, in_channels=channels, word_dim=word_dim, d_v=cfg["d_v"], q_hidden=cfg["q_hidden"],
        c_hidden=cfg["c_hidden"], combiner=combiner, separate_qnets=separate, backbone=cfg["backbone"],
        tiny_width=cfg["tiny_width"], seed=cfg["seed"],
    )


def _train_config(cfg: dict):
    from .train import TrainConfig

    return TrainConfig(seed=cfg["seed"], **{k: cfg[k] for k in TRAIN_KEYS})


def _side_entries(manifest: list[dict], side: str) -> list[dict]:
    return [e for e in manifest if e["split"] == side]


def _train_model(cfg: dict, mode: str, combiner: str, separate: bool, out: Path, resume: str | None = None):
    """Train one model into ``out``; returns the checkpoint path."""
    from .model import build_model
    from .pipeline import make_input_builder
    from .synthgen import read_manifest
    from .train import train_loop

    table = _word_table(cfg["embeddings"])
    manifest = read_manifest(cfg["data"])
    inputs = make_input_builder(cfg["data"], mode, table, cfg["input_size"], ortho_seed=cfg["seed"], manifest=manifest)
    model = build_model(_model_config(cfg, mode, inputs.channels, table.dim, combiner, separate))
    meta = {"mode": mode, "input_size": cfg["input_size"], "ortho_seed": cfg["seed"],
            "embeddings": str(Path(cfg["embeddings"]).resolve()) if cfg["embeddings"] else None}
    ckpt = out / "model.s2sm"
    _, records = train_loop(model, manifest, None, _train_config(cfg), inputs, table,
                            log_path=out / "metrics.csv", checkpoint_path=ckpt, resume_from=resume, meta=meta)
    if records:
        log.info("%s: last loss %.5f at iteration %d", out, records[-1]["loss"], records[-1]["iter"])
    return ckpt


def _load_scorer(checkpoint: str | Path, data: str | Path, embeddings: str | None):
    from .evaluation import ModelScorer
    from .model import read_checkpoint
    from .pipeline import make_input_builder

    model, meta, _ = read_checkpoint(checkpoint)
    table = _word_table(embeddings or meta.get("embeddings"))
    inputs = make_input_builder(data, meta.get("mode", model.config.input_mode), table,
                                int(meta.get("input_size", 64)), ortho_seed=int(meta.get("ortho_seed", 0)))
    return ModelScorer(model, inputs, table)


def _evaluate(scorer, protocol: str, data: str | Path, side: str = "test"):
    from .evaluation import confusion_eval, verb_transfer_eval
    from .synthgen import read_manifest, read_split

    entries = _side_entries(read_manifest(data), side)
    split = read_split(data)
    if protocol == "verb_transfer":
        return verb_transfer_eval(scorer, entries, split.verbs)
    pairs = split.test_pairs if side == "test" else split.train_pairs
    return confusion_eval(scorer, entries, sorted(pairs))


# --- commands ----------------------------------------------------------------

def cmd_gen_data(cfg: dict, out: Path) -> int:
    from . import synthgen as sg

    if cfg["preset"] == "vt60":
        spp = 50 if cfg["samples_per_pair"] is None else cfg["samples_per_pair"]
        config = sg.vt60_config(spp, cfg["image_size"], cfg["seed"])
        if cfg["split"] == "published":
            split = sg.vt60_split()
        else:
            per_verb = sg.vt60_objects_per_verb()
            split = sg.make_split(sorted(per_verb), per_verb, cfg["seed"])
    else:
        spp = 100 if cfg["samples_per_pair"] is None else cfg["samples_per_pair"]
        config = sg.confusion_config(spp, cfg["image_size"], cfg["seed"])
        split = sg.make_confusion_split(sg.CONFUSION_VERBS, sg.CONFUSION_OBJECTS, cfg["seed"])
    if not cfg["render_rgb"]:
        config = sg.SynthConfig(config.verbs, config.objects, config.image_size, config.samples_per_pair,
                                config.seed, render_rgb=False)
    manifest = sg.generate_dataset(config, split, out)
    print(f"wrote {len(manifest)} scenes, {len(split.train_pairs)} train / {len(split.test_pairs)} test pairs to {out}")
    return 0


def cmd_train(cfg: dict, out: Path) -> int:
    ckpt = _train_model(cfg, cfg["mode"], cfg["combiner"], cfg["separate_qnets"], out, cfg["resume"])
    print(f"checkpoint {ckpt}")
    return 0


def cmd_eval(cfg: dict, out: Path) -> int:
    from .evaluation import oracle_scorer, random_scorer
    from .synthgen import read_manifest

    if cfg["scorer"] == "model":
        scorer = _load_scorer(cfg["checkpoint"], cfg["data"], cfg["embeddings"])
    elif cfg["scorer"] == "oracle":
        scorer = oracle_scorer(read_manifest(cfg["data"]))
    else:
        scorer = random_scorer(cfg["seed"])
    report = _evaluate(scorer, cfg["protocol"], cfg["data"], cfg["side"])
    report.write_json(out / "report.json")
    print(f"{report.protocol} accuracy {report.accuracy:.4f} ({report.hits}/{report.total})")
    return 0


def cell_key(cfg: dict, mode: str, combiner: str, separate: bool) -> tuple[str, dict]:
    """Hash of everything that determines a grid cell's result.

    Separate Q-Nets never combine the query, so the combiner is dropped and
    those cells share one entry per input mode.
    """
    manifest = Path(cfg["data"]) / "manifest.json"
    emb = cfg["embeddings"]
    effective = {
        "mode": mode, "combiner": None if separate else combiner, "separate_qnets": separate,
        "seed": cfg["seed"], "input_size": cfg["input_size"], "protocol": cfg["protocol"],
        **{k: cfg[k] for k in (*MODEL_KEYS, *TRAIN_KEYS)},
        "manifest_sha256": hashlib.sha256(manifest.read_bytes()).hexdigest(),
        "embeddings_sha256": hashlib.sha256(Path(emb).read_bytes()).hexdigest() if emb else "fixture",
    }
    blob = json.dumps(effective, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16], effective


def _qnet_inputs(checkpoint: Path) -> str:
    from .model import read_checkpoint

    model, _, _ = read_checkpoint(checkpoint)
    if model.config.separate_qnets:
        return f"{model.qnet_verb[0].in_features}+{model.qnet_obj[0].in_features}"
    return str(model.qnet[0].in_features)


def cmd_ablate(cfg: dict, out: Path) -> int:
    cells_dir = out / "cells"
    cells_dir.mkdir(exist_ok=True)
    rows = []
    for separate in (False, True):
        for combiner in cfg["combiners"]:
            for mode in cfg["modes"]:
                key, effective = cell_key(cfg, mode, combiner, separate)
                cell = cells_dir / key
                result_path = cell / "result.json"
                cached = result_path.exists()
                if not cached:
                    cell.mkdir(exist_ok=True)
                    (cell / "metrics.csv").unlink(missing_ok=True)
                    echo_config({k: (v if v is not None else "") for k, v in effective.items()}, cell / "cell.config")
                    ckpt = _train_model(cfg, mode, combiner, separate, cell)
                    report = _evaluate(_load_scorer(ckpt, cfg["data"], cfg["embeddings"]), cfg["protocol"], cfg["data"])
                    result = {"accuracy": report.accuracy, "hits": report.hits, "total": report.total,
                              "qnet_input": _qnet_inputs(ckpt)}
                    tmp = result_path.with_suffix(".tmp")
                    tmp.write_text(json.dumps(result, sort_keys=True) + "\n", encoding="utf-8")
                    os.replace(tmp, result_path)
                result = json.loads(result_path.read_text(encoding="utf-8"))
                row = {"qnet": "separate" if separate else "single", "combiner": combiner, "mode": mode,
                       "qnet_input": result["qnet_input"], "accuracy": result["accuracy"], "cell": key,
                       "cached": int(cached)}
                rows.append(row)
                print(f"{row['qnet']:8s} {combiner:8s} {mode:10s} qnet_in={row['qnet_input']:>7s} "
                      f"acc={row['accuracy']:.4f} {'cached' if cached else 'trained'}", flush=True)
    with (out / "ablation.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    _write_ablation_table(rows, cfg["modes"], out / "ablation.md")
    return 0


def _write_ablation_table(rows: list[dict], modes: Sequence[str], path: Path) -> None:
    lines = ["| Q-Net | combiner | Q-Net input | " + " | ".join(modes) + " |",
             "|---|---|---|" + "---|" * len(modes)]
    seen: dict[tuple[str, str], dict[str, dict]] = {}
    for r in rows:
        seen.setdefault((r["qnet"], r["combiner"]), {})[r["mode"]] = r
    for (qnet, combiner), by_mode in seen.items():
        first = next(iter(by_mode.values()))
        accs = " | ".join(f"{100 * by_mode[m]['accuracy']:.2f}" if m in by_mode else "" for m in modes)
        lines.append(f"| {qnet} | {combiner} | {first['qnet_input']} | {accs} |")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_dump_features(cfg: dict, out: Path) -> int:
    from .evaluation import dump_features
    from .synthgen import read_manifest, read_split

    scorer = _load_scorer(cfg["checkpoint"], cfg["data"], cfg["embeddings"])
    entries = _side_entries(read_manifest(cfg["data"]), cfg["side"])
    split = read_split(cfg["data"])
    pool = split.test_pairs if cfg["side"] == "test" else split.train_pairs
    path = dump_features(scorer, entries, cfg["which"], out / f"features_{cfg['which']}.csv", cfg["seed"],
                         sorted(pool))
    print(f"wrote {len(entries)} rows to {path}")
    return 0


def cmd_plot(cfg: dict, out: Path) -> int:
    from .evaluation import project2d

    coords = project2d(cfg["features"], out / "coords.csv", out / "plot.png", cfg["seed"], cfg["color_by"])
    print(f"projected {len(coords)} rows to {out / 'plot.png'}")
    return 0


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "dump-features": cmd_dump_features,
    "plot": cmd_plot,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"s2svo {args.command}: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        echo_config(cfg, out / f"{args.command}.config")
        return HANDLERS[args.command](cfg, out)
    except (S2SError, OSError, ValueError, KeyError) as exc:
        print(f"s2svo {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
