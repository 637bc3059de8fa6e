import csv
import json

import pytest

from s2svo.cli import main
from s2svo.train import read_metrics

from .test_synthgen import tree_hash

TINY = ["--d-v", "8", "--tiny-width", "2", "--batch-size", "4", "--episode-classes", "2"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen-data", "--out", str(root), "--samples-per-pair", "1", "--seed", "1"]) == 0
    return root


def test_gen_data_deterministic(tmp_path):
    args = ["gen-data", "--seed", "7", "--samples-per-pair", "1", "--render-rgb", "false"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")


def test_gen_data_defaults_to_published_split(data):
    split = json.loads((data / "split.json").read_text())
    assert len(split["train"]) == 30 and len(split["test"]) == 30
    echoed = dict(l.split("=", 1) for l in (data / "gen-data.config").read_text().splitlines())
    assert echoed["preset"] == "vt60" and echoed["split"] == "published" and echoed["seed"] == "1"


def test_gen_data_confusion_preset(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path), "--preset", "confusion", "--samples-per-pair", "1",
                 "--render-rgb", "no"]) == 0
    split = json.loads((tmp_path / "split.json").read_text())
    assert len(split["train"]) == 4 and len(split["test"]) == 4


def test_usage_errors(tmp_path, capsys):
    assert main(["gen-data"]) == 2
    assert main(["train", "--out", str(tmp_path)]) == 2  # no --data
    assert main(["train", "--out", str(tmp_path), "--data", "x", "--mode", "lidar"]) == 2
    assert main(["frobnicate"]) == 2
    (tmp_path / "bad.cfg").write_text("nonsense_key=3\n")
    assert main(["gen-data", "--out", str(tmp_path), "--config", str(tmp_path / "bad.cfg")]) == 2
    assert "nonsense_key" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path, data):
    (tmp_path / "run.cfg").write_text("# shared\niterations=3\nd_v=8\ntiny-width=2\nlog_every=1\nlr0=0.01\n")
    out = tmp_path / "run"
    assert main(["train", "--data", str(data), "--out", str(out), "--config", str(tmp_path / "run.cfg"),
                 "--lr0", "0.002", "--batch-size", "4", "--episode-classes", "2"]) == 0
    echoed = dict(l.split("=", 1) for l in (out / "train.config").read_text().splitlines())
    assert echoed["iterations"] == "3" and echoed["lr0"] == "0.002" and echoed["d_v"] == "8"
    assert [r["lr"] for r in read_metrics(out / "metrics.csv")] == [0.002] * 3


@pytest.mark.parametrize("mode", ["rgb", "s2s", "orthovec2s"])
def test_train_each_mode_writes_checkpoint(tmp_path, data, mode):
    out = tmp_path / mode
    assert main(["train", "--data", str(data), "--out", str(out), "--mode", mode, "--iterations", "2", *TINY]) == 0
    assert (out / "model.s2sm").read_bytes()[:4] == b"S2SM"


def test_train_resume_continues_log(tmp_path, data):
    out = tmp_path / "r"
    base = ["train", "--data", str(data), "--out", str(out), "--log-every", "1", "--lr0", "1e-3", *TINY]
    assert main([*base, "--iterations", "3"]) == 0
    assert main([*base, "--iterations", "6", "--resume", str(out / "model.s2sm")]) == 0
    assert [r["iter"] for r in read_metrics(out / "metrics.csv")] == list(range(6))


def test_train_divergence_exit_code(tmp_path, data, capsys):
    rc = main(["train", "--data", str(data), "--out", str(tmp_path), "--iterations", "5", "--lr0", "1e9",
               "--mode", "rgb", *TINY])
    assert rc == 1
    assert "non-finite loss" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    assert main(["train", "--data", str(data), "--out", str(out), "--iterations", "3", *TINY]) == 0
    return out / "model.s2sm"


@pytest.mark.parametrize("scorer,protocol", [("model", "verb_transfer"), ("oracle", "verb_transfer"),
                                             ("random", "vo_confusion"), ("oracle", "vo_confusion")])
def test_eval_reports(tmp_path, data, trained, scorer, protocol):
    args = ["eval", "--data", str(data), "--out", str(tmp_path), "--scorer", scorer, "--protocol", protocol]
    if scorer == "model":
        args += ["--checkpoint", str(trained)]
    assert main(args) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert 0.0 <= rep["accuracy"] <= 1.0
    assert rep["total"] == 30 == len(rep["records"])
    assert sum(c["total"] for c in rep["per_class"].values()) == rep["total"]
    assert sum(c["hits"] for c in rep["per_class"].values()) == rep["hits"]
    assert rep["accuracy"] == rep["hits"] / rep["total"]
    n_cands = 9 if protocol == "verb_transfer" else 30
    assert all(len(r["scores"]) == n_cands for r in rep["records"])
    if scorer == "oracle":
        assert rep["accuracy"] == 1.0


def test_eval_model_needs_checkpoint(tmp_path, data):
    assert main(["eval", "--data", str(data), "--out", str(tmp_path)]) == 2


def test_dump_and_plot(tmp_path, data, trained):
    assert main(["dump-features", "--data", str(data), "--out", str(tmp_path), "--checkpoint", str(trained),
                 "--which", "concat_matched"]) == 0
    feats = tmp_path / "features_concat_matched.csv"
    with feats.open() as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 31 and len(rows[0]) == 6 + 16
    assert main(["plot", "--features", str(feats), "--out", str(tmp_path / "plot"), "--seed", "2"]) == 0
    assert (tmp_path / "plot" / "plot.png").exists()
    assert len((tmp_path / "plot" / "coords.csv").read_text().splitlines()) == 31


def run_ablate(out, data):
    return main(["ablate", "--data", str(data), "--out", str(out), "--iterations", "1", *TINY])


def ablation_rows(out):
    with (out / "ablation.csv").open() as fh:
        return list(csv.DictReader(fh))


def test_ablate_grid_and_cache(tmp_path, data):
    out = tmp_path / "grid"
    assert run_ablate(out, data) == 0
    rows = ablation_rows(out)
    assert len(rows) == 24
    assert {(r["qnet"], r["combiner"], r["mode"]) for r in rows} == {
        (q, c, m) for q in ("single", "separate") for c in ("sum", "catV", "catH", "hadamard")
        for m in ("rgb", "s2s", "orthovec2s")}
    width = {(r["qnet"], r["combiner"]): r["qnet_input"] for r in rows}
    assert width[("single", "catV")] == "600" and width[("single", "sum")] == "300"
    assert width[("single", "catH")] == "600" and width[("single", "hadamard")] == "300"
    assert width[("separate", "sum")] == "300+300"
    cells = {r["cell"] for r in rows}
    assert len(cells) == 15  # separate cells ignore the combiner
    for c in cells:
        assert (out / "cells" / c / "cell.config").exists()
    # interrupt: lose two results, rerun, only those retrain
    lost = sorted(cells)[:2]
    for c in lost:
        (out / "cells" / c / "result.json").unlink()
    mtimes = {c: (out / "cells" / c / "result.json").stat().st_mtime_ns for c in cells - set(lost)}
    assert run_ablate(out, data) == 0
    again = ablation_rows(out)
    assert {r["cell"] for r in again if r["cached"] == "0"} == set(lost)
    assert all((out / "cells" / c / "result.json").stat().st_mtime_ns == t for c, t in mtimes.items())
    assert [r["accuracy"] for r in again if r["cell"] not in lost] == [r["accuracy"] for r in rows if r["cell"] not in lost]
