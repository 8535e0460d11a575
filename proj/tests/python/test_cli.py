import json
import os
import subprocess
from pathlib import Path

import pytest

BIN = os.environ.get("NLENS_BIN", "nlens")


def nlens(*args, env=None, cwd=None):
    full_env = dict(os.environ)
    full_env.pop("NLENS_OUT", None)
    if env:
        full_env.update(env)
    return subprocess.run([BIN, *map(str, args)], capture_output=True, text=True, env=full_env, cwd=cwd)


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    root = tmp_path_factory.mktemp("gen")
    r = nlens("synth", "generate", "--seed", 3, "--items", 3000, "--out", root / "gen")
    assert r.returncode == 0, r.stderr
    return root / "gen"


def test_help_exits_zero():
    assert nlens("--help").returncode == 0
    assert nlens("probe", "train", "--help").returncode == 0


def test_usage_errors_exit_two_with_one_line():
    for args in (["--no-such-flag"], [], ["probe"], ["rank", "lca", "--bogus", "1"]):
        r = nlens(*args)
        assert r.returncode == 2, args
        assert len(r.stderr.strip().splitlines()) == 1, r.stderr


def test_bad_value_and_missing_data(tmp_path):
    r = nlens("probe", "train", "--data", tmp_path / "missing", "--out", tmp_path / "o")
    assert r.returncode == 1
    assert "cannot read" in r.stderr
    r = nlens("probe", "train", "--out", tmp_path / "o2")
    assert r.returncode == 1
    assert "--data" in r.stderr


def test_generate_writes_nda_and_truth(generated):
    manifest = json.loads((generated / "data" / "manifest.json").read_text())
    assert manifest["magic"] == "NDA1"
    assert manifest["num_items"] == 3000
    truth = json.loads((generated / "ground_truth.json").read_text())
    assert len(truth["informative"]) == 10
    config = json.loads((generated / "config.json").read_text())
    assert config["resolved"]["seed"] == 3
    assert config["toolkit_version"]


def test_probe_rank_score(generated, tmp_path):
    data = generated / "data"
    r = nlens("probe", "train", "--data", data, "--out", tmp_path / "p", "--seed", 3)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "p" / "probe" / "weights.f32").exists()
    config = json.loads((tmp_path / "p" / "config.json").read_text())
    assert config["resolved"]["epochs"] == 10
    assert config["resolved"]["lr"] == 1e-3
    assert str(data) in config["inputs"]

    r = nlens("probe", "eval", "--probe", tmp_path / "p" / "probe", "--data", data, "--out", tmp_path / "e")
    assert r.returncode == 0, r.stderr
    assert json.loads((tmp_path / "e" / "metrics.json").read_text())["accuracy"] > 0.9

    r = nlens("rank", "lca", "--probe", tmp_path / "p" / "probe", "--out", tmp_path / "r")
    assert r.returncode == 0, r.stderr
    ranking = json.loads((tmp_path / "r" / "ranking.json").read_text())
    assert ranking["method"] == "lca"
    assert {"id", "layer", "offset", "score"} <= set(ranking["global"][0])

    r = nlens("synth", "score", "--ranking", tmp_path / "r" / "ranking.json", "--truth",
              generated / "ground_truth.json", "--out", tmp_path / "s")
    assert r.returncode == 0, r.stderr
    assert json.loads((tmp_path / "s" / "recovery.json").read_text())["recall"] >= 0.9


def test_selectivity_command(tmp_path):
    r = nlens("probe", "selectivity", "--task-acc", 0.86, "--control-acc", 0.15, "--out", tmp_path)
    assert r.returncode == 0
    assert r.stdout.strip() == "selectivity 0.71"


def test_redundancy_and_reports(generated, tmp_path):
    data = generated / "data"
    r = nlens("redundancy", "cc", "--data", data, "--threshold", 0.1, "--out", tmp_path / "cc")
    assert r.returncode == 0, r.stderr
    clusters = json.loads((tmp_path / "cc" / "clusters.json").read_text())
    assert len(clusters["clusters"]) == 256 - 12

    r = nlens("redundancy", "cka", "--data", data, "--out", tmp_path / "cka")
    assert r.returncode == 0, r.stderr
    cka = json.loads((tmp_path / "cka" / "cka_map.json").read_text())
    assert len(cka["matrix"]) == 4 and cka["matrix"][0][0] == pytest.approx(1.0)

    r = nlens("redundancy", "layerwise", "--data", data, "--mode", "independent", "--out", tmp_path / "lw")
    assert r.returncode == 0, r.stderr
    for fmt in ("md", "csv", "json"):
        r = nlens("report", "table", "--reports", tmp_path / "lw" / "report.json", "--format", fmt,
                  "--out", tmp_path / f"t{fmt}")
        assert r.returncode == 0, r.stderr
    assert "Layerwise" in (tmp_path / "tmd" / "table.md").read_text()

    r = nlens("redundancy", "layerwise", "--data", data, "--mode", "sideways", "--out", tmp_path / "bad")
    assert r.returncode == 2

    r = nlens("report", "top-words", "--data", data, "--neuron", "0:5", "--n", 3, "--out", tmp_path / "tw")
    assert r.returncode == 0, r.stderr
    assert len(json.loads((tmp_path / "tw" / "top_words.json").read_text())["words"]) == 3

    r = nlens("report", "highlight", "--data", data, "--neurons", "0:1,70", "--max-items", 50,
              "--out", tmp_path / "hl")
    assert r.returncode == 0, r.stderr
    html = (tmp_path / "hl" / "highlight.html").read_text()
    assert "Layer 0: 1" in html and "Layer 1: 6" in html


def test_config_precedence_and_out_root(generated, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 2, "seed": 9}))
    r = nlens("probe", "train", "--config", cfg, "--data", generated / "data", "--seed", 4,
              env={"NLENS_OUT": str(tmp_path / "root")})
    assert r.returncode == 0, r.stderr
    runs = list((tmp_path / "root").iterdir())
    assert len(runs) == 1 and runs[0].name.startswith("probe-train-")
    resolved = json.loads((runs[0] / "config.json").read_text())["resolved"]
    assert resolved["epochs"] == 2
    assert resolved["seed"] == 4


def test_pipeline_table4_groups(tmp_path):
    assert nlens("synth", "generate", "--items", 1500, "--out", tmp_path / "g").returncode == 0
    r = nlens("pipeline", "table4", "--data", tmp_path / "g" / "data", "--seed", 1, "--delta", 1.0,
              "--out", tmp_path / "t4")
    assert r.returncode == 0, r.stderr
    md = (tmp_path / "t4" / "report.md").read_text()
    for method in ("Oracle", "LCA", "CC", "Layerwise", "LS+CC+LCA"):
        assert f"| {method}" in md
    report = json.loads((tmp_path / "t4" / "report.json").read_text())
    assert report["splits"]["test"] == 300
