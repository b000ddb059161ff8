import json
import subprocess
import sys

import numpy as np
import pytest

from spnrank import io
from spnrank.cli import main
from spnrank.ranking import LinearPairwiseRanker, scores
from spnrank.spn import Leaf, Product, SpnGraph, Sum, load, save, serialize, two_variable_example


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """A small xor run through every spn stage."""
    root = tmp_path_factory.mktemp("pipe")
    steps = [
        ["data-synth", "--kind", "xor", "--n-items", 300, "--n-attributes", 8, "--rng-seed", 7, "--out", root / "data"],
        ["spn-init", "--data", root / "data/train.csv", "--k", 3, "--num-decompositions", 1, "--rng-seed", 7, "--out", root / "init.json"],
        ["spn-em", "--spn", root / "init.json", "--data", root / "data/train.csv", "--out", root / "em.json"],
        ["spn-train", "--spn", root / "em.json", "--data", root / "data/train.csv", "--iterations", 2, "--rng-seed", 7,
         "--out", root / "trained.json", "--history", root / "hist.csv"],
        ["spn-prune", "--spn", root / "trained.json", "--data", root / "data/train.csv", "--rng-seed", 7,
         "--out", root / "pruned.json", "--log", root / "prune_log.json"],
        ["spn-eval", "--spn", root / "pruned.json", "--data", root / "data/test.csv", "--out", root / "report.json",
         "--curve", root / "curve.csv"],
    ]
    for step in steps:
        assert main([str(a) for a in step]) == 0, step
    return root


def test_pipeline_outputs(pipeline):
    report = json.loads((pipeline / "report.json").read_text())
    assert [r["theta"] for r in report] == [10, 20]
    for r in report:
        assert r["accuracy"] == r["correct"] / (r["pair_count"] - r["ties"])
    hist = io.read_history(pipeline / "hist.csv")
    assert [h.iteration for h in hist] == [0, 1]
    assert (pipeline / "curve.csv").read_text().splitlines()[0] == "theta,pair_count,correct,ties,accuracy"
    log = json.loads((pipeline / "prune_log.json").read_text())
    assert log["config"]["global"]["rng_seed"] == 7


def test_eval_theta_too_large(pipeline, capsys):
    code, _, err = run(capsys, "spn-eval", "--spn", pipeline / "em.json", "--data", pipeline / "data/test.csv", "--theta", 10_000)
    assert code == 2
    assert "no qualifying pairs" in err


def test_rank_identical_rows_tie(pipeline, capsys):
    code, out, _ = run(capsys, "spn-rank", "--spn", pipeline / "pruned.json", "--a", "01100110", "--b", "01100110")
    assert code == 0
    assert json.loads(out)["order"] == "TIE"


def test_rank_by_id(pipeline, capsys):
    d = io.read_dataset(pipeline / "data/test.csv")
    code, out, _ = run(capsys, "spn-rank", "--spn", pipeline / "pruned.json", "--data", pipeline / "data/test.csv",
                       "--a", d.ids[0], "--b", d.ids[1])
    assert code == 0
    s = scores(load(pipeline / "pruned.json"), d.X[:2])
    assert json.loads(out)["score_a"] == repr(float(s[0]))


def test_data_synth_xor_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "data-synth", "--kind", "xor", "--n-items", 2000, "--n-attributes", 16, "--rng-seed", 7, "--out", tmp_path / name)[0] == 0
    for f in ("dataset.csv", "train.csv", "test.csv", "truth.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_data_synth_separable_is_linear(tmp_path, capsys):
    assert run(capsys, "data-synth", "--kind", "separable", "--n-items", 300, "--n-attributes", 10, "--margin", 1.0, "--out", tmp_path)[0] == 0
    d = io.read_dataset(tmp_path / "dataset.csv")
    model = LinearPairwiseRanker(random_state=0).fit(d.X, d.like_counts)
    assert model.score(d.X, d.like_counts, theta=10, ties="exclude") >= 0.99


def test_mtl_round_trip(tmp_path, capsys):
    assert run(capsys, "data-synth", "--kind", "planted-mtl", "--n-items", 200, "--n-attributes", 10, "--M", 4, "--out", tmp_path)[0] == 0
    data = io.load_train_set(tmp_path / "train")
    assert (data.d, data.M, len(data.y)) == (10, 4, 800)
    code, _, _ = run(capsys, "mtl-train", "--train", tmp_path / "train", "--groups", tmp_path / "groups.json", "--max-outer", 50,
                     "--out", tmp_path / "m.json", "--history", tmp_path / "h.csv", "--log", tmp_path / "log.json")
    assert code == 0
    reported = json.loads((tmp_path / "log.json").read_text())["result"]["train_accuracy"]
    code, out, _ = run(capsys, "mtl-predict", "--model", tmp_path / "m.json", "--data", tmp_path / "train", "--out", tmp_path / "pred.csv")
    assert code == 0
    assert json.loads(out)["accuracy"] == reported
    assert len((tmp_path / "pred.csv").read_text().splitlines()) == 1 + 800
    code, out, _ = run(capsys, "mtl-predict", "--model", tmp_path / "m.json", "--data", tmp_path / "test")
    assert json.loads(out)["accuracy"] > 0.8


def test_cluster_commands(tmp_path, capsys):
    assert run(capsys, "data-synth", "--kind", "patches", "--n-items", 60, "--patches-per-image", 12, "--patterns", 5,
               "--dim", 8, "--out", tmp_path / "p")[0] == 0
    feats = tmp_path / "p/features.csv"
    for name in ("m1", "m2"):
        assert run(capsys, "cluster-discover", "--features", feats, "--K-over", 20, "--N-c", 5, "--rng-seed", 3,
                   "--out", tmp_path / (name + ".json"))[0] == 0
    assert (tmp_path / "m1.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
    model, p = io.load_cluster_model(tmp_path / "m1.json")
    ids = [str(i) for i in range(60)]
    io.write_dataset(tmp_path / "sem.csv", ids, np.arange(60), np.ones((60, 3), int))
    code, _, _ = run(capsys, "cluster-assign", "--model", tmp_path / "m1.json", "--features", feats,
                     "--semantic", tmp_path / "sem.csv", "--out", tmp_path / "attrs.csv")
    assert code == 0
    d = io.read_dataset(tmp_path / "attrs.csv")
    assert d.X.shape == (60, p * model.n_clusters + 3)
    assert np.array_equal(d.like_counts, np.arange(60))
    (tmp_path / "likes.csv").write_text("id,like_count\n" + "".join("%d,%d\n" % (i, 2 * i) for i in range(60)))
    code, _, _ = run(capsys, "cluster-assign", "--model", tmp_path / "m1.json", "--features", feats,
                     "--likes", tmp_path / "likes.csv", "--out", tmp_path / "attrs2.csv")
    assert code == 0
    assert io.read_dataset(tmp_path / "attrs2.csv").X.shape == (60, p * model.n_clusters)


# --------------------------------------------------------------------------
# attribute-set probe


def dominance_spn():
    nodes = [Leaf(0, True), Leaf(0, False), Leaf(1, True), Leaf(1, False), Leaf(2, True), Leaf(2, False)]
    nodes += [Sum([0, 1], [0.9, 0.1]), Sum([2, 3], [0.5, 0.5]), Sum([4, 5], [0.3, 0.7]), Product([6, 7, 8])]
    return SpnGraph(nodes, 9, 3)


def probe(capsys, path, *sets, semantics="max"):
    argv = ["probe-attrset", "--spn", path, "--semantics", semantics]
    for s in sets:
        argv += ["--set", s]
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


def test_probe_empty_set_is_zero_vector(tmp_path, capsys):
    save(dominance_spn(), tmp_path / "s.json")
    rows = probe(capsys, tmp_path / "s.json", "")
    assert float(rows[0]["log_value"]) == scores(dominance_spn(), np.zeros((1, 3)))[0]


def test_probe_order_invariant_and_dominance(tmp_path, capsys):
    save(dominance_spn(), tmp_path / "s.json")
    rows = probe(capsys, tmp_path / "s.json", "2,0", "0,2", "0", "2")
    assert rows[0]["log_value"] == rows[1]["log_value"]
    assert rows[0]["set"] == [0, 2]
    # attribute 0 raises the value and attribute 2 lowers it
    assert [r["rank"] for r in rows] == [2, 2, 1, 4]
    summed = probe(capsys, tmp_path / "s.json", "0", "2", semantics="sum")
    assert float(summed[0]["log_value"]) == pytest.approx(np.log(0.9 * 0.5 * 0.7))


def test_probe_index_out_of_range(tmp_path, capsys):
    save(dominance_spn(), tmp_path / "s.json")
    assert run(capsys, "probe-attrset", "--spn", tmp_path / "s.json", "--set", "0,3")[0] == 2


# --------------------------------------------------------------------------
# exit codes and configuration


def test_usage_errors(capsys):
    assert run(capsys, "spn-eval", "--no-such-flag")[0] == 1
    assert run(capsys)[0] == 1
    assert run(capsys, "spn-init", "--out", "x.json")[0] == 1


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"structure": {"kk": 3}}))
    code, _, err = run(capsys, "spn-init", "--num-variables", 4, "--config", cfg, "--out", tmp_path / "s.json")
    assert code == 1
    assert "kk" in err


def test_config_precedence(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"structure": {"k": 2}}))
    assert run(capsys, "spn-init", "--num-variables", 4, "--config", cfg, "--out", tmp_path / "a.json", "--log", tmp_path / "a.log")[0] == 0
    assert json.loads((tmp_path / "a.log").read_text())["config"]["structure"]["k"] == 2
    assert run(capsys, "spn-init", "--num-variables", 4, "--config", cfg, "--k", 4, "--out", tmp_path / "b.json", "--log", tmp_path / "b.log")[0] == 0
    assert json.loads((tmp_path / "b.log").read_text())["config"]["structure"]["k"] == 4
    monkeypatch.setenv("SPNRANK_CONFIG", str(cfg))
    assert run(capsys, "spn-init", "--num-variables", 4, "--out", tmp_path / "c.json2", "--log", tmp_path / "c.log")[0] == 0
    assert json.loads((tmp_path / "c.log").read_text())["config"]["structure"]["k"] == 2


def test_malformed_data_exit_2(tmp_path, capsys):
    bad = tmp_path / "d.csv"
    bad.write_text("id,like_count,bits\na,1,0101\nb,2,01z1\n")
    code, _, err = run(capsys, "spn-init", "--data", bad, "--out", tmp_path / "s.json")
    assert code == 2
    assert "d.csv:3" in err


def test_invalid_network_exit_3(tmp_path, capsys):
    doc = json.loads(serialize(two_variable_example()))
    doc["nodes"][8]["children"] = [4, 6]  # both children cover x1
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    code, _, err = run(capsys, "spn-rank", "--spn", tmp_path / "bad.json", "--a", "10", "--b", "01")
    assert code == 3
    assert "overlapping scopes" in err


def test_node_budget_exit_1(tmp_path, capsys):
    assert run(capsys, "spn-init", "--num-variables", 16, "--max-nodes", 20, "--out", tmp_path / "s.json")[0] == 1


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "spnrank.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "spn-train" in res.stdout
    res = subprocess.run([sys.executable, "-m", "spnrank.cli", "spn-train", "--help"], capture_output=True, text=True)
    assert "default: 1e-06" in res.stdout
