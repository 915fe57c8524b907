import csv
import json

import numpy as np
import pytest

from ssbridge.cli import main, sample_label
from ssbridge.config import ConfigError, RunConfig, load_config
from ssbridge.pgm import read_pgm, write_pgm
from ssbridge.synthdata import read_manifest

TINY = ["--set", "train.eta=2", "--set", "arch.channels=[8,16]", "--set", "schedule.n_steps=10"]


def _tree(root, skip=("run_config.json",)):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name not in skip}


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(root), "--count", "6", "--size", "8",
                 "--experts", "2", "--split", "0.5"]) == 0
    return root


@pytest.fixture(scope="module")
def small_ckpt(small_data, tmp_path_factory):
    ckpt = tmp_path_factory.mktemp("run") / "m.ssbc"
    assert main(["train", "--data", str(small_data), "--out", str(ckpt), "--steps", "5",
                 "--batch", "2"] + TINY) == 0
    return ckpt


def test_gen_data_counts_and_idempotence(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path / "a"), "--count", "100", "--size", "8"]) == 0
    m = read_manifest(tmp_path / "a")
    assert sum(len(r["masks"]) for r in m["records"]) == 400
    assert main(["gen-data", "--out", str(tmp_path / "b"), "--count", "100", "--size", "8"]) == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def test_gen_data_empty_and_bad_config(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path / "e"), "--count", "0"]) == 0
    assert read_manifest(tmp_path / "e")["records"] == []
    assert main(["gen-data", "--out", str(tmp_path / "x"), "--ambiguity", "2"]) == 2
    assert main(["gen-data"]) == 2
    assert main(["no-such-command"]) == 2


def test_train_outputs(small_ckpt):
    run = small_ckpt.parent
    rows = list(csv.reader((run / "loss_trace.csv").open()))
    assert rows[0] == ["iteration", "loss"] and len(rows) == 6
    echoed = json.loads((run / "run_config.json").read_text())
    assert echoed["train"]["steps"] == 5 and echoed["arch"]["grid_size"] == 8
    assert RunConfig.from_dict(echoed).to_dict() == echoed


def test_train_is_byte_deterministic(small_data, small_ckpt, tmp_path):
    again = tmp_path / "m.ssbc"
    assert main(["train", "--data", str(small_data), "--out", str(again), "--steps", "5",
                 "--batch", "2"] + TINY) == 0
    assert again.read_bytes() == small_ckpt.read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_errors(small_data, tmp_path):
    out = str(tmp_path / "m.ssbc")
    assert main(["train", "--data", str(small_data), "--out", out, "--set", "train.nope=1"]) == 2
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", out]) == 2
    # default eta of 4 needs four experts per record
    assert main(["train", "--data", str(small_data), "--out", out, "--steps", "1",
                 "--set", "arch.channels=[8,16]"]) == 2
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"version": 1, "train": {"lr": 1e30}, "schedule": {"n_steps": 10}}))
    assert main(["train", "--data", str(small_data), "--out", out, "--config", str(bad),
                 "--steps", "3", "--batch", "2", "--set", "train.eta=2",
                 "--set", "arch.channels=[8,16]"]) == 3


def test_sample_layout_and_determinism(small_data, small_ckpt, tmp_path):
    args = ["sample", "--ckpt", str(small_ckpt), "--data", str(small_data), "--num-samples", "3",
            "--nfe", "5"]
    assert main(args + ["--out", str(tmp_path / "a"), "--save-continuous"]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--save-continuous"]) == 0
    pred = sorted(p.name for p in (tmp_path / "a" / "pred").iterdir())
    assert pred == [f"r0000{i}_s{j}.pgm" for i in (3, 4, 5) for j in range(3)]
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    m = read_pgm(tmp_path / "a" / "pred" / "r00003_s1.pgm")
    cont = np.load(tmp_path / "a" / "continuous" / "r00003_s1.npy")
    assert set(np.unique(m)) <= {0, 255}
    np.testing.assert_array_equal(m == 255, cont >= 0.5)
    assert main(args + ["--out", str(tmp_path / "c"), "--omega", "0", "--seed", "1"]) == 0
    assert _tree(tmp_path / "c" / "pred") != _tree(tmp_path / "a" / "pred")


def test_sample_errors(small_data, small_ckpt, tmp_path):
    base = ["sample", "--data", str(small_data), "--out", str(tmp_path / "o")]
    assert main(base + ["--ckpt", str(tmp_path / "none.ssbc")]) == 2
    assert main(base + ["--ckpt", str(small_ckpt), "--nfe", "50"]) == 2
    assert main(base + ["--ckpt", str(small_ckpt), "--num-samples", "0"]) == 2


def test_sample_labels_cycle_through_experts():
    assert [sample_label(j, 4) for j in range(6)] == [1, 2, 3, 4, 1, 2]


def _copy_experts_as_predictions(data, pred):
    for rec in read_manifest(data)["records"]:
        for k, rel in enumerate(rec["masks"]):
            write_pgm(pred / "pred" / f"{rec['id']}_s{k}.pgm", read_pgm(data / rel))


def test_evaluate_perfect_predictions(small_data, tmp_path):
    _copy_experts_as_predictions(small_data, tmp_path)
    report = tmp_path / "r.csv"
    assert main(["evaluate", "--pred", str(tmp_path), "--data", str(small_data),
                 "--report", str(report)]) == 0
    rows = list(csv.DictReader(report.open()))
    assert list(rows[0]) == ["id", "ged", "d_max", "ci", "d_a", "ddi_exp", "ddi_gen"]
    assert [r["id"] for r in rows] == ["r00003", "r00004", "r00005", "AGGREGATE"]
    for r in rows:
        assert float(r["ged"]) == pytest.approx(0.0, abs=1e-12)
        assert float(r["d_max"]) == 1.0 and float(r["ci"]) == 1.0
    # the pred/ subdirectory itself is accepted too
    assert main(["evaluate", "--pred", str(tmp_path / "pred"), "--data", str(small_data),
                 "--report", str(tmp_path / "r2.csv")]) == 0
    assert (tmp_path / "r2.csv").read_bytes() == report.read_bytes()


def _fixture_dataset(root):
    a = np.array([[1, 1], [0, 0]], np.uint8)
    b = np.array([[1, 0], [1, 0]], np.uint8)
    records = []
    for rid, masks in (("p0", [a]), ("p1", [a, b])):
        write_pgm(root / "img" / f"{rid}.pgm", np.zeros((2, 2), np.uint8))
        rels = []
        for k, m in enumerate(masks, start=1):
            rel = f"masks/{rid}_e{k}.pgm"
            write_pgm(root / rel, m * 255)
            rels.append(rel)
        records.append({"id": rid, "image": f"img/{rid}.pgm", "masks": rels, "split": "test"})
    (root / "manifest.json").write_text(json.dumps(
        {"format_version": 1, "generator_version": "1", "config": {}, "records": records}))
    return a, b


def test_evaluate_hand_fixture(tmp_path):
    a, b = _fixture_dataset(tmp_path / "d")
    pred = tmp_path / "p"
    write_pgm(pred / "p0_s0.pgm", b * 255)
    write_pgm(pred / "p1_s0.pgm", a * 255)
    write_pgm(pred / "p1_s1.pgm", a * 255)
    report = tmp_path / "r.csv"
    assert main(["evaluate", "--pred", str(pred), "--data", str(tmp_path / "d"),
                 "--report", str(report)]) == 0
    rows = {r["id"]: r for r in csv.DictReader(report.open())}
    # p0: one expert a, one sample b; 1-IoU(a,b) = 2/3, Dice = 1/2
    p0 = rows["p0"]
    assert float(p0["ged"]) == pytest.approx(2 * 2 / 3, abs=1e-9)
    assert float(p0["d_max"]) == pytest.approx(0.5, abs=1e-9)
    assert float(p0["ci"]) == pytest.approx(0.5, abs=1e-9)
    assert p0["d_a"] == "" and p0["ddi_exp"] == "" and p0["ddi_gen"] == ""
    # p1: experts {a, b}, samples {a, a}
    # GED = 2*mean d(g,e) - mean d(g,g') - mean d(e,e') = 2*(1/3) - 0 - (1/3) = 1/3
    p1 = rows["p1"]
    assert float(p1["ged"]) == pytest.approx(1 / 3, abs=1e-9)
    assert float(p1["d_max"]) == pytest.approx(0.75, abs=1e-9)
    # experts combine to {a or b} at >= 0.5 -> 3 pixels; samples combine to a
    assert float(p1["ci"]) == pytest.approx(2 * 2 / 5, abs=1e-9)
    assert float(p1["d_a"]) == pytest.approx(0.0, abs=1e-9)
    # rows (experts): a -> (1, 1)/2 uniform, b -> (.5, .5) uniform: identical rows
    assert float(p1["ddi_exp"]) == pytest.approx(0.0, abs=1e-9)
    # columns (samples) are identical
    assert float(p1["ddi_gen"]) == pytest.approx(0.0, abs=1e-9)
    agg = rows["AGGREGATE"]
    assert float(agg["ged"]) == pytest.approx((4 / 3 + 1 / 3) / 2, abs=1e-9)
    assert agg["ddi_exp"] == "0.0" and float(agg["d_a"]) == pytest.approx(0.0, abs=1e-9)


def test_evaluate_missing_predictions(small_data, tmp_path):
    (tmp_path / "pred").mkdir()
    assert main(["evaluate", "--pred", str(tmp_path), "--data", str(small_data),
                 "--report", str(tmp_path / "r.csv")]) == 2
    assert not (tmp_path / "r.csv").exists()


def test_verify_passes_and_fault_is_caught(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "gradient check" in out and "FAIL" not in out
    assert main(["verify", "--inject-fault", "corrupt-schedule"]) == 1
    assert "bridge moments         FAIL" in capsys.readouterr().out


def test_threads_env(small_data, small_ckpt, tmp_path, monkeypatch):
    args = ["sample", "--ckpt", str(small_ckpt), "--data", str(small_data), "--nfe", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("SSB_THREADS", "3")
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert _tree(tmp_path / "a" / "pred") == _tree(tmp_path / "b" / "pred")
    monkeypatch.setenv("SSB_THREADS", "zero")
    assert main(args + ["--out", str(tmp_path / "c")]) == 2


def test_config_file_round_trip_and_validation(tmp_path):
    cfg = RunConfig().override({"train.steps": 7, "schedule.beta_max": 0.1})
    path = tmp_path / "c.json"
    path.write_text(cfg.dumps())
    back = load_config(path)
    assert back.to_dict() == cfg.to_dict() and back.make_schedule().origin == {"n_steps": 50, "beta_max": 0.1}
    for bad in ({"version": 2}, {"extra": {}}, {"sample": {"nfe": 0}}, {"arch": {"eta": 3}},
                {"schedule": {"steps": 3}}):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad)
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="c.json"):
        load_config(path)
