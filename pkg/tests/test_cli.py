import csv
import json

import pytest

from graphdistill import cli

SMALL = {
    "dataset": {"sbm": {"nodes_per_block": 100, "feature_dim": 8}},
    "teacher": {"epochs": 20, "hidden_dim": 16},
    "positions": {"dim": 8, "walks_per_node": 4, "walk_length": 10, "epochs": 1},
    "distill": {"epochs": 15, "hidden_dim": 16, "rsd_batch": 64},
    "evaluation": {"seeds": [0, 1], "repeats": 10, "warmup": 1},
}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


def run(*argv):
    return cli.main([str(a) for a in argv])


def run_dir(out):
    (d,) = list(out.iterdir())
    return d


# validate ---------------------------------------------------------------------


def test_validate_prints_all_defaults(tmp_path, capsys):
    p = tmp_path / "min.json"
    p.write_text("{}")
    assert run("validate", p) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["distill"]["step_size"] == 0.01
    assert set(printed) == {"dataset", "split", "teacher", "positions", "distill", "evaluation",
                            "seed", "output"}


def test_validate_empty_file(tmp_path, capsys):
    p = tmp_path / "empty.json"
    p.write_text("")
    assert run("validate", p) == 1


def test_validate_negative_epsilon(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"distill": {"epsilon": -0.1}}))
    assert run("validate", p) == 1
    assert "distill.epsilon" in capsys.readouterr().err


def test_validate_applies_overrides(cfg_file, capsys):
    assert run("validate", cfg_file, "--distill.eta=0.2", "--seed", 5) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["distill"]["eta"] == 0.2 and printed["seed"] == 5


def test_unknown_override_rejected(cfg_file, capsys):
    assert run("validate", cfg_file, "--distill.bogus=1") == 1
    assert "distill.bogus" in capsys.readouterr().err


# pipeline stages ------------------------------------------------------------


def test_distill_without_teacher_names_path(tmp_path, cfg_file, capsys):
    out = tmp_path / "out"
    assert run("prepare", "--config", cfg_file, "--out", out) == 0
    assert run("distill", "--config", cfg_file, "--out", out) == 1
    err = capsys.readouterr().err
    assert str(run_dir(out) / "teacher" / "teacher.bin") in err


def test_full_pipeline_manifests_and_resume(tmp_path, cfg_file, capsys):
    out = tmp_path / "out"
    assert run("all", "--config", cfg_file, "--out", out) == 0
    root = run_dir(out)
    assert root.name.startswith("run-")
    for stage in ("dataset", "teacher", "positions", "student", "report"):
        m = json.loads((root / stage / "manifest.json").read_text())
        assert m["seed"] == 0 and m["config_hash"] and m["outputs"]
    m = json.loads((root / "student" / "manifest.json").read_text())
    assert {"teacher.bin", "positions.csv", "features.csv"} <= set(m["inputs"])
    meta = json.loads((root / "student" / "student.meta.json").read_text())
    assert meta["provenance"]["teacher_checkpoint_sha256"] == m["inputs"]["teacher.bin"]

    # resumable: an up-to-date stage is skipped, --force rewrites the same bytes
    teacher_bin = root / "teacher" / "teacher.bin"
    before = teacher_bin.read_bytes()
    stamp = teacher_bin.stat().st_mtime_ns
    assert run("train-teacher", "--config", cfg_file, "--out", out) == 0
    assert teacher_bin.stat().st_mtime_ns == stamp
    assert run("train-teacher", "--config", cfg_file, "--out", out, "--force") == 0
    assert teacher_bin.read_bytes() == before


def test_evaluate_twice_identical_report(tmp_path, cfg_file, capsys):
    out = tmp_path / "out"
    assert run("all", "--config", cfg_file, "--out", out) == 0
    report = run_dir(out) / "report" / "report.json"
    first = json.loads(report.read_text())
    assert run("evaluate", "--config", cfg_file, "--out", out, "--check") == 0
    second = json.loads(report.read_text())
    for r in (first, second):
        r.pop("latency")
    assert json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)
    assert 0.0 <= first["accuracy_prod"] <= 1.0


def test_override_changes_run_directory(tmp_path, cfg_file):
    out = tmp_path / "out"
    assert run("prepare", "--config", cfg_file, "--out", out) == 0
    assert run("prepare", "--config", cfg_file, "--out", out, "--distill.eta=0.2") == 0
    assert len(list(out.iterdir())) == 2


def test_dataset_directory(tmp_path, cfg_file):
    out = tmp_path / "out"
    assert run("prepare", "--config", cfg_file, "--out", out) == 0
    data = run_dir(out) / "dataset"
    out2 = tmp_path / "out2"
    assert run("prepare", "--config", cfg_file, "--out", out2, "--dataset", data) == 0
    copied = run_dir(out2) / "dataset"
    for name in ("edges.tsv", "features.csv", "labels.csv", "split.json"):
        assert (copied / name).read_bytes() == (data / name).read_bytes()


def test_missing_dataset_directory(tmp_path, cfg_file, capsys):
    assert run("prepare", "--config", cfg_file, "--out", tmp_path / "o", "--dataset", tmp_path / "nope") == 1
    assert "edges.tsv" in capsys.readouterr().err


def test_corrupt_dataset_is_runtime_error(tmp_path, cfg_file, capsys):
    d = tmp_path / "data"
    d.mkdir()
    (d / "edges.tsv").write_text("0\t9\n")
    (d / "features.csv").write_text("1\n2\n")
    (d / "labels.csv").write_text("0\n1\n")
    assert run("prepare", "--config", cfg_file, "--out", tmp_path / "o", "--dataset", d) == 2
    assert "node 9" in capsys.readouterr().err


def test_check_failure_exit_code(tmp_path, cfg_file, monkeypatch):
    def failing(ctx):
        raise cli.CheckFailed("forced")

    monkeypatch.setitem(cli.HANDLERS, "evaluate", failing)
    assert run("evaluate", "--config", cfg_file, "--out", tmp_path / "o", "--check") == 3


def test_ablate_small_sbm(tmp_path, cfg_file, capsys):
    out = tmp_path / "out"
    assert run("ablate", "--config", cfg_file, "--out", out, "--dataset", "sbm", "--check") == 0
    rows = list(csv.reader(open(run_dir(out) / "ablation" / "ablation.csv")))
    assert rows[0] == ["variant", "mean_acc", "std_acc"]
    assert [r[0] for r in rows[1:]] == ["full", "w/o POS", "w/o RSD", "w/o ADV"]


def test_noise_sweep_curve(tmp_path, cfg_file, capsys):
    out = tmp_path / "out"
    assert run("noise-sweep", "--config", cfg_file, "--out", out, "--evaluation.seeds=[0]") == 0
    rows = list(csv.reader(open(run_dir(out) / "noise" / "noise_curve.csv")))
    assert [float(r[0]) for r in rows[1:]] == [0.0, 0.5, 1.0]


def test_bench_writes_stats(tmp_path, cfg_file, capsys):
    out = tmp_path / "out"
    assert run("bench", "--config", cfg_file, "--out", out, "--evaluation.bench_nodes_per_block=100") == 0
    stats = json.loads((run_dir(out) / "bench" / "bench.json").read_text())
    assert stats["num_nodes"] == 200 and stats["speedup"] > 0
    assert "speedup" in capsys.readouterr().out
