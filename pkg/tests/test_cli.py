import json
import shutil

import pytest

from ehruq.cli import EXIT_CONFIG, EXIT_DEGRADED, EXIT_OK, main
from ehruq.config import ConfigError, load_config
from ehruq.experiment import plan_training
from ehruq.reports import read_table_csv

from helpers import write_config


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """synth -> train -> eval-whitebox -> eval-blackbox once on a tiny cohort."""
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root / "exp.yaml", out=str(root / "out"))
    for cmd in ("synth", "train", "eval-whitebox", "eval-blackbox"):
        assert main([cmd, "--config", str(cfg)]) == EXIT_OK, cmd
    return root, cfg, root / "out"


def test_pipeline_outputs(run):
    _, _, out = run
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["runs"]) == {"synth", "train", "eval-whitebox", "eval-blackbox"}
    assert manifest["runs"]["synth"]["seed"] == 0
    for name in ("whitebox/table1.csv", "whitebox/table1.json", "blackbox/table2.csv", "blackbox/audit.jsonl"):
        assert (out / name).exists()


def test_whitebox_table_roundtrip(run):
    _, _, out = run
    values = read_table_csv(out / "whitebox" / "table1.csv")
    reports = json.loads((out / "whitebox" / "table1.json").read_text())
    assert len(values) == 10 * 6 * 4
    for r in reports:
        for metric, v in r["metrics"].items():
            if metric in ("brier", "nll", "ece", "aece"):
                assert values[(r["task_id"], r["method"], r["tasking"], metric)] == v
    assert all(v is not None for v in values.values())


def test_whitebox_rerun_is_byte_identical(run, tmp_path):
    root, _, out = run
    cfg = write_config(tmp_path / "exp.yaml", out=str(tmp_path / "again"))
    for cmd in ("synth", "train", "eval-whitebox"):
        assert main([cmd, "--config", str(cfg)]) == EXIT_OK
    assert (tmp_path / "again/whitebox/table1.csv").read_bytes() == (out / "whitebox/table1.csv").read_bytes()
    for ckpt in (out / "checkpoints").rglob("*.json"):
        assert (tmp_path / "again" / ckpt.relative_to(out)).read_bytes() == ckpt.read_bytes()


def test_replay_is_byte_identical_without_transport(run, tmp_path):
    _, cfg, out = run
    code = main(["eval-blackbox", "--config", str(cfg), "--out", str(tmp_path), "--replay", str(out)])
    assert code == EXIT_OK
    assert (tmp_path / "blackbox/table2.csv").read_bytes() == (out / "blackbox/table2.csv").read_bytes()
    assert (tmp_path / "blackbox/table2.json").read_bytes() == (out / "blackbox/table2.json").read_bytes()
    entries = [json.loads(line) for line in (tmp_path / "blackbox/audit.jsonl").read_text().splitlines()]
    assert [e["kind"] for e in entries] == ["replay"]


def test_replay_of_non_run_dir_is_config_error(tmp_path):
    assert main(["eval-blackbox", "--out", str(tmp_path), "--replay", str(tmp_path)]) == EXIT_CONFIG


def test_missing_checkpoint_degrades(run, tmp_path):
    _, cfg, out = run
    dst = tmp_path / "out"
    shutil.copytree(out, dst)
    (dst / "checkpoints/single/baseline/long_los.json").unlink()
    assert main(["eval-whitebox", "--config", str(cfg), "--out", str(dst)]) == EXIT_DEGRADED
    values = read_table_csv(dst / "whitebox/table1.csv")
    assert values[("long_los", "baseline", "single", "ece")] is None
    assert values[("long_los", "mc_dropout", "single", "ece")] is None
    assert values[("long_los", "deep_ensemble", "single", "ece")] is not None


def test_report_single_and_two_runs(run, tmp_path):
    _, _, out = run
    assert main(["report", str(out / "whitebox"), "--out", str(tmp_path / "one"), "--bins", "7"]) == EXIT_OK
    header = (tmp_path / "one/summary.csv").read_text().splitlines()[0].split(",")
    assert header == ["task_id", "method", "tasking", "metric", "out", "best"]
    assert (tmp_path / "one/figures/ece.png").stat().st_size > 0

    rel = (tmp_path / "one/reliability/reliability__baseline__single.csv").read_text().splitlines()
    rows = [r.split(",") for r in rel[1:]]
    per_task = {}
    for r in rows:
        per_task[r[0]] = per_task.get(r[0], 0) + 1
    assert len(per_task) == 10 and set(per_task.values()) == {7}
    assert (tmp_path / "one/reliability/reliability__baseline__single.png").exists()

    two = tmp_path / "two"
    assert main(["report", str(out / "whitebox/table1.json"), str(out / "whitebox/table1.json"), "--out", str(two)]) == 0
    lines = (two / "summary.csv").read_text().splitlines()
    assert lines[0].endswith("best,delta_out_2")
    assert all(line.split(",")[-1] == "0.0" for line in lines[1:])
    assert "**" in (two / "summary.md").read_text()


def test_report_best_flags_one_per_task_metric(run, tmp_path):
    _, _, out = run
    main(["report", str(out / "blackbox"), "--out", str(tmp_path)])
    rows = [r.split(",") for r in (tmp_path / "summary.csv").read_text().splitlines()[1:]]
    best = {}
    for task, _, _, metric, value, flag in rows:
        if flag == "true":
            best.setdefault((task, metric), set()).add(value)
    directional = {(r[0], r[3]) for r in rows if r[4] and r[3] in ("auc", "uq", "accuracy")}
    assert set(best) == directional
    assert all(len(v) == 1 for v in best.values())


def test_report_schema_mismatch(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps([{"nope": 1}]))
    assert main(["report", str(bad), "--out", str(tmp_path / "r")]) == EXIT_CONFIG
    assert main(["report", str(tmp_path / "absent.json"), "--out", str(tmp_path / "r")]) == EXIT_CONFIG


def test_synth_manifest_hash_is_stable(tmp_path):
    a = tmp_path / "nested" / "a"
    b = tmp_path / "b"
    cfg = write_config(tmp_path / "exp.yaml")
    assert main(["synth", "--config", str(cfg), "--out", str(a), "--seed", "4"]) == EXIT_OK
    assert main(["synth", "--config", str(cfg), "--out", str(b), "--seed", "4"]) == EXIT_OK
    ma = json.loads((a / "manifest.json").read_text())["runs"]["synth"]
    mb = json.loads((b / "manifest.json").read_text())["runs"]["synth"]
    assert ma["seed"] == 4 and ma["files"] == mb["files"]
    first = (a / "manifest.json").read_bytes()
    assert main(["synth", "--config", str(cfg), "--out", str(a), "--seed", "4"]) == EXIT_OK
    assert (a / "manifest.json").read_bytes() == first


@pytest.mark.parametrize(
    "sections",
    [
        {"synth": {"n_patients": 0}},
        {"whitebox": {"methods": []}},
        {"whitebox": {"methods": ["bayes"]}},
        {"blackbox": {"clients": []}},
        {"typo": 1},
    ],
)
def test_bad_config_exits_2(tmp_path, sections):
    cfg = write_config(tmp_path / "exp.yaml", **sections)
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_missing_inputs_exit_2(tmp_path):
    cfg = write_config(tmp_path / "exp.yaml")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "empty")]) == EXIT_CONFIG
    assert main(["synth", "--config", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG


def test_checkpoint_grid_count():
    cfg = load_config(overrides={"whitebox": {"methods": ["baseline", "deep_ensemble"]}})
    jobs = plan_training(cfg, input_dim=8)
    assert len(jobs) == 10 + 3 + 50 + 15
    assert len({j.relpath for j in jobs}) == len(jobs)
    members = [j.config.seed for j in jobs if j.method == "deep_ensemble" and j.unit == "long_los"]
    assert len(set(members)) == 5


def test_mc_dropout_alone_still_trains_baselines():
    cfg = load_config(overrides={"whitebox": {"methods": ["mc_dropout"]}})
    assert {j.method for j in plan_training(cfg, 8)} == {"baseline"}


def test_empty_grid_is_rejected():
    with pytest.raises(ConfigError):
        load_config(overrides={"whitebox": {"tasking": []}})


def test_api_key_is_not_a_flag(capsys):
    with pytest.raises(SystemExit):
        main(["eval-blackbox", "--api-key", "sk-test"])
    assert "unrecognized arguments" in capsys.readouterr().err
