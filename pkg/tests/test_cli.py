import json
import subprocess
import sys
from pathlib import Path

import pytest

from cmtc.cli import main, read_ablation_table
from cmtc.reid.model import ABLATIONS


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def smoke_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--preset", "smoke", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def smoke_run(smoke_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert main(["train", "--preset", "smoke", "--data", str(smoke_data), "--out", str(out), "--epochs", "1"]) == 0
    return out


# -- synth ----------------------------------------------------------------------

def test_synth_default_preset_writes_64_streams(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "d")]) == 0
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert len(manifest["clips"]) == 8 * 2 * 4
    assert len(list((tmp_path / "d" / "events").iterdir())) == 64


def test_synth_manifest_matches_files(smoke_data):
    manifest = json.loads((smoke_data / "manifest.json").read_text())
    files = sorted(p.relative_to(smoke_data).as_posix() for p in (smoke_data / "events").iterdir())
    assert sorted(r["path"] for r in manifest["clips"]) == files
    assert len(list((smoke_data / "masks").iterdir())) == len(manifest["clips"])


def test_synth_same_seed_is_byte_identical(smoke_data, tmp_path):
    assert main(["synth", "--preset", "smoke", "--out", str(tmp_path / "again")]) == 0
    assert tree_bytes(tmp_path / "again") == tree_bytes(smoke_data)
    assert main(["synth", "--preset", "smoke", "--seed", "5", "--out", str(tmp_path / "other")]) == 0
    assert tree_bytes(tmp_path / "other") != tree_bytes(smoke_data)


def test_synth_refuses_non_empty_dir_without_force(tmp_path):
    out = tmp_path / "d"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["synth", "--preset", "smoke", "--out", str(out)]) == 1
    assert [p.name for p in out.iterdir()] == ["keep.txt"]
    assert main(["synth", "--preset", "smoke", "--out", str(out), "--force"]) == 0
    assert (out / "manifest.json").exists() and not (out / "keep.txt").exists()


@pytest.mark.parametrize("argv", [
    ["--set", "data.num_ids=1"],
    ["--set", "data.height=30"],
    ["--set", "nonsense=3"],
    ["--set", "train.lr=0"],
])
def test_invalid_config_writes_nothing(tmp_path, argv):
    out = tmp_path / "d"
    assert main(["synth", "--preset", "smoke", "--out", str(out)] + argv) == 1
    assert not out.exists()


def test_invalid_config_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "d")]) == 1
    bad.write_text(json.dumps({"train": {"batch_p": "four"}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "d")]) == 1
    assert not (tmp_path / "d").exists()


# -- train / eval ---------------------------------------------------------------

def test_train_smoke_outputs(smoke_run):
    names = {p.name for p in smoke_run.iterdir()}
    assert {"config.json", "metrics.csv", "checkpoints", "eventnet", "eval"} <= names
    lines = (smoke_run / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,lr,loss,ce,triplet,aux,rank1,rank5,rank10,map" and len(lines) == 2


def test_train_baseline_disables_eventnet(smoke_data, tmp_path):
    out = tmp_path / "base"
    assert main(["train", "--preset", "smoke", "--data", str(smoke_data), "--out", str(out),
                 "--ablation", "baseline"]) == 0
    assert json.loads((out / "config.json").read_text())["ablation"] == "baseline"
    assert not (out / "eventnet").exists()
    from cmtc.tensor import load_checkpoint
    keys = load_checkpoint(next((out / "checkpoints").iterdir())).keys()
    assert not any(k.startswith(("model.eventnet", "model.mc", "model.tc")) for k in keys)


def test_train_rejects_unknown_ablation_before_writing(smoke_data, tmp_path):
    out = tmp_path / "x"
    assert main(["train", "--preset", "smoke", "--data", str(smoke_data), "--out", str(out), "--ablation", "mc"]) == 1
    assert not out.exists()


def test_train_missing_dataset(tmp_path):
    assert main(["train", "--preset", "smoke", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "r")]) == 1
    assert not (tmp_path / "r").exists()


def test_train_rerun_is_bit_identical(smoke_data, smoke_run, tmp_path):
    out = tmp_path / "again"
    assert main(["train", "--preset", "smoke", "--data", str(smoke_data), "--out", str(out), "--epochs", "1"]) == 0
    for name in ("metrics.csv", "eval/report.json", "eval/report.csv", "eval/rankings.csv"):
        assert (out / name).read_bytes() == (smoke_run / name).read_bytes()


def test_resume_matches_uninterrupted(smoke_data, tmp_path):
    base = ["train", "--preset", "smoke", "--data", str(smoke_data)]
    assert main(base + ["--out", str(tmp_path / "a"), "--epochs", "2"]) == 0
    assert main(base + ["--out", str(tmp_path / "b"), "--epochs", "1"]) == 0
    assert main(base + ["--out", str(tmp_path / "b"), "--epochs", "2", "--resume"]) == 0
    for name in ("metrics.csv", "eval/report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_resume_rejects_changed_config(smoke_data, smoke_run):
    assert main(["train", "--preset", "smoke", "--data", str(smoke_data), "--out", str(smoke_run),
                 "--resume", "--set", "train.lr=0.01"]) == 1


def test_eval_report_and_rerun_equality(smoke_data, smoke_run, tmp_path):
    for out in ("e1", "e2"):
        assert main(["eval", "--run", str(smoke_run), "--data", str(smoke_data), "--out", str(tmp_path / out)]) == 0
    report = json.loads((tmp_path / "e1" / "report.json").read_text())
    assert all(0 <= report[k] <= 1 for k in ("rank1", "rank5", "rank10", "map"))
    assert tree_bytes(tmp_path / "e1") == tree_bytes(tmp_path / "e2")
    # the report written at the end of training agrees with a fresh evaluation
    assert (tmp_path / "e1" / "report.json").read_bytes() == (smoke_run / "eval" / "report.json").read_bytes()


def test_eval_missing_checkpoint(smoke_data, smoke_run, tmp_path):
    assert main(["eval", "--run", str(smoke_run), "--data", str(smoke_data),
                 "--checkpoint", str(tmp_path / "nope.ckpt"), "--out", str(tmp_path / "e")]) == 1
    assert main(["eval", "--run", str(tmp_path), "--data", str(smoke_data)]) == 1
    assert not (tmp_path / "e").exists()


def test_runtime_failure_exit_code(smoke_data, tmp_path):
    broken = tmp_path / "broken"
    assert main(["synth", "--preset", "smoke", "--out", str(broken)]) == 0
    victim = next((broken / "events").iterdir())
    victim.write_bytes(victim.read_bytes()[:-5])
    assert main(["train", "--preset", "smoke", "--data", str(broken), "--out", str(tmp_path / "r")]) == 2


# -- ablate -----------------------------------------------------------------------

def test_ablate_table_shape_and_order(smoke_data, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--preset", "smoke", "--data", str(smoke_data), "--out", str(out), "--seeds", "2",
                 "--epochs", "1"]) == 0
    rows = read_ablation_table(out / "ablation.csv")
    assert [r["config"] for r in rows] == list(ABLATIONS)
    assert [(r["eventnet"], r["mc"], r["tc"]) for r in rows] == [(0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 0, 1), (1, 1, 1)]
    seed_cols = [k for k in rows[0] if k.startswith("rank1_seed")]
    assert seed_cols == ["rank1_seed0", "rank1_seed1"]
    assert len(list((out / "runs").iterdir())) == 10


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "cmtc", "synth", "--preset", "smoke", "--out", str(tmp_path / "d"),
                          "--set", "data.num_ids=1"], capture_output=True, text=True)
    assert res.returncode == 1 and "identities" in res.stderr
