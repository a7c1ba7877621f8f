"""End-to-end command-line workflows and exit codes."""

import json

import numpy as np
import pytest

from voxcnn import checkpoint, graph, records
from voxcnn.cli import main
from voxcnn.fixtures import fixture_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


# ---------------------------------------------------------------------------
# inspect


def test_inspect_pet_8_totals(capsys):
    code, out, _ = run(capsys, "inspect", fixture_path("pet_8"))
    assert code == 0
    assert "Total params: 3,755,795" in out
    assert "Trainable params: 3,755,667" in out
    assert "Non-trainable params: 128" in out


def test_inspect_mri_1_total(capsys):
    code, out, _ = run(capsys, "inspect", fixture_path("mri_1"))
    assert code == 0
    assert "337,124,835" in out


def test_inspect_malformed_file_exits_1(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    code, out, err = run(capsys, "inspect", str(bad))
    assert code == 1
    assert err != ""
    assert list(tmp_path.iterdir()) == [bad]  # no partial outputs


def test_inspect_missing_file_exits_1(capsys, tmp_path):
    code, _, err = run(capsys, "inspect", str(tmp_path / "nope.json"))
    assert code == 1 and err != ""


# ---------------------------------------------------------------------------
# pipeline: gen-synth -> split -> train -> test-eval -> rkfold


@pytest.fixture(scope="module")
def cli_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli-data")
    assert main(["gen-synth", "--per-class", "6", "--dims", "16,16,16",
                 "--seed", "7", "--out-dir", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def hyper_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "hyper.json"
    p.write_text(json.dumps({
        "lr0": 3e-3, "decay_rate": 0.96, "epochs": 2, "batch_size": 6, "seed": 5,
    }))
    return p


def test_gen_synth_writes_records_and_manifest(cli_data):
    manifest = records.read_manifest(cli_data / "manifest.json")
    assert manifest.class_counts == {"CN": 6, "AD": 6, "MCI": 6}
    assert len(list(cli_data.glob("*.rec"))) == 18


def test_split_writes_stratified_index(capsys, cli_data, tmp_path):
    out = tmp_path / "split.json"
    code, _, _ = run(capsys, "split", "--data", str(cli_data),
                     "--test-frac", "0.5", "--seed", "1", "--out", str(out))
    assert code == 0
    doc = json.loads(out.read_text())
    assert len(doc["test"]) == 9
    assert doc["test_class_counts"] == {"CN": 3, "AD": 3, "MCI": 3}
    assert set(doc["train"]).isdisjoint(doc["test"])


def test_train_then_test_eval(capsys, cli_data, hyper_file, tmp_path):
    run_dir = tmp_path / "run"
    code, out, _ = run(capsys, "train",
                       "--arch", fixture_path("pet_8_mini"),
                       "--hyper", str(hyper_file),
                       "--data", str(cli_data),
                       "--out-dir", str(run_dir))
    assert code == 0
    assert (run_dir / "model.avc").exists()
    curve = (run_dir / "curve.csv").read_text().splitlines()
    assert curve[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
    assert len(curve) == 3  # header + 2 epochs

    metrics = tmp_path / "metrics.json"
    code, out, _ = run(capsys, "test-eval",
                       "--checkpoint", str(run_dir / "model.avc"),
                       "--data", str(cli_data),
                       "--out", str(metrics))
    assert code == 0
    doc = json.loads(metrics.read_text())
    assert np.array(doc["confusion"]).shape == (3, 3)
    assert np.array(doc["confusion"]).sum() == 18
    assert 0.0 <= doc["accuracy"] <= 1.0
    assert doc["class_order"] == ["CN", "AD", "MCI"]


def test_rkfold_run_count_and_artifacts(capsys, cli_data, hyper_file, tmp_path):
    out_dir = tmp_path / "rk"
    code, out, _ = run(capsys, "rkfold",
                       "--arch", fixture_path("pet_8_mini"),
                       "--hyper", str(hyper_file),
                       "--data", str(cli_data),
                       "--k", "3", "--reps", "2",
                       "--out-dir", str(out_dir))
    assert code == 0
    report = json.loads((out_dir / "report.json").read_text())
    assert report["k"] == 3 and report["reps"] == 2
    assert len(report["runs"]) == 6
    assert not report["any_failed"]
    assert (out_dir / "mean_curve.csv").exists()


def test_cli_seed_override_changes_artifacts(capsys, cli_data, hyper_file, tmp_path):
    outs = []
    for seed in ("5", "5", "6"):
        d = tmp_path / f"s{len(outs)}"
        code, _, _ = run(capsys, "train",
                         "--arch", fixture_path("mri_9_mini"),
                         "--hyper", str(hyper_file),
                         "--data", str(cli_data), "--modality", "MRI",
                         "--seed", seed, "--out-dir", str(d))
        assert code == 0
        outs.append((d / "model.avc").read_bytes())
    assert outs[0] == outs[1]  # byte-identical artifacts under the same seed
    assert outs[0] != outs[2]


# ---------------------------------------------------------------------------
# preprocess / augment-preview / surgery


def test_preprocess_command(capsys, cli_data, tmp_path):
    chain = tmp_path / "chain.json"
    chain.write_text(json.dumps([{"op": "minmax"}]))
    out_dir = tmp_path / "prep"
    code, _, _ = run(capsys, "preprocess", "--data", str(cli_data),
                     "--chain", str(chain), "--out-dir", str(out_dir))
    assert code == 0
    rec = records.read_record(next(iter(sorted(out_dir.glob("*.rec")))))
    for _, vol in rec.volumes:
        assert vol.min() == 0.0 and vol.max() == 1.0


def test_augment_preview_command(capsys, cli_data, tmp_path):
    cfg = tmp_path / "aug.json"
    cfg.write_text(json.dumps({"max_rotation_deg": 0.5, "max_shift_frac": 0.02}))
    src = next(iter(sorted(cli_data.glob("*.rec"))))
    out = tmp_path / "preview.rec"
    code, _, _ = run(capsys, "augment-preview", "--record", str(src),
                     "--config", str(cfg), "--seed", "3", "--out", str(out))
    assert code == 0
    before = records.read_record(src)
    after = records.read_record(out)
    assert after.subject_id == before.subject_id + "-aug"
    assert not np.array_equal(after.volume("PET"), before.volume("PET"))


def test_surgery_command(capsys, tmp_path):
    spec = graph.build_resnet18_3d((32, 32, 32, 1))
    model = graph.build(spec, seed=0)
    src = tmp_path / "resnet.avc"
    checkpoint.save_checkpoint(model, src)
    out = tmp_path / "backbone.avc"
    code, stdout, _ = run(capsys, "surgery", "--checkpoint", str(src),
                          "--mode", "mri", "--seed", "2", "--out", str(out))
    assert code == 0
    assert "1,539 trainable" in stdout
    back = checkpoint.load_checkpoint(out)
    assert sum(p.values.size for p in back.params() if p.trainable) == 1539


# ---------------------------------------------------------------------------
# exit codes


def test_corrupt_data_exits_2(capsys, tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    (d / "bad.rec").write_bytes(b"AVR1" + b"\x00" * 8)
    code, _, err = run(capsys, "split", "--data", str(d),
                       "--test-frac", "0.2", "--out", str(tmp_path / "i.json"))
    assert code == 2 and err != ""


def test_bad_hyper_file_exits_1(capsys, cli_data, tmp_path):
    hyper = tmp_path / "hyper.json"
    hyper.write_text('{"lr0": -1}')
    code, _, err = run(capsys, "train", "--arch", fixture_path("pet_8_mini"),
                       "--hyper", str(hyper), "--data", str(cli_data),
                       "--out-dir", str(tmp_path / "o"))
    assert code == 1 and err != ""


def test_numeric_failure_exits_3(capsys, cli_data, tmp_path):
    hyper = tmp_path / "hyper.json"
    hyper.write_text(json.dumps({"lr0": 1e30, "epochs": 3, "batch_size": 6, "seed": 0}))
    code, _, err = run(capsys, "train", "--arch", fixture_path("pet_8_mini"),
                       "--hyper", str(hyper), "--data", str(cli_data),
                       "--out-dir", str(tmp_path / "o"))
    assert code == 3 and err != ""
