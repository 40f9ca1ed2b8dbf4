"""End-to-end CLI verbs and exit codes."""

import json

import numpy as np

from oncokit.cli import main
from oncokit.volume import Volume, read_volume, write_volume


def test_synth_then_train_cox(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--n", "60", "--seed", "3",
                 "--beta", "1.2,-0.4"]) == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "task": "surv-cox", "data_dir": str(data),
        "output_dir": str(tmp_path / "out"), "seed": 11, "cv_folds": 3}))
    assert main(["train", "--config", str(cfg)]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["task"] == "surv-cox"
    assert "c_index_mean" in report["aggregate"]


def test_train_set_override(tmp_path):
    data = tmp_path / "data"
    main(["synth", "--out", str(data), "--n", "30", "--seed", "3"])
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "task": "surv-cox", "data_dir": str(data),
        "output_dir": str(tmp_path / "out"), "seed": 1, "cv_folds": 5}))
    assert main(["train", "--config", str(cfg), "--set", "cv_folds=2"]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["config"]["cv_folds"] == 2
    assert len(report["folds"]) == 2


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"task": "nope", "data_dir": str(tmp_path),
                               "output_dir": str(tmp_path / "o"), "seed": 1}))
    assert main(["train", "--config", str(cfg)]) == 2


def test_prep_and_convert_roundtrip(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    rng = np.random.default_rng(0)
    write_volume(Volume(rng.uniform(-2000, 2000, (6, 6, 12)).astype(np.float32),
                        (1, 1, 1), "CT"), raw / "a_ct.mvol")
    write_volume(Volume(np.abs(rng.normal(1, 1, (6, 6, 12))).astype(np.float32),
                        (1, 1, 1), "PET"), raw / "a_pet.mvol")
    prepped = tmp_path / "prepped"
    assert main(["prep", "--input", str(raw), "--out", str(prepped)]) == 0
    ct = read_volume(prepped / "a_ct.mvol")
    assert float(ct.data.min()) >= -1.0 and float(ct.data.max()) <= 1.0

    si = tmp_path / "si"
    back = tmp_path / "back"
    assert main(["convert", "si", "--input", str(prepped), "--out", str(si)]) == 0
    assert (si / "a_ct.si.json").exists()
    assert main(["convert", "si", "--input", str(si), "--out", str(back),
                 "--invert"]) == 0
    assert (back / "a_ct.mvol").read_bytes() == (prepped / "a_ct.mvol").read_bytes()


def test_convert_bad_grid_exit_code(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    write_volume(Volume(np.zeros((4, 4, 10), dtype=np.float32), (1, 1, 1), "CT"),
                 raw / "v.mvol")
    assert main(["convert", "si", "--input", str(raw), "--out",
                 str(tmp_path / "si"), "--grid", "2x2"]) == 3


def test_predict_and_eval_survival(tmp_path):
    data = tmp_path / "data"
    main(["synth", "--out", str(data), "--n", "80", "--seed", "5",
          "--beta", "1.5"])
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "task": "surv-cox", "data_dir": str(data),
        "output_dir": str(tmp_path / "out"), "seed": 2, "cv_folds": 2}))
    main(["train", "--config", str(cfg)])
    model_path = tmp_path / "out" / "fold_0_cox.json"
    pred_csv = tmp_path / "risks.csv"
    assert main(["predict", "--model", str(model_path), "--ehr",
                 str(data / "ehr.csv"), "--out", str(pred_csv)]) == 0
    assert main(["eval", "--task", "surv", "--pred", str(pred_csv),
                 "--truth", str(data / "ehr.csv")]) == 0


def test_eval_segmentation_missing_flagged(tmp_path):
    pred = tmp_path / "pred"
    truth = tmp_path / "truth"
    pred.mkdir()
    truth.mkdir()
    m = Volume(np.ones((2, 2, 2), dtype=np.float32), (1, 1, 1), "MASK")
    write_volume(m, truth / "a.mvol")
    write_volume(m, pred / "a.mvol")
    write_volume(m, truth / "b.mvol")
    assert main(["eval", "--task", "seg", "--pred", str(pred),
                 "--truth", str(truth)]) == 3


class TestStatsModel:
    def test_unet_ratio(self, capsys):
        assert main(["stats", "model", "--arch", "unet3d", "--input",
                     "64x64x64"]) == 0
        s3 = json.loads(capsys.readouterr().out)
        assert main(["stats", "model", "--arch", "unet2d", "--input",
                     "64x64"]) == 0
        s2 = json.loads(capsys.readouterr().out)
        assert 2.5 <= s3["params"] / s2["params"] <= 3.5
        assert s3["macs"] > s2["macs"] > 0

    def test_unetr_stats(self, capsys):
        assert main(["stats", "model", "--arch", "unetr", "--input", "32x32x16",
                     "--patch", "8", "--embed", "64", "--layers", "4",
                     "--heads", "4", "--width", "8"]) == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["params"] > 0 and stats["macs"] > 0

    def test_bad_extents_exit_code(self):
        assert main(["stats", "model", "--arch", "unet2d",
                     "--input", "64x64x64"]) == 2
