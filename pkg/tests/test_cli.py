import json

import pytest

from s2rcgcn.cli import main
from s2rcgcn.dataio import load_dataset, save_dataset
from s2rcgcn.render import parse_ppm
from small import SMALL, small_cube


@pytest.fixture()
def bundle(tmp_path):
    save_dataset(small_cube(), tmp_path / "data")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**SMALL, "epochs": 2}))
    return tmp_path / "data", cfg


def test_gen_synth_writes_bundle(tmp_path, capsys):
    out = tmp_path / "syn"
    code = main(["gen-synth", "--height", "64", "--width", "64", "--bands", "32", "--classes", "7", "--seed", "1", "--out", str(out)])
    assert code == 0
    cube = load_dataset(out)
    assert cube.values.shape == (64, 64, 32) and cube.n_classes == 7
    assert "palette" in json.loads((out / "header.json").read_text())


def test_gen_synth_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["--seed", "3", "gen-synth", "--height", "12", "--width", "12", "--bands", "4", "--classes", "2", "--out", str(tmp_path / name)]) == 0
    for f in ("header.json", "cube.bin", "labels.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_eval_predict_map(bundle, tmp_path, capsys):
    data, cfg = bundle
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(run), "--map"]) == 0
    for f in ("model.ckpt", "train_log.csv", "report.json", "map.ppm"):
        assert (run / f).is_file(), f
    log = (run / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,L_C,L_ce,L_total,pseudo_accepted,OA_train" and len(log) == 3
    capsys.readouterr()

    assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--data", str(data)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == json.loads((run / "report.json").read_text())

    maps = tmp_path / "maps"
    assert main(["predict-map", "--checkpoint", str(run / "model.ckpt"), "--data", str(data), "--out", str(maps)]) == 0
    rgb = parse_ppm((maps / "map.ppm").read_bytes())
    assert rgb.shape == (16, 16, 3)
    assert (maps / "map.ppm").read_bytes() == (run / "map.ppm").read_bytes()


def test_train_is_byte_reproducible(bundle, tmp_path):
    data, cfg = bundle
    for name in ("r1", "r2"):
        assert main(["train", "--config", str(cfg), "--seed", "4", "--data", str(data), "--out", str(tmp_path / name)]) == 0
    for f in ("model.ckpt", "train_log.csv", "report.json"):
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()


def test_eval_class_mismatch_is_config_error(bundle, tmp_path, capsys):
    data, cfg = bundle
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(run)]) == 0
    other = tmp_path / "other"
    save_dataset(small_cube(classes=4), other)
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--data", str(other)]) != 0
    assert "classes" in capsys.readouterr().err


def test_ablate_prints_four_rows(bundle, tmp_path, capsys):
    data, cfg = bundle
    cfg.write_text(json.dumps({**SMALL, "epochs": 1}))
    assert main(["ablate", "--config", str(cfg), "--data", str(data), "--runs", "2", "--out", str(tmp_path / "ab")]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0] == "variant,OA,AA,F1,Kappa"
    assert [r.split(",")[0] for r in rows[1:]] == ["full", "(I)", "(II)", "(III)"]
    assert (tmp_path / "ab" / "ablation.csv").is_file()


def test_sweep_grid(bundle, capsys):
    data, cfg = bundle
    cfg.write_text(json.dumps({**SMALL, "epochs": 1}))
    assert main(["sweep", "--config", str(cfg), "--data", str(data), "--ks", "3", "4", "--ws", "3", "5"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0] == "k,w,OA" and len(rows) == 5


def test_unknown_subcommand_prints_usage(capsys):
    assert main(["frobnicate"]) != 0
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_prints_usage(capsys):
    assert main(["train", "--nope"]) != 0
    assert "usage" in capsys.readouterr().err


def test_invalid_config_value_names_key(bundle, tmp_path, capsys):
    data, cfg = bundle
    cfg.write_text(json.dumps({"tau": 2.0}))
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "x")]) != 0
    assert "'tau'" in capsys.readouterr().err
