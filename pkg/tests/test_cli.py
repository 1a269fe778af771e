import hashlib

import numpy as np
import pytest

from cmvit import data as D
from cmvit.cli import run_cli
from cmvit.config import load_run_config, to_ini
from cmvit.errors import ConfigError
from cmvit.lbp import lbp_map, to_gray
from cmvit.models import build_model, count_parameters

TINY = """\
[model]
arch = cmvit
image_size = 32
patch_size = 8
embed_dim = 16
num_heads = 2
num_blocks = 1

[train]
epochs_max = 2
batch_size = 8
precision = float32

[data]
val_fraction = 0.25
split_seed = 1
"""


@pytest.fixture
def tiny_ini(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return path


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_config_parses_and_overrides(tiny_ini):
    cfg = load_run_config(tiny_ini, ["model.embed_dim=24", "model.num_heads=3", "data.balance=false"])
    assert cfg.model.embed_dim == 24 and cfg.model.num_heads == 3
    assert cfg.train.epochs_max == 2
    assert cfg.data.balance is False
    assert cfg.precision == "float32"


def test_config_round_trips_through_ini(tiny_ini, tmp_path):
    cfg = load_run_config(tiny_ini)
    again = tmp_path / "again.ini"
    again.write_text(to_ini(cfg))
    assert load_run_config(again) == cfg


@pytest.mark.parametrize("text", [
    "[model]\nembed_dimm = 16\n",
    "[optimizer]\nlr = 0.1\n",
    "[train]\nepochs_max = many\n",
    "[train]\nprecision = float16\n",
])
def test_config_rejects_bad_input(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_params_prints_count(tiny_ini, capsys):
    assert run_cli(["params", "--config", str(tiny_ini)]) == 0
    expected = count_parameters(build_model(load_run_config(tiny_ini).model))
    assert capsys.readouterr().out.strip() == str(expected)


def test_params_override_wins(tiny_ini, capsys):
    assert run_cli(["params", "--config", str(tiny_ini), "--set", "model.arch=xception"]) == 0
    cfg = load_run_config(tiny_ini, ["model.arch=xception"])
    assert capsys.readouterr().out.strip() == str(count_parameters(build_model(cfg.model)))


def test_unknown_config_key_is_fatal(tmp_path, capsys):
    path = tmp_path / "typo.ini"
    path.write_text("[model]\npatchsize = 8\n")
    assert run_cli(["params", "--config", str(path)]) == 1
    assert "patchsize" in capsys.readouterr().err


def test_gen_synth(tmp_path, capsys):
    out = tmp_path / "d"
    assert run_cli(["gen-synth", "--n", "8", "--size", "32", "--seed", "1", "--out", str(out)]) == 0
    assert len(list(out.glob("*/*.ppm"))) == 16
    assert D.read_manifest(out / "manifest.csv").class_counts() == [8, 8]


def test_unknown_subcommand(capsys):
    assert run_cli(["frobnicate"]) == 1
    captured = capsys.readouterr()
    assert "usage" in captured.err and captured.out == ""


def test_unknown_flag(capsys):
    assert run_cli(["params", "--bogus"]) == 1


def test_no_subcommand(capsys):
    assert run_cli([]) == 1


def test_missing_image_is_runtime_error(tmp_path, capsys):
    assert run_cli(["lbp", str(tmp_path / "none.ppm"), "--out", str(tmp_path / "x")]) == 2
    assert "error" in capsys.readouterr().err


def test_lbp_command(tmp_path, rng):
    img = rng.integers(0, 256, size=(6, 5, 3), dtype=np.uint8)
    src = tmp_path / "a.ppm"
    src.write_bytes(D.encode_ppm(img))
    assert run_cli(["lbp", str(src), "--out", str(tmp_path / "a_lbp")]) == 0
    codes = D.load_pgm((tmp_path / "a_lbp.pgm").read_bytes())
    assert np.array_equal(codes, lbp_map(to_gray(img)))
    lines = (tmp_path / "a_lbp.csv").read_text().splitlines()
    assert lines[0] == "bin,count" and len(lines) == 257
    assert sum(int(line.split(",")[1]) for line in lines[1:]) == 30


def test_spectrum_command(tmp_path, rng):
    src = tmp_path / "g.pgm"
    src.write_bytes(D.encode_pgm(rng.integers(0, 256, size=(6, 12), dtype=np.uint8)))
    assert run_cli(["spectrum", str(src), "--out", str(tmp_path / "s.pgm")]) == 0
    spec = D.load_pgm((tmp_path / "s.pgm").read_bytes())
    assert spec.shape == (8, 16)
    assert spec[0, 0] == 255


def test_train_infer_eval_end_to_end(tmp_path, tiny_ini, capsys):
    data_dir = tmp_path / "d"
    run_cli(["gen-synth", "--n", "8", "--size", "32", "--seed", "2", "--out", str(data_dir)])
    outputs = []
    for name in ("run1", "run2"):
        out = tmp_path / name
        assert run_cli(["train", "--config", str(tiny_ini), "--data", str(data_dir), "--out", str(out)]) == 0
        outputs.append(out)
    for f in ("model.cmvk", "history.csv", "train.csv", "val.csv"):
        assert digest(outputs[0] / f) == digest(outputs[1] / f), f
    report = (outputs[0] / "report.csv").read_text().splitlines()
    assert report[0].startswith("Type of result,cmvit,Model 1 paper (not a target)")
    assert report[1].startswith("Trainable Parameters,")
    capsys.readouterr()

    image = sorted((data_dir / "fake").glob("*.ppm"))[0]
    assert run_cli(["infer", str(image), "--checkpoint", str(outputs[0] / "model.cmvk")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "label,probability_real,probability_fake"
    label, p_real, p_fake = lines[1].split(",")
    assert label in ("real", "fake")
    assert abs(float(p_real) + float(p_fake) - 1) < 1e-6

    assert run_cli(["eval", "--checkpoint", str(outputs[0] / "model.cmvk"),
                    "--data", str(outputs[0] / "val.csv")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("accuracy ")
    assert "f1_class0" in out and "time_per_file" in out


def test_infer_rejects_wrong_size(tmp_path, capsys):
    from cmvit.checkpoint import save_checkpoint
    from cmvit.models import micro_config

    ckpt = tmp_path / "m.cmvk"
    save_checkpoint(build_model(micro_config("cmvit")), ckpt)
    img = tmp_path / "small.ppm"
    img.write_bytes(D.encode_ppm(np.zeros((16, 16, 3), dtype=np.uint8)))
    assert run_cli(["infer", str(img), "--checkpoint", str(ckpt)]) == 2
    assert "small.ppm" in capsys.readouterr().err


def test_gradcheck_layers_only(capsys):
    assert run_cli(["gradcheck", "--layers-only"]) == 0
    assert capsys.readouterr().out.strip().endswith("checks passed")
