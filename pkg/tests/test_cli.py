import json

import numpy as np
import pytest

from framedisp.cli import main
from framedisp.config import RunConfig, write_config
from framedisp.errors import ConfigError
from framedisp.flow import read_flo
from framedisp.pipeline import poses_csv, read_poses_csv
from framedisp.render import read_pnm, write_pnm

SMALL = ["--set", "dataset.resolution=0.25", "--set", "dataset.pad_multiple=16"]


def run(*args):
    return main([str(a) for a in args])


def test_config_file_and_overrides(tmp_path):
    write_config(tmp_path / "run.cfg", {"flow": {"alpha": 20}, "dataset": {"count": 7}})
    cfg = RunConfig.load(tmp_path / "run.cfg", ["dataset.bound=0.01", "frame.levels=1.85, 3.35"])
    assert cfg.build("flow").alpha == 20.0
    ds = cfg.build("dataset")
    assert (ds.count, ds.bound) == (7, 0.01)
    assert ds.frame.levels == (1.85, 3.35)
    assert ds.flow.alpha == 20.0


@pytest.mark.parametrize("override,key", [("flow.beta=1", "flow.beta"),
                                          ("train.epochs=ten", "train.epochs"),
                                          ("train.decay=2", "train.decay"),
                                          ("nosuch.key=1", "nosuch")])
def test_bad_config_names_the_key(override, key):
    with pytest.raises(ConfigError) as err:
        cfg = RunConfig.load(None, [override])
        for section in ("flow", "train"):
            cfg.build(section)
    assert err.value.key == key
    assert key in str(err.value)


def test_config_digest_tracks_values():
    a = RunConfig.load(None, ["flow.alpha=20"])
    b = RunConfig.load(None, ["flow.alpha=20"])
    c = RunConfig.load(None, ["flow.alpha=21"])
    assert a.digest() == b.digest() != c.digest()
    assert RunConfig.load(None, []).build("layout").layout().heights[-1] == 6.5


def test_render_flow_and_manifest(tmp_path):
    assert run("render", *SMALL, "--out", tmp_path / "ref.ppm", "--mask-out", tmp_path / "m.pgm",
               "--obj-out", tmp_path / "f.obj") == 0
    assert run("render", *SMALL, "--pose", "0,0.005,0.01,0.02,0.02",
               "--out", tmp_path / "def.ppm") == 0
    assert read_pnm(tmp_path / "ref.ppm").shape == (176, 96, 3)
    assert run("flow", tmp_path / "ref.ppm", tmp_path / "def.ppm", "--out", tmp_path / "k.flo",
               "--mask", tmp_path / "m.pgm", "--color-out", tmp_path / "k.ppm") == 0
    K = read_flo(tmp_path / "k.flo")
    assert K.shape == (176, 96, 2) and K[..., 0].max() > 1.0
    manifest = json.loads((tmp_path / "k.flo.run.json").read_text())
    assert manifest["command"] == "flow"
    assert len(manifest["config_sha256"]) == 64
    assert {"framedisp", "numpy", "python"} <= set(manifest["versions"])


def test_estimate_self_pair_is_all_zero(tmp_path):
    frames = tmp_path / "frames"
    frames.mkdir()
    assert run("render", *SMALL, "--out", frames / "f_000.ppm") == 0
    (frames / "f_001.ppm").write_bytes((frames / "f_000.ppm").read_bytes())
    assert run("estimate", *SMALL, "--frames", frames, "--out", tmp_path / "p.csv") == 0
    _, H = read_poses_csv(tmp_path / "p.csv")
    assert H.shape == (2, 5) and not H.any()


def test_analyze_two_hertz_sequence(tmp_path, capsys):
    t = np.arange(500) / 50.0
    H = np.zeros((500, 5))
    H[:, 4] = 0.02 * np.sin(2 * np.pi * 2.0 * t)
    (tmp_path / "p.csv").write_text(poses_csv(H, 50.0))
    assert run("analyze", "--poses", tmp_path / "p.csv", "--out", tmp_path / "an",
               "--set", "analysis.fps=50", "--set", "analysis.y0=1.0") == 0
    spec = np.loadtxt(tmp_path / "an" / "spectrum.csv", delimiter=",", skiprows=1)
    peak = spec[1 + np.argmax(spec[1:, 1]), 0]
    assert abs(peak - 2.0) <= spec[1, 0]
    disp = np.loadtxt(tmp_path / "an" / "displacement.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(disp[:, 1], H[:, 4] * 6.5, atol=1e-9)
    assert "dominant frequency" in capsys.readouterr().out


def test_render_sequence_then_estimate(tmp_path):
    H = np.zeros((4, 5))
    H[:, 3] = [0.0, 0.01, 0.02, -0.01]
    (tmp_path / "truth.csv").write_text(poses_csv(H, 50.0))
    assert run("render", *SMALL, "--pose-csv", tmp_path / "truth.csv", "--out", tmp_path / "seq",
               "--mask-out", tmp_path / "mask.pgm") == 0
    assert run("estimate", *SMALL, "--frames", tmp_path / "seq", "--mask", tmp_path / "mask.pgm",
               "--out", tmp_path / "est.csv", "--workers", 2) == 0
    _, est = read_poses_csv(tmp_path / "est.csv")
    assert np.abs(est - H).max() <= 5e-3


def test_generate_and_train(tmp_path):
    assert run("generate", *SMALL, "--count", 4, "--seed", 3, "--out", tmp_path / "ds") == 0
    assert len((tmp_path / "ds" / "manifest.csv").read_text().splitlines()) == 5
    assert run("train", *SMALL, "--set", "train.epochs=2", "--set", "dataset.test_fraction=0.25",
               "--data", tmp_path / "ds", "--out", tmp_path / "w.bin") == 0
    curve = (tmp_path / "w.csv").read_text().splitlines()
    assert curve[0] == "epoch,train_loss,test_loss" and len(curve) == 3


def test_manifest_reruns_bit_identically(tmp_path):
    assert run("generate", *SMALL, "--count", 2, "--seed", 5, "--out", tmp_path / "a") == 0
    record = json.loads((tmp_path / "a" / "run.json").read_text())
    write_config(tmp_path / "replay.cfg", record["config"])
    assert run("generate", "--config", tmp_path / "replay.cfg", "--out", tmp_path / "b") == 0
    for name in ("manifest.csv", "flows/000000.flo", "flows/000001.flo"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert json.loads((tmp_path / "b" / "run.json").read_text())["config_sha256"] == \
        record["config_sha256"]


def test_worker_setting_does_not_change_generate(tmp_path):
    assert run("generate", *SMALL, "--count", 2, "--out", tmp_path / "a") == 0
    assert run("generate", *SMALL, "--count", 2, "--workers", 2, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "flows/000001.flo").read_bytes() == \
        (tmp_path / "b" / "flows/000001.flo").read_bytes()


def test_exit_codes(tmp_path, capsys):
    assert run("render", "--set", "frame.nope=1", "--out", tmp_path / "x.ppm") == 2
    assert "frame.nope" in capsys.readouterr().err
    assert run("render", "--set", "camera.scale=0", "--out", tmp_path / "x.ppm") == 2
    assert run("render", "--workers", 0, "--out", tmp_path / "x.ppm") == 2
    assert run("flow", tmp_path / "missing.ppm", tmp_path / "missing.ppm",
               "--out", tmp_path / "k.flo") == 3
    assert run("estimate", "--frames", tmp_path, "--out", tmp_path / "p.csv") == 3
    # an empty structure mask leaves nothing to solve for
    frames = tmp_path / "frames"
    frames.mkdir()
    assert run("render", *SMALL, "--out", frames / "f_0.ppm") == 0
    (frames / "f_1.ppm").write_bytes((frames / "f_0.ppm").read_bytes())
    write_pnm(tmp_path / "empty.pgm", np.zeros((176, 96), bool))
    assert run("estimate", *SMALL, "--frames", frames, "--mask", tmp_path / "empty.pgm",
               "--out", tmp_path / "p.csv") == 4


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("render", "flow", "generate", "train", "estimate", "analyze"):
        assert name in out
