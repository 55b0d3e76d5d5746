import json

import numpy as np
import pytest
from PIL import Image

from voxelstyle.artifacts import load_render_sequence, read_raw
from voxelstyle.checkpoint import read_checkpoint
from voxelstyle.cli import main, read_config

TINY_TRAIN = ["--iterations", "3", "--rays-per-batch", "16", "--samples", "8", "--levels", "2",
              "--log2-table-size", "8", "--style-views", "4"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["make-synthetic", "--out", str(root / "content"), "--views", "4",
                 "--test-views", "2", "--resolution", "12"]) == 0
    assert main(["make-style-scene", "--out", str(root / "style"), "--views", "4",
                 "--test-views", "0", "--resolution", "12"]) == 0
    assert main(["train", "--content", str(root / "content"), "--style", str(root / "style"),
                 "--out", str(root / "run"), *TINY_TRAIN]) == 0
    return root


def test_make_synthetic_writes_train_and_test_split(pipeline):
    train = json.loads((pipeline / "content" / "transforms.json").read_text())
    test = json.loads((pipeline / "content" / "transforms_test.json").read_text())
    assert len(train["frames"]) == 4 and len(test["frames"]) == 2


def test_train_writes_checkpoint_and_loss_log(pipeline, capsys):
    ck = read_checkpoint(pipeline / "run" / "checkpoint.vxs")
    assert ck.iteration == 3
    lines = (pipeline / "run" / "loss_log.csv").read_text().splitlines()
    assert lines[0] == "iter,loss_content,loss_style,elapsed_s" and len(lines) == 4


def test_train_is_reproducible(pipeline, tmp_path):
    assert main(["train", "--content", str(pipeline / "content"), "--style",
                 str(pipeline / "style"), "--out", str(tmp_path), *TINY_TRAIN]) == 0
    a = (pipeline / "run" / "checkpoint.vxs").read_bytes()
    assert (tmp_path / "checkpoint.vxs").read_bytes() == a


def test_train_with_style_image(pipeline, tmp_path):
    img = (np.random.default_rng(0).random((6, 8, 3)) * 255).astype(np.uint8)
    Image.fromarray(img).save(tmp_path / "style.png")
    assert main(["train", "--content", str(pipeline / "content"), "--style",
                 str(tmp_path / "style.png"), "--out", str(tmp_path / "run"), *TINY_TRAIN]) == 0
    assert (tmp_path / "run" / "style_scene" / "transforms.json").is_file()


def test_stylize_with_poses(pipeline, tmp_path):
    ckpt = str(pipeline / "run" / "checkpoint.vxs")
    poses = str(pipeline / "content" / "transforms_test.json")
    rc = main(["stylize", "--checkpoint", ckpt, "--alpha", "0.5", "--direction",
               "content-to-style", "--poses", poses, "--out", str(tmp_path), "--voxel-res", "8",
               "--samples", "8"])
    assert rc == 0
    seq = load_render_sequence(tmp_path)
    assert len(seq) == 2 and seq[0].render.rgb.shape == (12, 12, 3)
    assert (tmp_path / "depth_000.png").is_file() and (tmp_path / "moments.json").is_file()
    assert read_raw(tmp_path / "depth_001.raw").shape == (12, 12)


def test_stylize_alpha_out_of_range(pipeline, tmp_path, capsys):
    rc = main(["stylize", "--checkpoint", str(pipeline / "run" / "checkpoint.vxs"),
               "--alpha", "1.5", "--orbit", "2", "--out", str(tmp_path)])
    assert rc == 2
    err = capsys.readouterr().err.strip()
    assert "alpha" in err and "[0, 1]" in err and len(err.splitlines()) == 1


def test_render_orbit_then_eval_consistency(pipeline, tmp_path, capsys):
    ckpt = str(pipeline / "run" / "checkpoint.vxs")
    assert main(["render", "--checkpoint", ckpt, "--orbit", "6", "--resolution", "10",
                 "--samples", "8", "--out", str(tmp_path / "plain")]) == 0
    assert main(["stylize", "--checkpoint", ckpt, "--orbit", "6", "--resolution", "10",
                 "--samples", "8", "--voxel-res", "4", "--density-mask",
                 "--out", str(tmp_path / "styl")]) == 0
    moments = json.loads((tmp_path / "styl" / "moments.json").read_text())
    assert moments["density_threshold"] == 0.01
    capsys.readouterr()
    rc = main(["eval-consistency", "--renders", str(tmp_path / "styl"), "--reference",
               str(tmp_path / "plain"), "--gaps", "1,2", "--opacity-threshold", "0",
               "--tolerance", "10", "--out", str(tmp_path / "eval")])
    assert rc == 0
    report = json.loads((tmp_path / "eval" / "consistency_renders.json").read_text())
    assert [g["pairs"] for g in report["gaps"]] == [5, 4]
    assert (tmp_path / "eval" / "consistency_reference.txt").is_file()


def test_eval_consistency_too_few_views(pipeline, tmp_path):
    ckpt = str(pipeline / "run" / "checkpoint.vxs")
    main(["render", "--checkpoint", ckpt, "--orbit", "3", "--resolution", "6", "--samples", "4",
          "--out", str(tmp_path / "r")])
    assert main(["eval-consistency", "--renders", str(tmp_path / "r"),
                 "--out", str(tmp_path / "e")]) == 2


def test_extract_features(pipeline, tmp_path):
    rc = main(["extract-features", "--checkpoint", str(pipeline / "run" / "checkpoint.vxs"),
               "--voxel-res", "4", "--save-grid", "--out", str(tmp_path)])
    assert rc == 0
    grid = np.load(tmp_path / "features_style.npz")
    assert grid["features"].shape == (64, 16)


def test_config_file_and_flag_precedence(pipeline, tmp_path):
    cfg = tmp_path / "render.cfg"
    cfg.write_text("# orbit render\norbit = 2\nresolution = 6  # small\nsamples=4\n")
    ckpt = str(pipeline / "run" / "checkpoint.vxs")
    assert main(["render", "--config", str(cfg), "--checkpoint", ckpt, "--resolution", "5",
                 "--out", str(tmp_path / "o")]) == 0
    seq = load_render_sequence(tmp_path / "o")
    assert len(seq) == 2 and seq[0].render.rgb.shape == (5, 5, 3)
    assert read_config(cfg) == {"orbit": "2", "resolution": "6", "samples": "4"}


@pytest.mark.parametrize("argv", [
    ["render", "--out", "x", "--bogus"],
    ["render", "--out", "x", "--orbit", "2"],  # no checkpoint
    ["render", "--out", "x", "--checkpoint", "/nonexistent.vxs", "--orbit", "2"],
    ["train", "--out", "x"],
    ["stylize", "--out", "x", "--direction", "sideways"],
    ["frobnicate"],
])
def test_validation_failures_exit_2(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("voxelstyle: error:")


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("alpha = 0.5\n")
    assert main(["render", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_corrupt_checkpoint_exit_2(tmp_path):
    (tmp_path / "bad.vxs").write_bytes(b"VXSCKPT\x00" + b"\x00" * 4)
    assert main(["render", "--checkpoint", str(tmp_path / "bad.vxs"), "--orbit", "1",
                 "--out", str(tmp_path / "o")]) == 2
