import json

import numpy as np
import pytest

from scenepaint import cli, raster, trainer
from scenepaint.meshbake import read_colored_ply


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "train.json"
    p.write_text(json.dumps({"batch": 2, "views": [0, 1, 2], "disc_channels": [4, 4, 8], "generator": {"preset": "desk-mlp", "hidden": 16}}))
    return p


def run(*argv):
    return cli.main(["--deterministic", *map(str, argv)])


def toy_args(toy_paths, *names):
    out = []
    for n in names:
        out += [f"--{n}", toy_paths[n]]
    return out


def train(toy_paths, small_config, out, *extra):
    return run("train", *toy_args(toy_paths, "scene", "cameras", "styles"), "--config", small_config, "--out", out, *extra)


def test_render_counts_and_determinism(tmp_path, toy_paths):
    assert run("render", *toy_args(toy_paths, "scene", "cameras"), "--out", tmp_path / "a") == 0
    assert run("render", *toy_args(toy_paths, "scene", "cameras"), "--out", tmp_path / "b") == 0
    frames = sorted((tmp_path / "a").glob("*.frames"))
    assert len(frames) == 20
    assert len(list((tmp_path / "a").glob("*_label.png"))) == 20
    for f in frames:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    assert raster.load_frames(frames[0]).coverage.all()
    manifest = json.loads((tmp_path / "a" / "run_manifest.json").read_text())
    assert manifest["command"] == "render"
    assert any(k.endswith("scene.txt") for k in manifest["inputs"])


def test_invalid_camera_file(tmp_path, toy_paths, capsys):
    bad = tmp_path / "cams.txt"
    lines = toy_paths["cameras"].read_text().splitlines()
    lines[3] = "camera 64 64 oops"
    bad.write_text("\n".join(lines) + "\n")
    assert run("render", "--scene", toy_paths["scene"], "--cameras", bad, "--out", tmp_path / "r") == cli.EXIT_INVALID
    assert ":4" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["render", "--scene"]) == cli.EXIT_USAGE
    assert cli.main(["frobnicate"]) == cli.EXIT_USAGE


def test_empty_edit_is_byte_identical(tmp_path, toy_paths):
    script = tmp_path / "empty.txt"
    script.write_text("# scenepaint-edit v1\n# nothing to do\n")
    out = tmp_path / "edited" / "scene.txt"
    assert run("edit", "--scene", toy_paths["scene"], "--script", script, "--out", out) == 0
    assert out.read_bytes() == toy_paths["scene"].read_bytes()


def test_edit_moves_chair(tmp_path, toy_paths, toy_scene):
    out = tmp_path / "scene.txt"
    assert run("edit", "--scene", toy_paths["scene"], "--script", toy_paths["dir"] / "edit_chair.txt", "--out", out) == 0
    from scenepaint.scenegraph import load_scene

    edited = load_scene(out)
    i = toy_scene.index_of("chair_2")
    assert not np.array_equal(edited.objects[i].transform, toy_scene.objects[i].transform)


def test_train_determinism_and_resume(tmp_path, toy_paths, small_config):
    assert train(toy_paths, small_config, tmp_path / "a", "--iterations", 4) == 0
    assert train(toy_paths, small_config, tmp_path / "b", "--iterations", 4) == 0
    a = (tmp_path / "a" / "painter.ckpt").read_bytes()
    assert a == (tmp_path / "b" / "painter.ckpt").read_bytes()
    assert train(toy_paths, small_config, tmp_path / "half", "--iterations", 2) == 0
    resume = tmp_path / "half" / "train_state.bin"
    assert train(toy_paths, small_config, tmp_path / "c", "--iterations", 4, "--resume", resume) == 0
    assert (tmp_path / "c" / "painter.ckpt").read_bytes() == a
    rows = (tmp_path / "a" / "losses.csv").read_text().splitlines()
    assert len(rows) == 5 and all(v != "" for v in rows[-1].split(","))
    m = json.loads((tmp_path / "a" / "run_manifest.json").read_text())
    assert m["seeds"]["train"] == 0 and "painter.ckpt" in " ".join(m["outputs"])


def test_train_missing_reference_pair(tmp_path, toy_paths, small_config, capsys):
    refs = tmp_path / "refs"
    refs.mkdir()
    for v in range(3):
        for s in range(3):
            if (v, s) != (1, 2):
                raster.save_png(np.zeros((64, 64, 3)), refs / f"view{v}_style{s}.png")
    code = train(toy_paths, small_config, tmp_path / "t", "--iterations", 1, "--refs", refs)
    assert code == cli.EXIT_INVALID
    assert "view1_style2" in capsys.readouterr().err
    assert not (tmp_path / "t").exists()


def test_divergence_exit_code(tmp_path, toy_paths, small_config, monkeypatch):
    monkeypatch.setattr(trainer, "recon_loss", lambda p, r: (float("nan"), np.zeros_like(p)))
    assert train(toy_paths, small_config, tmp_path / "t", "--iterations", 2) == cli.EXIT_DIVERGED
    assert (tmp_path / "t" / "diverged_state.bin").exists()


def test_bad_config_fields(tmp_path, toy_paths):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"generator": {"preset": "desk-mlp", "widht": 3}}))
    assert train(toy_paths, cfg, tmp_path / "t") == cli.EXIT_INVALID
    cfg.write_text(json.dumps({"batchsize": 2}))
    assert train(toy_paths, cfg, tmp_path / "t") == cli.EXIT_INVALID


@pytest.fixture(scope="module")
def trained(tmp_path_factory, toy_paths, small_config):
    out = tmp_path_factory.mktemp("trained")
    assert train(toy_paths, small_config, out, "--iterations", 3) == 0
    return out / "painter.ckpt"


def test_paint_two_styles_differ(tmp_path, toy_paths, trained):
    assert run("paint", "--checkpoint", trained, *toy_args(toy_paths, "scene", "cameras"), "--style", 0, "--style", 1, "--out", tmp_path) == 0
    s0 = [raster.load_png(tmp_path / f"view{v}_style0.png") for v in range(20)]
    s1 = [raster.load_png(tmp_path / f"view{v}_style1.png") for v in range(20)]
    assert not (tmp_path / "view0_style2.png").exists()
    assert abs(np.mean(s0) - np.mean(s1)) > 0 or abs(np.std(s0) - np.std(s1)) > 0


def test_paint_rejects_unknown_style(tmp_path, toy_paths, trained):
    code = run("paint", "--checkpoint", trained, *toy_args(toy_paths, "scene", "cameras"), "--style", 7, "--out", tmp_path)
    assert code == cli.EXIT_INVALID


def test_eval_both_modes(tmp_path, toy_paths, trained, capsys):
    assert run("eval", "--checkpoint", trained, *toy_args(toy_paths, "scene", "cameras"), "--refs", "mock", "--out", tmp_path / "e") == 0
    report = json.loads((tmp_path / "e" / "report.json").read_text())
    assert "painted_style0" in report and "reference_style0" in report
    assert "recon" in report
    assert "VC" in capsys.readouterr().out
    assert run("render", *toy_args(toy_paths, "scene", "cameras"), "--out", tmp_path / "r") == 0
    assert run("paint", "--checkpoint", trained, *toy_args(toy_paths, "scene", "cameras"), "--style", 0, "--out", tmp_path / "p") == 0
    assert run("eval", "--images", tmp_path / "p", "--frames", tmp_path / "r", "--bounds-from", trained, "--out", tmp_path / "e2") == 0
    assert "painted_style0" in (tmp_path / "e2" / "report.csv").read_text()


def test_bake_writes_ply(tmp_path, toy_paths, trained):
    out = tmp_path / "room.ply"
    assert run("bake", "--checkpoint", trained, *toy_args(toy_paths, "scene", "cameras"), "--out", out) == 0
    v, t, c = read_colored_ply(out)
    assert len(v) > 0 and len(t) > 0 and c.min() >= 0 and c.max() <= 1
    first = out.read_bytes()
    assert run("bake", "--checkpoint", trained, *toy_args(toy_paths, "scene", "cameras"), "--out", out) == 0
    assert out.read_bytes() == first


def test_corrupt_checkpoint(tmp_path, toy_paths, trained):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(trained.read_bytes()[:-7])
    assert run("paint", "--checkpoint", bad, *toy_args(toy_paths, "scene", "cameras"), "--out", tmp_path) == cli.EXIT_INVALID
