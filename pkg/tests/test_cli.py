import json
import subprocess
import sys

import numpy as np
import pytest

from repaint3d.cli import main
from repaint3d.fusion import sample_surface
from repaint3d.meshio import load_mesh, save_ply
from repaint3d.metrics import write_features
from repaint3d.pipeline import save_field
from repaint3d.protocol import color_field
from repaint3d.shapes import make_icosphere, make_quad


@pytest.fixture(scope="module")
def sphere_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("assets") / "sphere.ply"
    save_ply(path, make_icosphere(3))
    return path


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_plan_prints_expected_json(capsys):
    code, out, _ = run_cli(capsys, "plan")
    assert code == 0
    plan = json.loads(out)
    assert plan["azimuths"] == [0.0, 40.0, 320.0, 80.0, 280.0,
                                120.0, 240.0, 160.0, 200.0]
    assert plan["views"][0]["remap_sources"] == []
    assert plan["views"][5]["fuse_before"] is True


def test_plan_rejects_inconsistent_config(capsys):
    code, _, err = run_cli(capsys, "plan", "--views", "10", "--increment", "40")
    assert code == 2
    assert "full circle" in err


def test_run_writes_artifacts(capsys, sphere_path, tmp_path):
    out_dir = tmp_path / "out"
    code, out, _ = run_cli(
        capsys, "run", "--input", str(sphere_path), "--prompt", "sphere",
        "--resolution", "64", "--target-edge", "0.3", "--seed", "3",
        "--out", str(out_dir))
    assert code == 0
    summary = json.loads(out)
    assert summary["views"] == 9
    assert (out_dir / "asset.ply").exists()
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 3
    assert manifest["config"]["prompt_object"] == "sphere"


def test_run_missing_input_is_config_error(capsys, tmp_path):
    code, _, err = run_cli(
        capsys, "run", "--input", str(tmp_path / "nope.ply"),
        "--prompt", "x", "--out", str(tmp_path / "out"))
    assert code == 2
    assert "error" in err


def test_run_painter_failure_exit_code(capsys, sphere_path, tmp_path):
    code, _, err = run_cli(
        capsys, "run", "--input", str(sphere_path), "--prompt", "x",
        "--resolution", "48", "--painter", "external:false {dir}",
        "--out", str(tmp_path / "out"))
    assert code == 3
    assert "view 0" in err


def test_run_consistency_failure_exit_code(capsys, sphere_path, tmp_path):
    code, _, err = run_cli(
        capsys, "run", "--input", str(sphere_path), "--prompt", "x",
        "--resolution", "48", "--target-edge", "0.3",
        "--consistency", "external:false {dir}",
        "--out", str(tmp_path / "out"))
    assert code == 4
    assert "exited" in err


def test_eval_fid_and_kid(capsys, tmp_path):
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(64, 8)).astype(np.float32)
    a = tmp_path / "a.bin"
    b = tmp_path / "b.bin"
    write_features(a, feats, "test")
    write_features(b, feats + 2.0, "test")

    code, out, _ = run_cli(capsys, "eval", "fid", "--a", str(a), "--b", str(a))
    assert code == 0
    assert abs(json.loads(out)["fid"]) <= 1e-8

    code, out, _ = run_cli(capsys, "eval", "fid", "--a", str(a), "--b", str(b))
    assert code == 0
    assert json.loads(out)["fid"] > 1.0

    code, out, _ = run_cli(capsys, "eval", "kid", "--a", str(a), "--b", str(a),
                           "--subsets", "10")
    assert code == 0
    assert abs(json.loads(out)["kid_mean"]) <= 1e-6


def test_eval_fid_bad_file_is_config_error(capsys, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a feature file")
    code, _, err = run_cli(capsys, "eval", "fid", "--a", str(bad), "--b", str(bad))
    assert code == 2
    assert "feature" in err


def test_eval_bradley_terry(capsys, tmp_path):
    votes = tmp_path / "votes.csv"
    rows = ["b,a"] * 9 + ["a,b"] * 3 + ["b,c"] * 8 + ["c,b"] * 4
    votes.write_text("\n".join(rows) + "\n")
    code, out, _ = run_cli(capsys, "eval", "bt", "--votes", str(votes))
    assert code == 0
    result = json.loads(out)
    scores = dict(zip(result["items"], result["scores"]))
    assert scores["b"] > scores["a"] and scores["b"] > scores["c"]
    assert abs(sum(result["scores"])) <= 1e-9

    disconnected = tmp_path / "disc.csv"
    disconnected.write_text("a,b\nb,a\nc,d\nd,c\n")
    code, _, err = run_cli(capsys, "eval", "bt", "--votes", str(disconnected))
    assert code == 2
    assert "disconnected" in err


def test_eval_render_ring(capsys, tmp_path):
    mesh = make_icosphere(2)
    colored = type(mesh)(mesh.vertices, mesh.faces, None,
                         np.full_like(mesh.vertices, 0.5))
    path = tmp_path / "colored.ply"
    save_ply(path, colored)
    code, out, _ = run_cli(capsys, "eval", "render", "--input", str(path),
                           "--out", str(tmp_path / "ring"),
                           "--resolution", "64")
    assert code == 0
    images = json.loads(out)["images"]
    assert len(images) == 8
    names = sorted(p.split("/")[-1] for p in images)
    assert names[0] == "view_000.png" and names[-1] == "view_315.png"


def test_export_from_saved_field(capsys, tmp_path):
    mesh = make_quad(1.0, 1.0)
    mesh_path = tmp_path / "quad.ply"
    save_ply(mesh_path, mesh)
    field = sample_surface(mesh, density=5e4, seed=0)
    colored = type(field)(field.positions, field.normals,
                          color_field(field.positions),
                          np.ones(len(field.positions)))
    save_field(colored, tmp_path / "field")

    out_path = tmp_path / "asset.ply"
    code, out, _ = run_cli(capsys, "export", "--input", str(mesh_path),
                           "--field", str(tmp_path / "field"),
                           "--out", str(out_path), "--target-edge", "0.2")
    assert code == 0
    summary = json.loads(out)
    assert summary["faces"] > 20
    exported = load_mesh(out_path)
    assert exported.colors is not None
    truth = color_field(exported.vertices)
    assert np.abs(exported.colors - truth).max() <= 8.0 / 255.0


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "repaint3d.cli", "plan", "--views", "4",
         "--increment", "90"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["azimuths"] == [0.0, 90.0, 270.0, 180.0]
