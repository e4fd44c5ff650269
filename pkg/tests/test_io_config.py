import json

import numpy as np
import pytest

from stairpol import io
from stairpol.config import CONFIG_ENV_VAR, PipelineConfig, load_config, parse_config
from stairpol.errors import InputError


def test_pfm_round_trip_gray_and_color(tmp_path):
    gray = np.random.default_rng(0).normal(size=(5, 7)).astype(np.float32)
    io.write_pfm(tmp_path / "g.pfm", gray)
    back = io.read_pfm(tmp_path / "g.pfm")
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back, gray)
    color = np.random.default_rng(1).normal(size=(4, 3, 3)).astype(np.float32)
    io.write_pfm(tmp_path / "c.pfm", color)
    np.testing.assert_array_equal(io.read_pfm(tmp_path / "c.pfm"), color)


def test_pfm_layout_is_bottom_up_little_endian(tmp_path):
    img = np.array([[1.0, 2.0], [3.0, 4.0]])
    io.write_pfm(tmp_path / "a.pfm", img)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1")
    body = np.frombuffer(raw[-16:], dtype="<f4")
    np.testing.assert_array_equal(body, [3, 4, 1, 2])


def test_pfm_errors(tmp_path):
    (tmp_path / "bad.pfm").write_bytes(b"P6\n1 1\n255\n\x00")
    with pytest.raises(InputError):
        io.read_pfm(tmp_path / "bad.pfm")


def test_pgm_round_trip(tmp_path):
    img8 = np.arange(12, dtype=np.uint8).reshape(3, 4)
    io.write_pgm(tmp_path / "a.pgm", img8)
    np.testing.assert_array_equal(io.read_pgm(tmp_path / "a.pgm"), img8)
    img16 = np.array([[0, 1000], [65535, 7]], dtype=np.uint16)
    io.write_pgm(tmp_path / "b.pgm", img16)
    np.testing.assert_array_equal(io.read_pgm(tmp_path / "b.pgm"), img16)
    mask = np.array([[True, False], [False, True]])
    io.write_pgm(tmp_path / "m.pgm", mask)
    np.testing.assert_array_equal(io.read_mask(tmp_path / "m.pgm"), mask)


def test_ply_round_trip_and_mesh(tmp_path):
    pts = np.random.default_rng(2).normal(size=(20, 3))
    io.write_ply(tmp_path / "p.ply", pts)
    np.testing.assert_allclose(io.read_ply(tmp_path / "p.ply"), pts.astype(np.float32))
    z = np.zeros((3, 4))
    z[1, 1] = np.nan
    verts, faces = io.height_mesh(z, 2.0)
    assert len(verts) == 12
    # 6 cells, 4 touch the NaN sample, 2 triangles each
    assert len(faces) == 4
    io.write_ply(tmp_path / "m.ply", verts, faces)
    assert len(io.read_ply(tmp_path / "m.ply")) == 12


def test_ply_ascii(tmp_path):
    text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n" \
           "end_header\n1 2 3\n4 5 6\n"
    (tmp_path / "a.ply").write_text(text)
    np.testing.assert_array_equal(io.read_ply(tmp_path / "a.ply"), [[1, 2, 3], [4, 5, 6]])


def test_csv_cloud_and_trace(tmp_path):
    pts = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    io.write_cloud_csv(tmp_path / "c.csv", pts)
    np.testing.assert_array_equal(io.read_cloud(tmp_path / "c.csv"), pts)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(InputError):
        io.read_cloud_csv(tmp_path / "bad.csv")
    with pytest.raises(InputError):
        io.read_cloud(tmp_path / "cloud.xyz")
    io.write_trace_csv(tmp_path / "t.csv", [3.0, 2.0, 1.0])
    np.testing.assert_array_equal(io.read_trace_csv(tmp_path / "t.csv"), [3, 2, 1])


def test_json_helpers(tmp_path):
    obj = {"a": np.float64(1.5), "b": np.arange(3), "c": (1, 2), "p": tmp_path}
    io.write_json(tmp_path / "x.json", obj)
    back = io.read_json(tmp_path / "x.json")
    assert back == {"a": 1.5, "b": [0, 1, 2], "c": [1, 2], "p": str(tmp_path)}
    with pytest.raises(InputError):
        io.read_json(tmp_path / "missing.json")
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(InputError):
        io.read_json(tmp_path / "broken.json")


def test_config_defaults():
    cfg = PipelineConfig()
    assert cfg.refractive_index == 1.5
    assert cfg.gwo.pop_size == 20 and cfg.gwo.weight_mode == "paper_literal"
    assert cfg.segmentation.t1 == 0.4 and cfg.segmentation.t2 == 0.8


@pytest.mark.parametrize(
    "data, fragment",
    [
        ({"refractive_index": 0.9}, "refractive_index"),
        ({"gwo": {"pop_size": 2}}, "gwo.pop_size"),
        ({"gwo": {"weight_mode": "x"}}, "gwo.weight_mode"),
        ({"fusion": {"dop_wieght": 1}}, "fusion.dop_wieght"),
        ({"unknown": 1}, "unknown"),
        ({"gravity": [0, 0, 0]}, "gravity"),
    ],
)
def test_config_rejects_bad_values(data, fragment):
    with pytest.raises(InputError, match=fragment.replace(".", r"\.")):
        parse_config(data)


def test_config_relative_paths_and_env(tmp_path, monkeypatch):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"pixel_pitch_mm": 2.0, "inputs": {"i0": "data/i0.pfm"}}))
    cfg = load_config(cfg_path)
    assert cfg.pixel_pitch_mm == 2.0
    assert cfg.inputs.i0 == tmp_path / "data" / "i0.pfm"
    monkeypatch.setenv(CONFIG_ENV_VAR, str(cfg_path))
    assert load_config().pixel_pitch_mm == 2.0
    monkeypatch.delenv(CONFIG_ENV_VAR)
    assert load_config().pixel_pitch_mm == 0.8
    cfg_path.write_text("[1, 2]")
    with pytest.raises(InputError):
        load_config(cfg_path)
