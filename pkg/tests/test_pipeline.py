import json

import numpy as np
import pytest

from stairpol.config import PipelineConfig
from stairpol.errors import InputError
from stairpol.pipeline import height_error, load_transform, reconstruct
from stairpol.registration import RigidTransform
from stairpol.synth import SceneSpec, degrade_depth, make_scene, render_polarization


def test_height_error_ignores_offset():
    truth = np.arange(12.0).reshape(3, 4)
    np.testing.assert_allclose(height_error(truth + 5.0, truth), 0.0)
    est = truth.copy()
    est[0, 0] += 1.2
    err = height_error(est, truth)
    assert err.max() == pytest.approx(1.2 * 11 / 12)
    with pytest.raises(InputError):
        height_error(truth, truth[:2])


def test_load_transform_formats(tmp_path):
    x = RigidTransform.from_rotvec([0.01, 0.0, -0.02], [1.0, 2.0, 3.0])
    for name, payload in (("rt", x.to_dict()), ("wrapped", {"transform": x.to_dict()}),
                          ("matrix", {"matrix": x.as_matrix().tolist()}),
                          ("rotvec", {"rotvec": x.rotvec().tolist(), "t": x.t.tolist()})):
        (tmp_path / f"{name}.json").write_text(json.dumps(payload))
        np.testing.assert_allclose(load_transform(tmp_path / f"{name}.json").as_matrix(), x.as_matrix(), atol=1e-12)
    (tmp_path / "bad.json").write_text(json.dumps({"r": np.diag([1, 1, -1.0]).tolist(), "t": [0, 0, 0]}))
    with pytest.raises(InputError, match="proper"):
        load_transform(tmp_path / "bad.json")
    (tmp_path / "junk.json").write_text(json.dumps({"x": 1}))
    with pytest.raises(InputError):
        load_transform(tmp_path / "junk.json")


def test_reconstruct_uses_tof_inside_holes():
    gt = make_scene(SceneSpec(kind="vplate", rows=64, cols=64))
    raw = render_polarization(gt)
    bino = degrade_depth(gt.depth, holes=[(20, 20, 40, 40)])
    rec = reconstruct(raw, bino, gt.depth, PipelineConfig(), truth_height=gt.height, keep_stages=True)
    src = rec.correction.source
    assert (src[25:35, 25:35] == 2).all()
    assert (src[:10, :10] == 1).all()
    assert rec.report.hole_pixels == rec.holes.sum() > 400
    assert rec.report.error["alpha"] <= 0.002
    assert {"dop", "azimuth", "zenith", "fused", "signs", "source", "p", "q"} <= set(rec.stages)
    # absolute depth is anchored to the TOF map
    assert rec.depth.mean() == pytest.approx(gt.depth.mean())


def test_reconstruct_with_tof_extrinsics():
    gt = make_scene(SceneSpec(kind="vplate", rows=64, cols=64, pixel_pitch=1.0))
    raw = render_polarization(gt)
    shift = RigidTransform(np.eye(3), [3.0, 0.0, 0.0])
    # TOF depth expressed in a frame 3 mm to the left; the transform brings it back
    tof_frame = np.roll(gt.depth, -3, axis=1)
    bino = degrade_depth(gt.depth, holes=[(8, 8, 56, 56)])
    cfg = PipelineConfig(pixel_pitch_mm=1.0)
    aligned = reconstruct(raw, bino, gt.depth, cfg, truth_height=gt.height)
    rec = reconstruct(raw, bino, tof_frame, cfg, tof_to_pol=shift, truth_height=gt.height)
    assert rec.report.corrected_tof > 0
    assert rec.report.error["alpha"] <= 0.002
    np.testing.assert_allclose(rec.height.z[10:54, 10:54], aligned.height.z[10:54, 10:54], atol=1e-6)


def test_reconstruct_shape_mismatch():
    gt = make_scene(SceneSpec(kind="plane", rows=16, cols=16))
    with pytest.raises(InputError, match="tof_depth"):
        reconstruct(render_polarization(gt), gt.depth, gt.depth[:8], PipelineConfig())
