import itertools

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from stairpol.errors import InputError
from stairpol.pointcloud import (
    DecisionInputs,
    PlaneLabel,
    SceneLabel,
    SegmentationParams,
    SegmentationResult,
    classify_staircase,
    decide,
    estimate_normals,
    euclidean_cluster,
    partition_by_normal,
    segment,
    segment_and_classify,
)
from stairpol.synth import StairCloudSpec, make_stair_cloud

UP, DOWN, UNK = SceneLabel.UPSTAIRS, SceneLabel.DOWNSTAIRS, SceneLabel.UNKNOWN


def plane_grid(n=30, spacing=10.0):
    u, v = np.meshgrid(np.arange(n) * spacing, np.arange(n) * spacing)
    return np.column_stack([u.ravel(), v.ravel(), np.zeros(u.size)])


def test_normals_of_plane():
    normals = estimate_normals(plane_grid(), k=10)
    np.testing.assert_allclose(np.abs(normals[:, 2]), 1.0, atol=1e-9)
    # oriented toward the viewing direction
    assert np.all(normals[:, 2] > 0)


def test_normals_of_tilted_noisy_plane():
    rng = np.random.default_rng(0)
    r = Rotation.from_euler("xy", [30, -20], degrees=True)
    pts = r.apply(plane_grid(40, 10.0)) + rng.normal(0, 0.5, (1600, 3))
    normals = estimate_normals(pts, k=20)
    truth = r.apply([0, 0, 1.0])
    ang = np.degrees(np.arccos(np.clip(np.abs(normals @ truth), -1, 1)))
    assert np.median(ang) < 5.0


def test_normals_input_errors():
    with pytest.raises(InputError):
        estimate_normals(np.zeros((5, 2)))
    with pytest.raises(InputError):
        estimate_normals(np.zeros((5, 3)), k=10)


def test_partition_examples():
    g = np.array([0.0, 0.0, -1.0])
    normals = np.array(
        [[0, 0, 1.0], [0, 0, -1.0], [1, 0, 0], [0, 1, 0], [1, 0, 1.0],
         [np.sin(np.radians(10)), 0, np.cos(np.radians(10))],
         [np.sin(np.radians(20)), 0, np.cos(np.radians(20))]]
    )
    labels = partition_by_normal(normals, g)
    assert labels.tolist() == [PlaneLabel.HORIZONTAL, PlaneLabel.HORIZONTAL, PlaneLabel.VERTICAL,
                               PlaneLabel.VERTICAL, PlaneLabel.OTHER, PlaneLabel.HORIZONTAL, PlaneLabel.OTHER]
    with pytest.raises(InputError):
        partition_by_normal(normals, [0, 0, 0])


def test_partition_invariant_under_common_rotation():
    rng = np.random.default_rng(1)
    normals = rng.normal(size=(500, 3))
    g = np.array([0.0, -1.0, 0.0])
    r = Rotation.random(random_state=2)
    a = partition_by_normal(normals, g)
    b = partition_by_normal(r.apply(normals), r.apply(g))
    # the angles are identical up to rounding, so only knife-edge cases may differ
    assert (a != b).sum() <= 1


def test_euclidean_cluster_examples():
    pts = np.array([[0, 0, 0], [5, 0, 0], [10, 0, 0], [100, 0, 0], [104, 0, 0], [500, 0, 0.0]])
    clusters = euclidean_cluster(pts, tolerance_mm=6.0)
    assert [c.tolist() for c in clusters] == [[0, 1, 2], [3, 4], [5]]
    assert [c.tolist() for c in euclidean_cluster(pts, 6.0, min_size=2)] == [[0, 1, 2], [3, 4]]
    assert euclidean_cluster(np.zeros((0, 3)), 1.0) == []
    with pytest.raises(InputError):
        euclidean_cluster(pts, 0.0)


def test_euclidean_cluster_partitions_points():
    pts = np.random.default_rng(3).uniform(0, 200, (300, 3))
    clusters = euclidean_cluster(pts, 20.0)
    flat = np.sort(np.concatenate(clusters))
    np.testing.assert_array_equal(flat, np.arange(300))
    sizes = [len(c) for c in clusters]
    assert sizes == sorted(sizes, reverse=True)
    # points in different clusters are farther apart than the tolerance
    if len(clusters) > 1:
        a, b = pts[clusters[0]], pts[clusters[1]]
        assert np.min(np.linalg.norm(a[:, None] - b[None], axis=2)) > 20.0


def threshold_oracle(r1, r2, t1=0.4, t2=0.8):
    if r1 > t1 and r2 > t1:
        return UP
    if r2 > t2:
        return DOWN
    return UNK


@pytest.mark.parametrize(
    "l1, l2, expected", [(45, 45, UP), (10, 85, DOWN), (10, 50, UNK), (41, 59, UP), (40, 60, UNK), (0, 81, DOWN)]
)
def test_classify_examples(l1, l2, expected):
    seg = SegmentationResult(labels=np.zeros(0), l_total=100, l1=l1, l2=l2)
    assert classify_staircase(seg) == expected


def test_classify_grid():
    for l1, l2 in itertools.product(range(0, 100, 10), range(0, 100, 10)):
        if l1 + l2 > 100:
            continue
        seg = SegmentationResult(labels=np.zeros(0), l_total=100, l1=l1, l2=l2)
        assert classify_staircase(seg) == threshold_oracle(l1 / 100, l2 / 100), (l1, l2)
    with pytest.raises(InputError):
        classify_staircase(SegmentationResult(labels=np.zeros(0), l_total=0))


# expected results of the fusion rule, written out by hand
DECISION_TABLE = {
    (UP, UP, UP): UP, (UP, UP, DOWN): UP, (UP, UP, UNK): UP,
    (DOWN, DOWN, UP): DOWN, (DOWN, DOWN, DOWN): DOWN, (DOWN, DOWN, UNK): DOWN,
    (UNK, UNK, UP): UNK, (UNK, UNK, DOWN): UNK, (UNK, UNK, UNK): UNK,
    (UP, DOWN, UP): UP, (UP, DOWN, DOWN): DOWN, (UP, DOWN, UNK): DOWN,
    (DOWN, UP, DOWN): DOWN, (DOWN, UP, UP): UP, (DOWN, UP, UNK): UP,
    (UP, UNK, UP): UP, (UP, UNK, DOWN): UNK, (UP, UNK, UNK): UNK,
    (UNK, UP, UNK): UNK, (UNK, UP, UP): UP, (UNK, UP, DOWN): UP,
    (DOWN, UNK, DOWN): DOWN, (DOWN, UNK, UP): UNK, (DOWN, UNK, UNK): UNK,
    (UNK, DOWN, UNK): UNK, (UNK, DOWN, UP): DOWN, (UNK, DOWN, DOWN): DOWN,
}


def test_decide_all_triples():
    assert len(DECISION_TABLE) == 27
    for (f, b, p), expected in DECISION_TABLE.items():
        assert decide(DecisionInputs(front=f, back=b, cloud_seg=p)) == expected, (f, b, p)


def test_scene_label_parse():
    assert SceneLabel.parse("up") is UP
    assert SceneLabel.parse("Downstairs") is DOWN
    assert SceneLabel.parse(None) is UNK
    with pytest.raises(InputError):
        SceneLabel.parse("sideways")


def test_params_validation():
    with pytest.raises(InputError):
        SegmentationParams(k_neighbors=2)
    with pytest.raises(InputError):
        SegmentationParams(horiz_angle_deg=50)
    with pytest.raises(InputError):
        SegmentationParams(cluster_tolerance_mm=0)


def test_noiseless_upstairs_segments_into_treads_and_risers():
    spec = StairCloudSpec(kind="upstairs", depression_deg=(35, 35), distance_mm=(2000, 2000))
    pts, g, label = make_stair_cloud(spec, random_pose=False)
    seg = segment(pts, g)
    assert label == "Upstairs"
    assert len(seg.clusters[PlaneLabel.HORIZONTAL]) == 4
    assert len(seg.clusters[PlaneLabel.VERTICAL]) == 4
    assert seg.l1 + seg.l2 <= seg.l_total


@pytest.mark.parametrize("kind, expected", [("upstairs", UP), ("downstairs", DOWN), ("floor_wall", UNK)])
def test_reference_clouds_classified(kind, expected):
    pts, g, label = make_stair_cloud(StairCloudSpec(kind=kind, noise_mm=2.0), seed=4)
    assert SceneLabel.parse(label) == expected
    _, got = segment_and_classify(pts, g)
    assert got == expected


def test_segment_rejects_empty_cloud():
    with pytest.raises(InputError):
        segment(np.zeros((0, 3)), [0, 0, -1])
