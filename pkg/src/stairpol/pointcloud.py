"""Normal-based stair plane segmentation and upstairs/downstairs decisions."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import InputError


class SceneLabel(str, enum.Enum):
    UPSTAIRS = "Upstairs"
    DOWNSTAIRS = "Downstairs"
    UNKNOWN = "Unknown"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if value is None:
            return cls.UNKNOWN
        key = str(value).strip().lower()
        aliases = {"up": cls.UPSTAIRS, "upstairs": cls.UPSTAIRS, "down": cls.DOWNSTAIRS,
                   "downstairs": cls.DOWNSTAIRS, "unknown": cls.UNKNOWN, "none": cls.UNKNOWN, "": cls.UNKNOWN}
        if key not in aliases:
            raise InputError(f"unknown scene label {value!r}", field="label")
        return aliases[key]


class PlaneLabel(enum.IntEnum):
    OTHER = 0
    HORIZONTAL = 1
    VERTICAL = 2


@dataclass
class SegmentationParams:
    k_neighbors: int = 28
    horiz_angle_deg: float = 15.0
    vert_angle_deg: float = 15.0
    cluster_tolerance_mm: float = 25.0
    min_cluster_size: int = 20

    def __post_init__(self):
        if self.k_neighbors < 3:
            raise InputError("k_neighbors must be >= 3", field="k_neighbors")
        for name in ("horiz_angle_deg", "vert_angle_deg"):
            if not 0 < getattr(self, name) < 45:
                raise InputError("angle threshold must lie in (0, 45) degrees", field=name)
        if self.cluster_tolerance_mm <= 0:
            raise InputError("cluster tolerance must be positive", field="cluster_tolerance_mm")


@dataclass
class SegmentationResult:
    """Per-point plane labels and the clusters that survived noise removal.

    ``l1`` counts vertical-plane points and ``l2`` horizontal-plane points
    inside surviving clusters; ``l_total`` is the whole cloud.
    """

    labels: np.ndarray
    clusters: dict = field(default_factory=dict)
    l_total: int = 0
    l1: int = 0
    l2: int = 0

    @property
    def ratios(self):
        if self.l_total == 0:
            return 0.0, 0.0
        return self.l1 / self.l_total, self.l2 / self.l_total

    def to_dict(self):
        r1, r2 = self.ratios
        return {"l": self.l_total, "l1": self.l1, "l2": self.l2, "l1_ratio": r1, "l2_ratio": r2,
                "horizontal_clusters": len(self.clusters.get(PlaneLabel.HORIZONTAL, [])),
                "vertical_clusters": len(self.clusters.get(PlaneLabel.VERTICAL, []))}


@dataclass(frozen=True)
class DecisionInputs:
    front: SceneLabel
    back: SceneLabel
    cloud_seg: SceneLabel


def estimate_normals(cloud, k: int = 12, view_direction=(0.0, 0.0, 1.0)):
    """Unit normals from the smallest principal axis of each k-neighbourhood.

    Normals are flipped to have a non-negative dot product with
    ``view_direction``.
    """
    pts = np.asarray(cloud, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InputError(f"expected an (N, 3) cloud, got {pts.shape}", field="cloud")
    if k > len(pts):
        raise InputError(f"k={k} exceeds the number of points ({len(pts)})", field="k")
    if k < 3:
        raise InputError("k must be >= 3", field="k")
    _, idx = cKDTree(pts).query(pts, k=k)
    # second moments about the query point, then shift to the neighbourhood mean
    local = pts[idx] - pts[:, None, :]
    mean = local.mean(axis=1)
    cov = np.matmul(local.transpose(0, 2, 1), local) / k - mean[:, :, None] * mean[:, None, :]
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    flip = normals @ np.asarray(view_direction, dtype=float) < 0
    normals[flip] *= -1
    return normals


def _unit(v, name):
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if v.shape != (3,) or not norm > 0:
        raise InputError("must be a non-zero 3-vector", field=name)
    return v / norm


def partition_by_normal(normals, gravity, params: SegmentationParams | None = None) -> np.ndarray:
    """Label each normal Horizontal, Vertical or Other by its angle to gravity."""
    params = params or SegmentationParams()
    g = _unit(gravity, "gravity")
    n = np.asarray(normals, dtype=float)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    ang = np.degrees(np.arccos(np.clip(n @ g, -1.0, 1.0)))
    labels = np.full(len(n), PlaneLabel.OTHER, dtype=np.int8)
    horiz = (ang <= params.horiz_angle_deg) | (ang >= 180.0 - params.horiz_angle_deg)
    vert = np.abs(ang - 90.0) <= params.vert_angle_deg
    labels[vert] = PlaneLabel.VERTICAL
    labels[horiz] = PlaneLabel.HORIZONTAL
    return labels


def euclidean_cluster(points, tolerance_mm: float, min_size: int = 1):
    """Connected components of the ``tolerance_mm`` neighbour graph.

    Returns a list of index arrays into ``points``, largest first; components
    with fewer than ``min_size`` points are dropped.
    """
    if tolerance_mm <= 0:
        raise InputError("tolerance must be positive", field="tolerance_mm")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        return []
    pairs = cKDTree(pts).query_pairs(tolerance_mm, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    count, comp = connected_components(graph, directed=False)
    sizes = np.bincount(comp, minlength=count)
    order = sorted((c for c in range(count) if sizes[c] >= min_size), key=lambda c: (-sizes[c], c))
    return [np.flatnonzero(comp == c) for c in order]


def classify_staircase(seg: SegmentationResult, t1: float = 0.4, t2: float = 0.8) -> SceneLabel:
    """Threshold the vertical and horizontal point shares.

    Both shares above ``t1`` means upstairs; otherwise a horizontal share above
    ``t2`` means downstairs. The upstairs test runs first, so clouds meeting
    both conditions are upstairs.
    """
    if seg.l_total <= 0:
        raise InputError("segmentation has no points", field="l_total")
    r1, r2 = seg.l1 / seg.l_total, seg.l2 / seg.l_total
    if r1 > t1 and r2 > t1:
        return SceneLabel.UPSTAIRS
    if r2 > t2:
        return SceneLabel.DOWNSTAIRS
    return SceneLabel.UNKNOWN


def decide(inputs: DecisionInputs) -> SceneLabel:
    """Resolve front/back frame disagreement using the point-cloud result."""
    f, b, p = inputs.front, inputs.back, inputs.cloud_seg
    if b == f and b != SceneLabel.UNKNOWN and f != SceneLabel.UNKNOWN:
        return b
    if p == f:
        return f
    return b


def segment(cloud, gravity, params: SegmentationParams | None = None) -> SegmentationResult:
    params = params or SegmentationParams()
    pts = np.asarray(cloud, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise InputError("cloud must be a non-empty (N, 3) array", field="cloud")
    normals = estimate_normals(pts, min(params.k_neighbors, len(pts)))
    labels = partition_by_normal(normals, gravity, params)
    clusters = {}
    counts = {}
    for lab in (PlaneLabel.HORIZONTAL, PlaneLabel.VERTICAL):
        idx = np.flatnonzero(labels == lab)
        found = euclidean_cluster(pts[idx], params.cluster_tolerance_mm, params.min_cluster_size)
        clusters[lab] = [idx[c] for c in found]
        counts[lab] = int(sum(len(c) for c in found))
    return SegmentationResult(
        labels=labels,
        clusters=clusters,
        l_total=len(pts),
        l1=counts[PlaneLabel.VERTICAL],
        l2=counts[PlaneLabel.HORIZONTAL],
    )


def segment_and_classify(cloud, gravity, params: SegmentationParams | None = None,
                         t1: float = 0.4, t2: float = 0.8):
    seg = segment(cloud, gravity, params)
    return seg, classify_staircase(seg, t1, t2)
