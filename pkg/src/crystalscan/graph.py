"""Bone adjacency graph, crystal clustering, and per-crystal features.

Bones whose ellipses sit close together and point the same way are linked
into a graph; its connected components are the candidate crystals.  Each
surviving cluster is delineated by a convex hull and an alpha shape, and
summarized as one feature record.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage, sparse
from scipy.spatial import ConvexHull, Delaunay, QhullError, cKDTree

from .params import ParameterSet
from .skeleton import Bone

logger = logging.getLogger(__name__)


def angdiff_180(a: float, b: float) -> float:
    """Angle between two undirected lines, folded to [0, 90] degrees."""
    d = abs(a - b) % 180.0
    return min(d, 180.0 - d)


@dataclass(frozen=True)
class BoneGraph:
    """Bone adjacency relation as a sparse symmetric boolean matrix."""

    n: int
    adjacency: sparse.csr_matrix

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]


@dataclass
class CrystalRegion:
    """Geometry of one detected crystal."""

    bone_ids: list[int]
    hull_vertices: np.ndarray        # (k, 2) float, (row, col), CCW boundary
    shape_polygons: list[np.ndarray]  # alpha-shape boundary loops, (m, 2) (row, col)
    mask: np.ndarray                 # (H, W) bool, alpha-shape interior
    degenerate: bool = False

    @property
    def hull_area_px2(self) -> float:
        return polygon_area(self.hull_vertices)


@dataclass(frozen=True)
class CrystalRecord:
    """One row of the per-crystal feature table."""

    image_name: str
    centroid_rc: tuple[float, float]   # (row, col) in px
    area_nm2: float
    pattern_angle_deg: float | None    # fringe normal, (-180, 180]
    d_spacing_nm: float | None
    major_axis_nm: float
    minor_axis_nm: float
    axis_angle_deg: float              # shape ellipse angle, (-90, 90]


@dataclass(frozen=True)
class CorrelationRecord:
    """Pairwise proximity/alignment measurements between two crystals."""

    pair: tuple[int, int]
    metric_distance: float
    direct_distance_nm: float
    relative_angle_deg: float | None


def build_adjacency(bones: list[Bone], p: ParameterSet) -> BoneGraph:
    """Link bones whose centers are near and whose axes are aligned.

    Edge (i, j) exists iff the center distance is strictly below the
    adjacency distance and the folded axis-angle difference is strictly
    below the adjacency angle.
    """
    n = len(bones)
    rows, cols = [], []
    if n >= 2:
        centers = np.array([b.ellipse.center for b in bones])
        thetas = np.array([b.ellipse.theta_deg for b in bones])
        d_max = p.adjacency_dist_px
        tree = cKDTree(centers)
        for i, j in sorted(tree.query_pairs(d_max)):
            if (np.hypot(*(centers[i] - centers[j])) < d_max
                    and angdiff_180(thetas[i], thetas[j]) < p.thresh_theta):
                rows += [i, j]
                cols += [j, i]
    adj = sparse.csr_matrix(
        (np.ones(len(rows), dtype=bool), (rows, cols)), shape=(n, n))
    return BoneGraph(n=n, adjacency=adj)


def connected_components(g: BoneGraph) -> list[list[int]]:
    """Partition nodes into connected clusters via iterative depth-first search."""
    visited = np.zeros(g.n, dtype=bool)
    clusters = []
    for seed in range(g.n):
        if visited[seed]:
            continue
        stack = [seed]
        visited[seed] = True
        cluster = []
        while stack:
            node = stack.pop()
            cluster.append(node)
            for nb in g.neighbors(node):
                if not visited[nb]:
                    visited[nb] = True
                    stack.append(nb)
        clusters.append(sorted(cluster))
    return clusters


def filter_clusters(clusters: list[list[int]], bones: list[Bone],
                    p: ParameterSet) -> list[list[int]]:
    """Drop clusters below the node-count or hull-area thresholds (>= keeps)."""
    kept = []
    for cluster in clusters:
        if len(cluster) < p.cluster_size:
            continue
        pts = np.concatenate([bones[i].pixels for i in cluster])
        if _hull_area(pts) < p.min_cluster_area_px2:
            continue
        kept.append(cluster)
    return kept


def _hull_area(pts: np.ndarray) -> float:
    pts = np.unique(np.asarray(pts, dtype=np.float64), axis=0)
    if len(pts) < 3:
        return 0.0
    try:
        return ConvexHull(pts).volume  # qhull "volume" is area in 2D
    except QhullError:
        return 0.0  # collinear point set


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace area of a simple polygon given as (k, 2) vertices."""
    if len(vertices) < 3:
        return 0.0
    r = vertices[:, 0]
    c = vertices[:, 1]
    return 0.5 * abs(np.dot(c, np.roll(r, -1)) - np.dot(r, np.roll(c, -1)))


def polygon_centroid(vertices: np.ndarray) -> tuple[float, float]:
    """Area centroid (row, col) of a simple polygon; vertex mean if degenerate."""
    v = np.asarray(vertices, dtype=np.float64)
    if len(v) < 3:
        return tuple(v.mean(axis=0))
    r, c = v[:, 0], v[:, 1]
    rn, cn = np.roll(r, -1), np.roll(c, -1)
    cross = c * rn - cn * r
    area2 = cross.sum()
    if abs(area2) < 1e-12:
        return tuple(v.mean(axis=0))
    cr = ((r + rn) * cross).sum() / (3.0 * area2)
    cc = ((c + cn) * cross).sum() / (3.0 * area2)
    return (cr, cc)


def region_of(cluster: list[int], bones: list[Bone], p: ParameterSet,
              dims: tuple[int, int]) -> CrystalRegion:
    """Segment a cluster into hull + alpha shape + rasterized interior mask.

    The alpha-shape disc radius equals the adjacency distance: bones close
    enough to be graph neighbors are close enough to share crystal surface.
    Collinear clusters degenerate to a 1-px-dilated segment and are flagged.
    """
    if not cluster:
        raise ValueError("empty cluster")
    pts = np.unique(np.concatenate([bones[i].pixels for i in cluster]), axis=0)
    h, w = dims
    try:
        hull = ConvexHull(pts.astype(np.float64))
    except QhullError:
        mask = np.zeros(dims, dtype=bool)
        mask[pts[:, 0], pts[:, 1]] = True
        mask = ndimage.binary_dilation(mask, structure=np.ones((3, 3), dtype=bool))
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        segment = np.array([lo, hi], dtype=np.float64)
        logger.warning("degenerate collinear cluster of %d bones", len(cluster))
        return CrystalRegion(bone_ids=list(cluster), hull_vertices=segment,
                             shape_polygons=[segment], mask=mask, degenerate=True)

    hull_vertices = pts[hull.vertices].astype(np.float64)
    tri = Delaunay(pts.astype(np.float64))
    kept = _alpha_triangles(pts, tri.simplices, p.adjacency_dist_px)
    mask = np.zeros(dims, dtype=np.uint8)
    if kept.any():
        polys = [pts[s][:, ::-1].astype(np.int32) for s in tri.simplices[kept]]
        cv2.fillPoly(mask, polys, 1)
    else:  # alpha radius smaller than every triangle: fall back to the pixels
        mask[pts[:, 0], pts[:, 1]] = 1
    return CrystalRegion(
        bone_ids=list(cluster),
        hull_vertices=hull_vertices,
        shape_polygons=_boundary_loops(pts, tri.simplices[kept]),
        mask=mask.astype(bool),
    )


def _alpha_triangles(pts: np.ndarray, simplices: np.ndarray,
                     radius: float) -> np.ndarray:
    """Boolean mask of Delaunay triangles with circumradius <= radius."""
    if len(simplices) == 0:
        return np.zeros(0, dtype=bool)
    a = pts[simplices[:, 0]].astype(np.float64)
    b = pts[simplices[:, 1]].astype(np.float64)
    c = pts[simplices[:, 2]].astype(np.float64)
    la = np.linalg.norm(b - c, axis=1)
    lb = np.linalg.norm(a - c, axis=1)
    lc = np.linalg.norm(a - b, axis=1)
    cross = np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                   - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    with np.errstate(divide="ignore", invalid="ignore"):
        circum_r = la * lb * lc / (2.0 * cross)  # abc / (4 * area)
    circum_r[cross == 0] = np.inf
    return circum_r <= radius


def _boundary_loops(pts: np.ndarray, simplices: np.ndarray) -> list[np.ndarray]:
    """Chain the once-used edges of the kept triangles into boundary loops."""
    counts: dict[tuple[int, int], int] = {}
    for s in simplices:
        for i, j in ((s[0], s[1]), (s[1], s[2]), (s[0], s[2])):
            e = (min(i, j), max(i, j))
            counts[e] = counts.get(e, 0) + 1
    boundary = [e for e, n in counts.items() if n == 1]
    adj: dict[int, list[int]] = {}
    for i, j in boundary:
        adj.setdefault(i, []).append(j)
        adj.setdefault(j, []).append(i)
    loops = []
    unused = set(boundary)
    while unused:
        start_edge = min(unused)
        unused.discard(start_edge)
        loop = [start_edge[0], start_edge[1]]
        while True:
            cur, prev = loop[-1], loop[-2]
            nxt = [v for v in adj[cur]
                   if (min(cur, v), max(cur, v)) in unused]
            if not nxt:
                break
            v = min(nxt)
            unused.discard((min(cur, v), max(cur, v)))
            if v == loop[0]:
                break
            loop.append(v)
        loops.append(pts[loop].astype(np.float64))
    return loops


def shape_ellipse(mask: np.ndarray):
    """Moment ellipse of a boolean mask's true pixels."""
    from .bones import fit_ellipse

    return fit_ellipse(np.argwhere(mask))


def crystal_features(region: CrystalRegion, dsp, cal: float,
                     image_name: str = "") -> CrystalRecord:
    """Summarize one crystal region as a feature record.

    Centroid comes from the hull polygon, area from the alpha-shape mask,
    axes and axis angle from the moment ellipse of the mask; d-spacing and
    pattern angle are copied from the FFT result (absent when no peak).
    """
    centroid = polygon_centroid(region.hull_vertices)
    area_nm2 = float(region.mask.sum()) / cal**2
    ell = shape_ellipse(region.mask)
    return CrystalRecord(
        image_name=image_name,
        centroid_rc=centroid,
        area_nm2=area_nm2,
        pattern_angle_deg=None if dsp is None else dsp.pattern_angle_deg,
        d_spacing_nm=None if dsp is None else dsp.d_nm,
        major_axis_nm=ell.major_len / cal,
        minor_axis_nm=ell.minor_len / cal,
        axis_angle_deg=ell.theta_deg,
    )


def pair_correlations(records: list[CrystalRecord], cal: float,
                      metric_cap: float = 3.0) -> list[CorrelationRecord]:
    """Proximity and alignment for every near pair of crystals in one image.

    A pair is reported when its metric distance (center separation over the
    summed equal-area-circle radii) stays below ``metric_cap``.
    """
    out = []
    for i in range(len(records)):
        for j in range(i + 1, len(records)):
            a, b = records[i], records[j]
            if a.area_nm2 <= 0 or b.area_nm2 <= 0:
                logger.warning("skipping pair (%d, %d): zero crystal area", i, j)
                continue
            dr = a.centroid_rc[0] - b.centroid_rc[0]
            dc = a.centroid_rc[1] - b.centroid_rc[1]
            direct = math.hypot(dr, dc) / cal
            radius_sum = (math.sqrt(a.area_nm2 / math.pi)
                          + math.sqrt(b.area_nm2 / math.pi))
            metric = direct / radius_sum
            if metric >= metric_cap:
                continue
            if a.pattern_angle_deg is None or b.pattern_angle_deg is None:
                rel = None
            else:
                rel = angdiff_180(a.pattern_angle_deg, b.pattern_angle_deg)
            out.append(CorrelationRecord(pair=(i, j), metric_distance=metric,
                                         direct_distance_nm=direct,
                                         relative_angle_deg=rel))
    return out
