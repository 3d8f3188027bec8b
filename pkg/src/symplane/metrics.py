"""Evaluation metrics: symmetry distance error and threshold-averaged F-score."""

from __future__ import annotations

import csv
import heapq
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMeshError
from .geometry import NormalizedMesh, Plane, reflect_point, sample_surface

__all__ = [
    "GroundTruth",
    "EvalReport",
    "TriangleBVH",
    "point_triangles_sqdist",
    "sde",
    "plane_distance",
    "fscore",
    "DEFAULT_THRESHOLDS",
]

DEFAULT_THRESHOLDS = (0.05, 0.1, 0.15, 0.2)


@dataclass(frozen=True)
class GroundTruth:
    """Reference symmetry planes, unit-normal 4-vector form."""

    planes: list[Plane]

    @classmethod
    def from_4vectors(cls, vecs) -> "GroundTruth":
        planes = []
        for v in vecs:
            v = np.asarray(v, dtype=np.float64)
            planes.append(Plane(v[:3], float(v[3])))
        return cls(planes)

    def as_4vectors(self) -> np.ndarray:
        return np.stack([p.as_4vector() for p in self.planes]) if self.planes else np.zeros((0, 4))

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        return cls.from_4vectors(json.loads(text))

    def to_json(self) -> str:
        return json.dumps([list(map(float, p.as_4vector())) for p in self.planes], indent=2)


def point_triangles_sqdist(point: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Exact squared distance from one point to each triangle in `tri` (m, 3, 3)."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    ap = point - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = point - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = point - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    closest = np.empty_like(a)

    # vertex regions
    reg_a = (d1 <= 0) & (d2 <= 0)
    reg_b = (d3 >= 0) & (d4 <= d3)
    reg_c = (d6 >= 0) & (d5 <= d6)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
        w_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
        w_bc = np.where((d4 - d3) + (d5 - d6) != 0, (d4 - d3) / ((d4 - d3) + (d5 - d6)), 0.0)
        denom = va + vb + vc
        v_in = np.where(denom != 0, vb / denom, 0.0)
        w_in = np.where(denom != 0, vc / denom, 0.0)

    reg_ab = (~reg_a) & (~reg_b) & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    reg_ac = (~reg_a) & (~reg_c) & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    reg_bc = (~reg_b) & (~reg_c) & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)

    closest[:] = a + v_in[:, None] * ab + w_in[:, None] * ac  # interior default
    closest[reg_bc] = b[reg_bc] + w_bc[reg_bc, None] * (c[reg_bc] - b[reg_bc])
    closest[reg_ac] = a[reg_ac] + w_ac[reg_ac, None] * ac[reg_ac]
    closest[reg_ab] = a[reg_ab] + v_ab[reg_ab, None] * ab[reg_ab]
    closest[reg_c] = c[reg_c]
    closest[reg_b] = b[reg_b]
    closest[reg_a] = a[reg_a]

    diff = closest - point
    return np.einsum("ij,ij->i", diff, diff)


class _Node:
    __slots__ = ("lo", "hi", "left", "right", "tri_idx")

    def __init__(self, lo, hi, left=None, right=None, tri_idx=None):
        self.lo = lo
        self.hi = hi
        self.left = left
        self.right = right
        self.tri_idx = tri_idx


class TriangleBVH:
    """Median-split AABB hierarchy for exact point-to-mesh distance queries."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray, leaf_size: int = 8):
        if len(faces) == 0:
            raise DegenerateMeshError("cannot build a BVH over zero triangles")
        self.tri = np.asarray(vertices, dtype=np.float64)[faces]
        self.leaf_size = leaf_size
        centroids = self.tri.mean(axis=1)
        self.root = self._build(np.arange(len(faces)), centroids)

    def _build(self, idx: np.ndarray, centroids: np.ndarray) -> _Node:
        tri = self.tri[idx]
        lo = tri.min(axis=(0, 1))
        hi = tri.max(axis=(0, 1))
        if len(idx) <= self.leaf_size:
            return _Node(lo, hi, tri_idx=idx)
        cent = centroids[idx]
        axis = int(np.argmax(cent.max(axis=0) - cent.min(axis=0)))
        order = np.argsort(cent[:, axis], kind="stable")
        half = len(idx) // 2
        left = self._build(idx[order[:half]], centroids)
        right = self._build(idx[order[half:]], centroids)
        return _Node(lo, hi, left=left, right=right)

    @staticmethod
    def _aabb_sqdist(point: np.ndarray, node: _Node) -> float:
        d = np.maximum(np.maximum(node.lo - point, 0.0), point - node.hi)
        return float(d @ d)

    def query_one(self, point: np.ndarray) -> float:
        """Squared distance from `point` to the closest triangle."""
        best = np.inf
        heap = [(self._aabb_sqdist(point, self.root), 0, self.root)]
        tie = 1
        while heap:
            bound, _, node = heapq.heappop(heap)
            if bound >= best:
                break
            if node.tri_idx is not None:
                d = point_triangles_sqdist(point, self.tri[node.tri_idx])
                best = min(best, float(d.min()))
                continue
            for child in (node.left, node.right):
                cb = self._aabb_sqdist(point, child)
                if cb < best:
                    heapq.heappush(heap, (cb, tie, child))
                    tie += 1
        return best

    def query(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.array([self.query_one(p) for p in pts])


def sde(
    nmesh: NormalizedMesh,
    plane: Plane,
    n_samples: int = 1000,
    seed: int = 0,
    normalized: bool = True,
    bvh: TriangleBVH | None = None,
) -> float:
    """Symmetry distance error: mean squared distance from reflected surface
    samples to the mesh surface (exact point-to-triangle distances).

    With normalized=True (default) coordinates are measured in units of the
    object diagonal, matching the scale-free Chamfer threshold convention.
    """
    samples = sample_surface(nmesh, n_samples, seed)
    mirrored = reflect_point(samples.points, plane)
    if bvh is None:
        bvh = TriangleBVH(nmesh.vertices, nmesh.faces)
    sq = bvh.query(mirrored)
    value = float(sq.mean())
    if normalized:
        value /= nmesh.diagonal**2
    return value


def plane_distance(p, q) -> float:
    """Distance between plane 4-vectors, minimized over the sign ambiguity."""
    p = np.asarray(p, dtype=np.float64).reshape(4)
    q = np.asarray(q, dtype=np.float64).reshape(4)
    p = p / np.linalg.norm(p[:3])
    q = q / np.linalg.norm(q[:3])
    return float(min(np.linalg.norm(p - q), np.linalg.norm(p + q)))


@dataclass
class EvalReport:
    """Per-threshold precision/recall/F plus their average and mean SDE."""

    thresholds: list[float]
    per_threshold: list[dict]
    fscore_mean: float
    sde_mean: float | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "sde_mean": self.sde_mean,
                "fscore_mean": self.fscore_mean,
                "per_threshold": self.per_threshold,
            },
            indent=2,
        )

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.DictWriter(
            out,
            fieldnames=["threshold", "tp", "fp", "fn", "precision", "recall", "fscore"],
        )
        writer.writeheader()
        for row in self.per_threshold:
            writer.writerow(row)
        return out.getvalue()


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def fscore(
    detected: list[Plane],
    gt: GroundTruth,
    thresholds=DEFAULT_THRESHOLDS,
    diagonal: float = 1.0,
) -> EvalReport:
    """Greedy one-to-one matching of detected planes to ground truth.

    Pairs are matched in ascending plane-distance order; each ground-truth
    plane absorbs at most one detection. Plane offsets are divided by
    `diagonal` before building 4-vectors so the distance mixes comparable
    normal and offset magnitudes.
    """
    thresholds = list(thresholds)
    if any(t <= 0 for t in thresholds) or sorted(thresholds) != thresholds:
        raise ValueError("thresholds must be positive and ascending")
    det4 = [p.as_4vector(diagonal) for p in detected]
    gt4 = [p.as_4vector(diagonal) for p in gt.planes]
    pairs = sorted(
        ((plane_distance(d, g), di, gi) for di, d in enumerate(det4) for gi, g in enumerate(gt4)),
        key=lambda t: (t[0], t[1], t[2]),
    )
    rows = []
    fsum = 0.0
    for thr in thresholds:
        used_d: set[int] = set()
        used_g: set[int] = set()
        tp = 0
        for dist, di, gi in pairs:
            if dist > thr:
                break
            if di in used_d or gi in used_g:
                continue
            used_d.add(di)
            used_g.add(gi)
            tp += 1
        fp = len(det4) - tp
        fn = len(gt4) - tp
        pr = _safe_div(tp, tp + fp)
        re = _safe_div(tp, tp + fn)
        f = _safe_div(2.0 * pr * re, pr + re)
        rows.append(
            {
                "threshold": thr,
                "tp": tp,
                "fp": fp,
                "fn": fn,
                "precision": pr,
                "recall": re,
                "fscore": f,
            }
        )
        fsum += f
    return EvalReport(thresholds, rows, fsum / len(thresholds))
