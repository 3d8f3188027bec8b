"""Symmetry plane detection: feature matching, candidate planes, Chamfer
verification, confidence scoring, angular dedup and top-k selection."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import EmptySetError, TooFewPointsError
from .geometry import Plane, reflect_point
from .features import FeatureCloud

__all__ = [
    "MatchTrio",
    "MatchTrios",
    "CandidatePlane",
    "DetectionConfig",
    "match_trios",
    "candidate_planes",
    "filter_by_origin",
    "chamfer_distance",
    "verify_and_select",
    "detect",
    "planes_to_json",
    "planes_from_json",
]


@dataclass(frozen=True)
class MatchTrio:
    """Anchor i with its two nearest feature-space neighbors j, k."""

    i: int
    j: int
    k: int
    d_ij: float
    d_ik: float


@dataclass(frozen=True)
class MatchTrios:
    """Column-wise batch of match trios (one per anchor point)."""

    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    d_ij: np.ndarray
    d_ik: np.ndarray

    def __len__(self) -> int:
        return len(self.i)

    def __getitem__(self, idx) -> MatchTrio:
        return MatchTrio(
            int(self.i[idx]), int(self.j[idx]), int(self.k[idx]),
            float(self.d_ij[idx]), float(self.d_ik[idx]),
        )

    def __iter__(self):
        for idx in range(len(self)):
            yield self[idx]


@dataclass(frozen=True)
class CandidatePlane:
    """Candidate symmetry plane with optional verification results."""

    plane: Plane
    source: str  # "pair(a,b)" or "trio(i,j,k)"
    chamfer: float | None = None
    confidence: float | None = None


@dataclass(frozen=True)
class DetectionConfig:
    """Thresholds of the detection stage; all overridable.

    chamfer_tau1 is applied to squared distances on coordinates divided by
    the object diagonal, so it is scale-free.
    """

    origin_tol_frac: float = 0.05
    chamfer_tau1: float = 0.01
    angle_tau2_deg: float = 1.0
    max_planes: int = 10
    offset_dedup_frac: float = 0.01

    def __post_init__(self):
        if min(self.origin_tol_frac, self.chamfer_tau1, self.angle_tau2_deg) <= 0:
            raise ValueError("thresholds must be positive")
        if self.max_planes < 1:
            raise ValueError("max_planes must be >= 1")


def match_trios(cloud: FeatureCloud, chunk_size: int = 256) -> MatchTrios:
    """Exact two-nearest-neighbor matching in feature space under L1.

    Ties are broken toward the smaller point index. Self-matches are
    excluded by index (a duplicated feature vector elsewhere is a legal
    zero-distance neighbor).
    """
    n = len(cloud)
    if n < 3:
        raise TooFewPointsError("need at least 3 points to form trios")
    feats = np.ascontiguousarray(cloud.features, dtype=np.float64)
    j = np.empty(n, dtype=np.int64)
    k = np.empty(n, dtype=np.int64)
    d_ij = np.empty(n)
    d_ik = np.empty(n)
    for start in range(0, n, chunk_size):
        stop = min(start + chunk_size, n)
        dist = cdist(feats[start:stop], feats, metric="cityblock")
        rows = np.arange(start, stop)
        dist[rows - start, rows] = np.inf
        # Partition to a small candidate pool, then stable-sort it by
        # (distance, index). Widen the pool if distance ties straddle its edge.
        pool = min(16, n - 1)
        part = np.argpartition(dist, pool - 1, axis=1)[:, :pool]
        for r in range(stop - start):
            cand = part[r]
            dc = dist[r, cand]
            if pool < n - 1:
                cutoff = dc.max()
                # ties at the pool boundary: fall back to the full row
                if (dist[r] <= cutoff).sum() > pool:
                    cand = np.arange(n)
                    dc = dist[r]
            order = cand[np.lexsort((cand, dc))]
            j[start + r] = order[0]
            k[start + r] = order[1]
            d_ij[start + r] = dist[r, order[0]]
            d_ik[start + r] = dist[r, order[1]]
    return MatchTrios(np.arange(n, dtype=np.int64), j, k, d_ij, d_ik)


def _bisector_planes(pa: np.ndarray, pb: np.ndarray, min_sep: float):
    """Perpendicular-bisector planes of point pairs; returns (normals,
    offsets, valid mask)."""
    diff = pb - pa
    sep = np.linalg.norm(diff, axis=1)
    valid = sep >= min_sep
    normals = np.zeros_like(diff)
    normals[valid] = diff[valid] / sep[valid, None]
    mid = (pa + pb) / 2.0
    offsets = -np.einsum("ij,ij->i", normals, mid)
    return normals, offsets, valid


def candidate_planes(
    cloud: FeatureCloud, trios: MatchTrios, diagonal: float
) -> list[CandidatePlane]:
    """Up to four candidate planes per trio: three pair bisectors plus the
    plane through all three points. Near-coincident pairs and collinear
    trios are skipped."""
    pts = cloud.points
    min_sep = 1e-6 * diagonal
    out: list[CandidatePlane] = []

    pi, pj, pk = pts[trios.i], pts[trios.j], pts[trios.k]
    for (a, b, pa, pb) in (
        (trios.i, trios.j, pi, pj),
        (trios.i, trios.k, pi, pk),
        (trios.j, trios.k, pj, pk),
    ):
        normals, offsets, valid = _bisector_planes(pa, pb, min_sep)
        for idx in np.nonzero(valid)[0]:
            out.append(
                CandidatePlane(
                    Plane(normals[idx], offsets[idx]).canonical(),
                    f"pair({a[idx]},{b[idx]})",
                )
            )

    cross = np.cross(pj - pi, pk - pi)
    cross_norm = np.linalg.norm(cross, axis=1)
    planar_ok = cross_norm >= 1e-9 * diagonal * diagonal
    centroid = (pi + pj + pk) / 3.0
    for idx in np.nonzero(planar_ok)[0]:
        n = cross[idx] / cross_norm[idx]
        out.append(
            CandidatePlane(
                Plane(n, -float(n @ centroid[idx])).canonical(),
                f"trio({trios.i[idx]},{trios.j[idx]},{trios.k[idx]})",
            )
        )
    return out


def filter_by_origin(
    cands: list[CandidatePlane], diagonal: float, frac: float
) -> list[CandidatePlane]:
    """Keep planes whose distance to the origin is <= frac * diagonal (inclusive)."""
    if diagonal <= 0:
        raise ValueError("diagonal must be positive")
    limit = frac * diagonal
    return [c for c in cands if c.plane.distance_to_origin() <= limit]


def chamfer_distance(P, Q, workers: int = 1) -> float:
    """Symmetric mean of squared nearest-neighbor distances between two sets.

    Exact (KD-tree queries, no approximation).
    """
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if len(P) == 0 or len(Q) == 0:
        raise EmptySetError("chamfer distance requires non-empty sets")
    d_pq, _ = cKDTree(Q).query(P, k=1, workers=workers)
    d_qp, _ = cKDTree(P).query(Q, k=1, workers=workers)
    return 0.5 * (float(np.mean(d_pq**2)) + float(np.mean(d_qp**2)))


def _reflect_batch(pts: np.ndarray, normals: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Reflect `pts` (n, 3) across each plane; returns (n_planes, n, 3)."""
    signed = pts @ normals.T + offsets  # (n, n_planes)
    return pts[None, :, :] - 2.0 * signed.T[:, :, None] * normals[:, None, :]


class _DistanceLowerBound:
    """Certified lower bound on distance-to-point-set via a voxel distance
    transform: for any query q, dist(q, pts) >= dt[voxel(q)] - voxel_diag,
    because the transform measures center-to-center voxel distances."""

    def __init__(self, pts: np.ndarray, resolution: int = 96):
        from scipy.ndimage import distance_transform_edt

        # queries outside the box are handled by index clipping: clipping is
        # the projection onto the box, which cannot increase the distance to
        # points inside it, so the looked-up bound stays valid
        radius = float(np.linalg.norm(pts, axis=1).max()) * 1.001 + 1e-12
        self.lo = -radius
        self.h = 2.0 * radius / resolution
        self.res = resolution
        idx = ((pts - self.lo) / self.h).astype(np.int64)
        np.clip(idx, 0, resolution - 1, out=idx)
        occupied = np.zeros((resolution,) * 3, dtype=bool)
        occupied[idx[:, 0], idx[:, 1], idx[:, 2]] = True
        dt = distance_transform_edt(~occupied, sampling=self.h)
        self.lower = np.maximum(0.0, dt - self.h * np.sqrt(3.0)).astype(np.float32)

    def mean_sq_bound(self, queries: np.ndarray) -> float:
        idx = ((queries - self.lo) / self.h).astype(np.int64)
        np.clip(idx, 0, self.res - 1, out=idx)
        lb = self.lower[idx[:, 0], idx[:, 1], idx[:, 2]]
        return float(np.mean(lb.astype(np.float64) ** 2))


def _self_reflection_chamfers(
    pts: np.ndarray,
    normals: np.ndarray,
    offsets: np.ndarray,
    tau1: float,
    workers: int,
    probe: int = 1024,
    chunk: int = 512,
) -> np.ndarray:
    """Chamfer between `pts` and its reflection across each plane.

    Both directional terms of the Chamfer sum reduce to the same KD-tree
    queries because reflection is an involutive isometry, so one tree over
    the originals serves every candidate. Certified lower bounds skip full
    evaluation of hopeless candidates: a voxel distance-transform bound
    costing O(n) array lookups, then staged probes (partial sums of the full
    mean). The returned value is exact for every candidate at or below tau1.
    """
    n = len(pts)
    n_cand = len(normals)
    tree = cKDTree(pts)
    out = np.full(n_cand, np.inf)
    stages = [probe] if probe < n else []
    stats = {p: [0, 0] for p in stages}  # candidates probed / rejected
    grid = _DistanceLowerBound(pts) if n_cand * n > 1_000_000 else None
    for start in range(0, n_cand, chunk):
        sl = slice(start, min(start + chunk, n_cand))
        alive = np.arange(sl.start, sl.stop)
        if grid is not None:
            mirrored = _reflect_batch(pts, normals[alive], offsets[alive])
            bounds = np.array([grid.mean_sq_bound(m) for m in mirrored])
            out[alive] = bounds
            alive = alive[bounds <= tau1]
            if len(alive) == 0:
                continue
        for p in stages:
            # Probing only pays while it actually rejects candidates; once
            # the observed rejection rate of a stage is negligible, skip it.
            probed, rejected = stats[p]
            if probed >= 4 * chunk and rejected <= 0.02 * probed:
                continue
            mirrored = _reflect_batch(pts[:p], normals[alive], offsets[alive])
            d, _ = tree.query(mirrored.reshape(-1, 3), k=1, workers=workers)
            lower = (d.reshape(-1, p) ** 2).sum(axis=1) / n
            out[alive] = lower
            stats[p][0] += len(alive)
            stats[p][1] += int(np.sum(lower > tau1))
            alive = alive[lower <= tau1]
            if len(alive) == 0:
                break
        if len(alive) == 0:
            continue
        mirrored = _reflect_batch(pts, normals[alive], offsets[alive])
        d, _ = tree.query(mirrored.reshape(-1, 3), k=1, workers=workers)
        out[alive] = (d.reshape(len(alive), n) ** 2).mean(axis=1)
    return out


def verify_and_select(
    cloud: FeatureCloud,
    cands: list[CandidatePlane],
    cfg: DetectionConfig,
    diagonal: float,
    workers: int = 1,
) -> list[CandidatePlane]:
    """Chamfer-verify candidates, score, dedup and return the top planes.

    Coordinates are divided by the diagonal before the Chamfer test so
    chamfer_tau1 is scale-free. Surviving planes are sorted by ascending
    Chamfer and greedily deduplicated: a plane is redundant when its normal
    is within angle_tau2_deg of a kept plane (up to sign) and the offsets
    differ by less than offset_dedup_frac * diagonal.
    """
    if not cands:
        return []
    pts = cloud.points / diagonal
    normals = np.stack([c.plane.normal for c in cands])
    offsets = np.array([c.plane.offset for c in cands]) / diagonal
    # Mutual nearest neighbors yield the same bisector from both anchors;
    # evaluate each distinct plane once and broadcast the result back.
    key = np.concatenate([normals, offsets[:, None]], axis=1)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    chamfers = _self_reflection_chamfers(
        pts, uniq[:, :3], uniq[:, 3], cfg.chamfer_tau1, workers
    )[inverse]
    scored = [
        replace(cands[i], chamfer=float(chamfers[i]),
                confidence=1.0 - float(chamfers[i]) / cfg.chamfer_tau1)
        for i in np.nonzero(chamfers < cfg.chamfer_tau1)[0]
    ]
    scored.sort(key=lambda c: c.chamfer)

    kept: list[CandidatePlane] = []
    cos_tau2 = np.cos(np.radians(cfg.angle_tau2_deg))
    off_tol = cfg.offset_dedup_frac * diagonal
    for cand in scored:
        redundant = False
        for ref in kept:
            dot = float(cand.plane.normal @ ref.plane.normal)
            sign = 1.0 if dot >= 0 else -1.0
            if abs(dot) >= cos_tau2 and abs(cand.plane.offset - sign * ref.plane.offset) < off_tol:
                redundant = True
                break
        if not redundant:
            kept.append(cand)
            if len(kept) >= cfg.max_planes:
                break
    return kept


def detect(
    cloud: FeatureCloud,
    diagonal: float,
    cfg: DetectionConfig | None = None,
    workers: int = 1,
) -> list[CandidatePlane]:
    """Full detection: match trios, generate candidates, filter, verify, select."""
    cfg = cfg or DetectionConfig()
    trios = match_trios(cloud)
    cands = candidate_planes(cloud, trios, diagonal)
    cands = filter_by_origin(cands, diagonal, cfg.origin_tol_frac)
    return verify_and_select(cloud, cands, cfg, diagonal, workers=workers)


def planes_to_json(planes: list[CandidatePlane]) -> str:
    """Detection output: canonical-sign planes in normalized-mesh units."""
    rows = []
    for c in planes:
        p = c.plane.canonical()
        rows.append(
            {
                "normal": [float(x) for x in p.normal],
                "offset": float(p.offset),
                "chamfer": float(c.chamfer) if c.chamfer is not None else None,
                "confidence": float(c.confidence) if c.confidence is not None else None,
                "source": c.source,
            }
        )
    return json.dumps(rows, indent=2)


def planes_from_json(text: str) -> list[CandidatePlane]:
    rows = json.loads(text)
    return [
        CandidatePlane(
            Plane(np.array(r["normal"]), r["offset"]),
            r.get("source", "unknown"),
            r.get("chamfer"),
            r.get("confidence"),
        )
        for r in rows
    ]
