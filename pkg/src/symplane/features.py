"""Patch-feature maps, backprojection onto mesh vertices and interpolation.

The FMAP binary container is the contract with the external feature
extractor: magic "FMAP", u32 version=1, u32 view_id, u32 rotation_deg,
u32 P, u32 d, P*P*d little-endian f32 (patch row, patch col, channel),
trailing CRC32 of the payload.
"""

from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ChecksumError,
    DimensionMismatchError,
    FormatError,
    PairingError,
)
from .geometry import NormalizedMesh, Plane, SurfaceSamples, reflect_point
from .render import FragmentBuffer

__all__ = [
    "FeatureMap",
    "VertexFeatures",
    "FeatureCloud",
    "save_feature_map",
    "load_feature_map",
    "backproject",
    "interpolate_features",
    "synthetic_features",
    "canonical_orbit_points",
    "smooth_feature_field",
    "fmap_filename",
]

log = logging.getLogger(__name__)

_FMAP_MAGIC = b"FMAP"
_FMAP_VERSION = 1


@dataclass(frozen=True)
class FeatureMap:
    """P x P patch grid of d-dimensional features for one render."""

    view_id: int
    rotation_deg: int
    grid: np.ndarray  # (P, P, d) float32

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float32)
        if g.ndim != 3 or g.shape[0] != g.shape[1]:
            raise DimensionMismatchError("feature grid must be (P, P, d)")
        object.__setattr__(self, "grid", g)

    @property
    def patches(self) -> int:
        return self.grid.shape[0]

    @property
    def dim(self) -> int:
        return self.grid.shape[2]


def fmap_filename(view_id: int, rotation_deg: int) -> str:
    return f"view_{view_id:03}_rot{rotation_deg:03}.fmap"


def save_feature_map(fmap: FeatureMap, path) -> None:
    payload = np.ascontiguousarray(fmap.grid, dtype="<f4").tobytes()
    header = _FMAP_MAGIC + struct.pack(
        "<IIIII", _FMAP_VERSION, fmap.view_id, fmap.rotation_deg, fmap.patches, fmap.dim
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_feature_map(path) -> FeatureMap:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 28 or data[:4] != _FMAP_MAGIC:
        raise FormatError(f"{path}: not an FMAP file")
    version, view_id, rotation_deg, P, d = struct.unpack("<IIIII", data[4:24])
    if version != _FMAP_VERSION:
        raise FormatError(f"{path}: unsupported FMAP version {version}")
    n_bytes = P * P * d * 4
    if len(data) != 24 + n_bytes + 4:
        raise FormatError(f"{path}: payload size mismatch")
    payload = data[24 : 24 + n_bytes]
    (crc,) = struct.unpack("<I", data[24 + n_bytes :])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: CRC32 mismatch")
    grid = np.frombuffer(payload, dtype="<f4").reshape(P, P, d).copy()
    return FeatureMap(view_id, rotation_deg, grid)


@dataclass(frozen=True)
class VertexFeatures:
    """Per-vertex averaged feature vectors plus render-visibility counts.

    Vertices never seen by any render carry a zero vector and count 0.
    """

    features: np.ndarray  # (n_vertices, d)
    visibility: np.ndarray  # (n_vertices,) int

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def covered_mask(self) -> np.ndarray:
        return self.visibility > 0


@dataclass(frozen=True)
class FeatureCloud:
    """Sampled surface points with interpolated feature vectors."""

    points: np.ndarray  # (n, 3)
    features: np.ndarray  # (n, d)
    provenance: SurfaceSamples | None = None
    n_dropped: int = 0

    def __post_init__(self):
        if len(self.points) != len(self.features):
            raise DimensionMismatchError("points/features row count mismatch")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _pairwise_sum(arrays: list[np.ndarray]) -> np.ndarray:
    """Adjacent-pair reduction. Power-of-two groups of adjacent duplicates
    collapse to exact scalings before the schedule continues, so repeating
    every render 2^k times scales all partial sums exactly — the T4 rotation
    control relies on the resulting means being bit-identical. (A half-split
    schedule would let a duplicate group straddle the split and lose this.)"""
    arrs = list(arrays)
    while len(arrs) > 1:
        nxt = [arrs[i] + arrs[i + 1] for i in range(0, len(arrs) - 1, 2)]
        if len(arrs) % 2:
            nxt.append(arrs[-1])
        arrs = nxt
    return arrs[0]


def backproject(
    nmesh: NormalizedMesh,
    fragments: list[FragmentBuffer],
    maps: list[FeatureMap],
) -> VertexFeatures:
    """Assign per-render patch features to visible vertices, then average.

    Every vertex of a face that wins at least one pixel in a render counts
    as visible there. Contributions from multiple pixels within one render
    are averaged first; the per-render means are then averaged across all
    renders that saw the vertex.
    """
    if len(fragments) != len(maps):
        raise PairingError(f"{len(fragments)} fragment buffers vs {len(maps)} maps")
    if all(
        (f.view_id, f.rotation_deg) == (m.view_id, m.rotation_deg)
        for f, m in zip(fragments, maps)
    ):
        # Positionally aligned; duplicates allowed (T4 control repeats a render).
        ordered = list(maps)
    else:
        by_key = {(m.view_id, m.rotation_deg): m for m in maps}
        if len(by_key) != len(maps):
            raise PairingError("duplicate (view_id, rotation_deg) among feature maps")
        ordered = []
        for frag in fragments:
            key = (frag.view_id, frag.rotation_deg)
            if key not in by_key:
                raise PairingError(f"no feature map for view {key[0]} rotation {key[1]}")
            ordered.append(by_key.pop(key))

    dims = {m.dim for m in ordered}
    if len(dims) != 1:
        raise DimensionMismatchError(f"inconsistent feature dimensions {sorted(dims)}")
    d = dims.pop()
    nv = nmesh.mesh.n_vertices
    faces = nmesh.mesh.faces

    per_render_means: list[np.ndarray] = []
    per_render_seen: list[np.ndarray] = []
    for frag, fmap in zip(fragments, ordered):
        if frag.width % fmap.patches != 0:
            raise DimensionMismatchError(
                f"image width {frag.width} not a multiple of patch grid {fmap.patches}"
            )
        patch_px = frag.width // fmap.patches
        ys, xs = np.nonzero(frag.coverage_mask())
        acc = np.zeros((nv, d), dtype=np.float64)
        cnt = np.zeros(nv, dtype=np.int64)
        if len(ys):
            feats = fmap.grid[ys // patch_px, xs // patch_px].astype(np.float64)
            pix_faces = frag.face_id[ys, xs]
            for corner in range(3):
                vidx = faces[pix_faces, corner]
                np.add.at(acc, vidx, feats)
                np.add.at(cnt, vidx, 1)
        seen = cnt > 0
        acc[seen] /= cnt[seen, None]
        per_render_means.append(acc)
        per_render_seen.append(seen)

    seen_stack = [s.astype(np.float64) for s in per_render_seen]
    total = _pairwise_sum(per_render_means)
    counts = _pairwise_sum(seen_stack)
    visibility = counts.astype(np.int64)
    out = np.zeros((nv, d), dtype=np.float64)
    covered = visibility > 0
    out[covered] = total[covered] / counts[covered, None]
    return VertexFeatures(out, visibility)


def interpolate_features(vf: VertexFeatures, samples: SurfaceSamples, faces: np.ndarray) -> FeatureCloud:
    """Barycentric interpolation of vertex features at surface samples.

    Samples on faces with any uncovered vertex are dropped (conservative
    policy: never invent features); the drop count is recorded and logged.
    """
    face_verts = faces[samples.face_ids]  # (n, 3)
    covered = vf.covered_mask()
    ok = covered[face_verts].all(axis=1)
    n_dropped = int((~ok).sum())
    if n_dropped:
        log.warning("dropping %d samples on faces with uncovered vertices", n_dropped)
    kept = samples.subset(ok)
    tri_feats = vf.features[faces[kept.face_ids]]  # (n, 3, d)
    feats = np.einsum("ij,ijk->ik", kept.bary, tri_feats)
    return FeatureCloud(kept.points, feats, kept, n_dropped)


def canonical_orbit_points(points: np.ndarray, planes: list[Plane], max_iter: int = 64) -> np.ndarray:
    """Map each point to the lexicographically smallest member of its orbit
    under the reflection group generated by `planes`."""
    reps = np.asarray(points, dtype=np.float64).copy()
    if not planes:
        return reps
    for _ in range(max_iter):
        changed = False
        for plane in planes:
            mirrored = reflect_point(reps, plane)
            # lexicographic comparison per row
            take = np.zeros(len(reps), dtype=bool)
            undecided = np.ones(len(reps), dtype=bool)
            for axis in range(3):
                lt = undecided & (mirrored[:, axis] < reps[:, axis])
                gt = undecided & (mirrored[:, axis] > reps[:, axis])
                take |= lt
                undecided &= ~(lt | gt)
            if take.any():
                reps[take] = mirrored[take]
                changed = True
        if not changed:
            break
    return reps


def smooth_feature_field(
    points: np.ndarray, d: int, seed: int, freq_scale: float = 1.0
) -> np.ndarray:
    """Deterministic smooth injective-in-practice feature field on 3D points."""
    rng = np.random.default_rng(seed)
    omega = rng.normal(size=(3, d)) * freq_scale
    phase = rng.uniform(0.0, 2.0 * np.pi, size=d)
    return np.sin(np.asarray(points, dtype=np.float64) @ omega + phase)


def synthetic_features(
    nmesh: NormalizedMesh,
    planes: list[Plane],
    d: int,
    noise: float,
    seed: int,
    freq_scale: float | None = None,
) -> VertexFeatures:
    """Deterministic per-vertex features exactly invariant (before noise)
    under the reflection group generated by `planes`.

    Each vertex gets a smooth function of its orbit-canonical representative
    plus i.i.d. uniform noise in [-noise, noise] per channel. `freq_scale`
    controls how fast the field varies; default is a few cycles across the
    object diagonal.
    """
    if d < 3:
        raise ValueError("feature dimension must be >= 3")
    if freq_scale is None:
        freq_scale = 8.0 / nmesh.diagonal
    reps = canonical_orbit_points(nmesh.vertices, planes)
    feats = smooth_feature_field(reps, d, seed, freq_scale)
    if noise > 0.0:
        rng = np.random.default_rng(seed + 1)
        feats = feats + rng.uniform(-noise, noise, size=feats.shape)
    visibility = np.ones(len(feats), dtype=np.int64)
    return VertexFeatures(feats, visibility)
