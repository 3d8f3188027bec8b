"""Deterministic test shape generators with exact ground-truth planes.

Planar patches are triangulated with a seeded, mirror-asymmetric jitter of
the interior grid points: the surface stays exactly symmetric while the
vertex set does not, which mirrors how real meshes behave.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, replace

import numpy as np

from .geometry import NormalizedMesh, Plane, TriangleMesh, normalize
from .metrics import GroundTruth

__all__ = [
    "SynthShape",
    "make_shape",
    "random_rotation",
    "apply_rotation",
    "random_rotation_matrix",
    "SHAPE_KINDS",
]

SHAPE_KINDS = ("cube", "cuboid", "lshape", "ngon_prism", "blob")


@dataclass(frozen=True)
class SynthShape:
    name: str
    mesh: TriangleMesh
    gt: GroundTruth
    seed: int
    extended_gt: GroundTruth | None = None

    def normalized(self) -> NormalizedMesh:
        return normalize(self.mesh)


class _MeshBuilder:
    """Accumulates triangles; merges vertices that coincide exactly."""

    def __init__(self):
        self._verts: list[tuple[float, float, float]] = []
        self._index: dict[tuple[float, float, float], int] = {}
        self._faces: list[tuple[int, int, int]] = []

    def vertex(self, p) -> int:
        key = (float(p[0]), float(p[1]), float(p[2]))
        idx = self._index.get(key)
        if idx is None:
            idx = len(self._verts)
            self._index[key] = idx
            self._verts.append(key)
        return idx

    def triangle(self, a, b, c) -> None:
        ia, ib, ic = self.vertex(a), self.vertex(b), self.vertex(c)
        if ia != ib and ib != ic and ia != ic:
            self._faces.append((ia, ib, ic))

    def quad_patch(self, corners, t: int, rng: np.random.Generator, jitter: float = 0.35):
        """Planar quad subdivided into a t x t grid; interior grid points are
        jittered in parameter space so the triangulation has no mirror twin."""
        c = np.asarray(corners, dtype=np.float64)  # (4, 3): p00, p10, p11, p01
        u = np.tile(np.linspace(0.0, 1.0, t + 1), (t + 1, 1))
        v = u.T.copy()
        if t > 1 and jitter > 0:
            du = rng.uniform(-jitter, jitter, size=(t - 1, t - 1)) / t
            dv = rng.uniform(-jitter, jitter, size=(t - 1, t - 1)) / t
            u[1:-1, 1:-1] += du
            v[1:-1, 1:-1] += dv
        pts = (
            np.multiply.outer((1 - u) * (1 - v), c[0])
            + np.multiply.outer(u * (1 - v), c[1])
            + np.multiply.outer(u * v, c[2])
            + np.multiply.outer((1 - u) * v, c[3])
        )
        for i in range(t):
            for j in range(t):
                p00, p10 = pts[i, j], pts[i + 1, j]
                p11, p01 = pts[i + 1, j + 1], pts[i, j + 1]
                # alternate the diagonal pseudo-randomly for extra irregularity
                if rng.random() < 0.5:
                    self.triangle(p00, p10, p11)
                    self.triangle(p00, p11, p01)
                else:
                    self.triangle(p00, p10, p01)
                    self.triangle(p10, p11, p01)

    def build(self) -> TriangleMesh:
        return TriangleMesh(np.array(self._verts), np.array(self._faces))


def _recentre(mesh: TriangleMesh, planes: list[Plane]) -> tuple[TriangleMesh, list[Plane]]:
    """Shift so the AABB center is the origin; adjust plane offsets to match."""
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    center = (lo + hi) / 2.0
    shifted = TriangleMesh(mesh.vertices - center, mesh.faces)
    return shifted, [p.translated(-center) for p in planes]


def _box(extents, t: int, rng: np.random.Generator) -> TriangleMesh:
    ex, ey, ez = (e / 2.0 for e in extents)
    b = _MeshBuilder()
    quads = [
        [(-ex, -ey, -ez), (ex, -ey, -ez), (ex, ey, -ez), (-ex, ey, -ez)],  # z-
        [(-ex, -ey, ez), (ex, -ey, ez), (ex, ey, ez), (-ex, ey, ez)],  # z+
        [(-ex, -ey, -ez), (ex, -ey, -ez), (ex, -ey, ez), (-ex, -ey, ez)],  # y-
        [(-ex, ey, -ez), (ex, ey, -ez), (ex, ey, ez), (-ex, ey, ez)],  # y+
        [(-ex, -ey, -ez), (-ex, ey, -ez), (-ex, ey, ez), (-ex, -ey, ez)],  # x-
        [(ex, -ey, -ez), (ex, ey, -ez), (ex, ey, ez), (ex, -ey, ez)],  # x+
    ]
    for q in quads:
        b.quad_patch(q, t, rng)
    return b.build()


_AXIS_PLANES = [
    Plane(np.array([1.0, 0.0, 0.0]), 0.0),
    Plane(np.array([0.0, 1.0, 0.0]), 0.0),
    Plane(np.array([0.0, 0.0, 1.0]), 0.0),
]

_CUBE_DIAGONAL_PLANES = [
    Plane(np.array([1.0, 1.0, 0.0]), 0.0),
    Plane(np.array([1.0, -1.0, 0.0]), 0.0),
    Plane(np.array([1.0, 0.0, 1.0]), 0.0),
    Plane(np.array([1.0, 0.0, -1.0]), 0.0),
    Plane(np.array([0.0, 1.0, 1.0]), 0.0),
    Plane(np.array([0.0, 1.0, -1.0]), 0.0),
]


def _lshape(t: int, rng: np.random.Generator) -> tuple[TriangleMesh, list[Plane]]:
    # Equal-arm L profile, extruded with a top face slanted along (1, 1, 0):
    # the slant kills the horizontal mid-plane symmetry while preserving the
    # x = y mirror, leaving exactly one ground-truth plane.
    # The slant must be steep: the plane bisecting the flat bottom and the
    # slanted top maps them onto each other exactly, and only the side walls
    # resist it, with residual growing as the square of the slope.
    arm, w = 1.0, 0.4
    h0, k = 0.35, 0.4

    def top(x, y):
        return h0 + k * (x + y)

    profile = [(0, 0), (arm, 0), (arm, w), (w, w), (w, arm), (0, arm)]
    b = _MeshBuilder()
    # side walls
    for (x0, y0), (x1, y1) in zip(profile, profile[1:] + profile[:1]):
        b.quad_patch(
            [(x0, y0, 0.0), (x1, y1, 0.0), (x1, y1, top(x1, y1)), (x0, y0, top(x0, y0))],
            t,
            rng,
        )
    # bottom and top, decomposed into two rectangles each
    rects = [((0, 0), (arm, w)), ((0, w), (w, arm))]
    for (x0, y0), (x1, y1) in rects:
        b.quad_patch([(x0, y0, 0.0), (x1, y0, 0.0), (x1, y1, 0.0), (x0, y1, 0.0)], t, rng)
        b.quad_patch(
            [
                (x0, y0, top(x0, y0)),
                (x1, y0, top(x1, y0)),
                (x1, y1, top(x1, y1)),
                (x0, y1, top(x0, y1)),
            ],
            t,
            rng,
        )
    plane = Plane(np.array([1.0, -1.0, 0.0]), 0.0)  # x = y mirror
    return b.build(), [plane]


def _ngon_prism(n: int, t: int, rng: np.random.Generator) -> tuple[TriangleMesh, list[Plane]]:
    """Regular n-gon prism (even n so the AABB center is the symmetry center):
    n vertical mirror planes plus the horizontal mid-plane."""
    if n < 3:
        raise ValueError("ngon needs n >= 3")
    if n % 2:
        raise ValueError("use even n so symmetry planes pass through the AABB center")
    h = 0.8
    ring = [
        (math.cos(2 * math.pi * j / n), math.sin(2 * math.pi * j / n)) for j in range(n)
    ]
    b = _MeshBuilder()
    for (x0, y0), (x1, y1) in zip(ring, ring[1:] + ring[:1]):
        b.quad_patch(
            [(x0, y0, -h / 2), (x1, y1, -h / 2), (x1, y1, h / 2), (x0, y0, h / 2)], t, rng
        )
        # caps as fans with subdivided rim edges
        for z in (-h / 2, h / 2):
            for s in range(t):
                a0, a1 = s / t, (s + 1) / t
                p0 = (x0 + a0 * (x1 - x0), y0 + a0 * (y1 - y0), z)
                p1 = (x0 + a1 * (x1 - x0), y0 + a1 * (y1 - y0), z)
                b.triangle((0.0, 0.0, z), p0, p1)
    planes = [Plane(np.array([0.0, 0.0, 1.0]), 0.0)]
    for kk in range(n):
        az = math.pi * kk / n + math.pi / 2.0
        planes.append(Plane(np.array([math.cos(az), math.sin(az), 0.0]), 0.0))
    return b.build(), planes


def _octasphere(levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit sphere from `levels` octahedron subdivisions."""
    verts = np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
        dtype=np.float64,
    )
    faces = np.array(
        [[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]]
    )
    for _ in range(levels):
        edge_mid: dict[tuple[int, int], int] = {}
        new_faces = []
        verts_list = [v for v in verts]

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in edge_mid:
                m = verts_list[a] + verts_list[b]
                m = m / np.linalg.norm(m)
                edge_mid[key] = len(verts_list)
                verts_list.append(m)
            return edge_mid[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        verts = np.array(verts_list)
        faces = np.array(new_faces)
    return verts, faces


# Lump centers for the asymmetric blob. Chosen (offline, by adversarial
# optimization over reflection planes) so that for every near-central plane,
# at least one lump's reflection lands far from the whole surface: no plane
# simultaneously maps all lump centers onto each other or onto themselves,
# and every pair-swap plane leaves the remaining lumps strongly displaced.
_BLOB_CENTERS = np.array(
    [
        [0.63616005, 0.23922445, 0.09641169],
        [0.6333152, -0.23878996, -0.73040692],
        [0.27205381, -0.23922445, 0.73040692],
        [-0.63616005, 0.06896195, 0.58259735],
    ]
)


def _blob(seed: int, t: int) -> TriangleMesh:
    """Strongly asymmetric blob: four chiral lumps at fixed well-separated
    centers.  Each lump is an octahedron sphere warped by a seeded chiral
    radial field plus an anisotropic stretch, so no lump (and no lump pair)
    admits an approximate mirror."""
    rng = np.random.default_rng(seed)
    levels = max(2, int(round(math.log2(max(2, t)))) + 1)
    u, base_faces = _octasphere(levels)
    rho = 0.10 * np.linspace(0.75, 1.3, len(_BLOB_CENTERS))
    all_verts, all_faces, offset = [], [], 0
    for center, scale in zip(_BLOB_CENTERS, rho):
        A = rng.normal(size=(3, 3))
        r = (
            1.0
            + 0.35 * np.tanh(u @ A[0]) * np.sin(3.0 * u @ A[1])
            + 0.25 * np.cos(2.0 * u @ A[2] + 1.0)
        )
        stretch = np.diag([1.0, 0.75, 0.55])
        rot, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        all_verts.append((u * r[:, None]) @ stretch @ rot.T * scale + center)
        all_faces.append(base_faces + offset)
        offset += len(u)
    return TriangleMesh(np.vstack(all_verts), np.vstack(all_faces))


def make_shape(
    kind: str, seed: int = 0, tessellation: int = 8, ngon: int = 8
) -> SynthShape:
    """Deterministic test shape with exact ground-truth symmetry planes.

    Kinds: cube (3 axis planes; 6 diagonal planes as extended GT), cuboid
    (3 planes), lshape (1 plane), ngon_prism (ngon vertical + 1 horizontal),
    blob (none, asymmetric by construction).
    """
    if tessellation < 1:
        raise ValueError("tessellation must be >= 1")
    kind = kind.lower()
    rng = np.random.default_rng((zlib.crc32(kind.encode()) & 0xFFFF, seed))
    extended = None
    if kind == "cube":
        mesh = _box((1.0, 1.0, 1.0), tessellation, rng)
        planes = list(_AXIS_PLANES)
        extended = GroundTruth(list(_AXIS_PLANES) + list(_CUBE_DIAGONAL_PLANES))
    elif kind == "cuboid":
        mesh = _box((1.0, 1.35, 1.8), tessellation, rng)
        planes = list(_AXIS_PLANES)
    elif kind == "lshape":
        mesh, planes = _lshape(tessellation, rng)
    elif kind == "ngon_prism":
        mesh, planes = _ngon_prism(ngon, tessellation, rng)
    elif kind == "blob":
        mesh = _blob(seed, tessellation)
        planes = []
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    mesh, planes = _recentre(mesh, planes)
    if extended is not None:
        _, ext_planes = _recentre(mesh, list(extended.planes))
        extended = GroundTruth(ext_planes)
    return SynthShape(kind, mesh, GroundTruth(planes), seed, extended)


def random_rotation_matrix(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via the normalized-quaternion construction."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def apply_rotation(shape: SynthShape, rotation: np.ndarray) -> SynthShape:
    """Rotate mesh and ground-truth planes consistently (about the origin)."""
    R = np.asarray(rotation, dtype=np.float64)
    mesh = TriangleMesh(shape.mesh.vertices @ R.T, shape.mesh.faces)
    gt = GroundTruth([p.rotated(R) for p in shape.gt.planes])
    ext = (
        GroundTruth([p.rotated(R) for p in shape.extended_gt.planes])
        if shape.extended_gt is not None
        else None
    )
    return SynthShape(shape.name, mesh, gt, shape.seed, ext)


def random_rotation(shape: SynthShape, seed: int | None) -> SynthShape:
    """Apply a uniformly random rotation; seed=None leaves the shape unchanged."""
    if seed is None:
        return shape
    return apply_rotation(shape, random_rotation_matrix(np.random.default_rng(seed)))
