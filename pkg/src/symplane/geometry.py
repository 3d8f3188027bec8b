"""Triangle meshes, normalization, reflection planes and surface sampling."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMeshError, EmptyMeshError, ParseError

__all__ = [
    "TriangleMesh",
    "NormalizedMesh",
    "Plane",
    "SurfaceSample",
    "SurfaceSamples",
    "load_mesh",
    "normalize",
    "reflect_point",
    "sample_surface",
    "face_areas",
]


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh in model units.

    vertices: (n, 3) float array, faces: (m, 3) int array. Optional
    per-vertex normals are carried through untouched.
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if not np.isfinite(v).all():
            raise ParseError("mesh contains NaN/Inf coordinates")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise ParseError("face index out of range")
            if ((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])).any():
                raise ParseError("face with repeated vertex index")
        v.setflags(write=False)
        f.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """Corner positions per face, shape (m, 3, 3)."""
        return self.vertices[self.faces]


@dataclass(frozen=True)
class NormalizedMesh:
    """Mesh translated so its AABB center sits at the origin.

    `diagonal` is the AABB diagonal length O_d; every geometric threshold in
    the pipeline is expressed relative to it. `translation` records the
    vector that was added to the original vertices.
    """

    mesh: TriangleMesh
    diagonal: float
    translation: np.ndarray

    @property
    def vertices(self) -> np.ndarray:
        return self.mesh.vertices

    @property
    def faces(self) -> np.ndarray:
        return self.mesh.faces


@dataclass(frozen=True)
class Plane:
    """Plane {x : normal . x + offset = 0} with unit normal.

    (normal, offset) and (-normal, -offset) denote the same plane; the
    canonical form makes the first nonzero normal component positive.
    """

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(n))
        if norm == 0.0 or not np.isfinite(norm):
            raise ValueError("plane normal must be nonzero and finite")
        n = n / norm
        off = float(self.offset) / norm
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", off)
        self.normal.setflags(write=False)

    @classmethod
    def from_point_normal(cls, point, normal) -> "Plane":
        n = np.asarray(normal, dtype=np.float64)
        p = np.asarray(point, dtype=np.float64)
        return cls(n, -float(np.dot(n, p)) / float(np.linalg.norm(n)))

    def canonical(self) -> "Plane":
        """Flip sign so the first nonzero normal component is positive."""
        for c in self.normal:
            if c != 0.0:
                if c < 0.0:
                    return Plane(-self.normal, -self.offset)
                break
        return self

    def point_on_plane(self) -> np.ndarray:
        return -self.offset * self.normal

    def signed_distance(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.normal + self.offset

    def distance_to_origin(self) -> float:
        return abs(self.offset)

    def translated(self, delta) -> "Plane":
        """Plane expressed in coordinates x' = x + delta."""
        d = np.asarray(delta, dtype=np.float64)
        return Plane(self.normal, self.offset - float(self.normal @ d))

    def rotated(self, rotation) -> "Plane":
        """Plane after rotating space by the 3x3 matrix `rotation` (about the origin)."""
        R = np.asarray(rotation, dtype=np.float64)
        return Plane(R @ self.normal, self.offset)

    def as_4vector(self, scale: float = 1.0) -> np.ndarray:
        """(a, b, c, d) with unit normal; offset divided by `scale`."""
        return np.concatenate([self.normal, [self.offset / scale]])


@dataclass(frozen=True)
class SurfaceSample:
    point: np.ndarray
    face_id: int
    bary: np.ndarray


@dataclass(frozen=True)
class SurfaceSamples:
    """Batch of surface samples stored as arrays.

    Iterating or indexing yields individual SurfaceSample records.
    """

    points: np.ndarray
    face_ids: np.ndarray
    bary: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, i) -> SurfaceSample:
        return SurfaceSample(self.points[i], int(self.face_ids[i]), self.bary[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, mask) -> "SurfaceSamples":
        return SurfaceSamples(self.points[mask], self.face_ids[mask], self.bary[mask])


def _fan_triangulate(indices: list[int]) -> list[tuple[int, int, int]]:
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def _parse_obj(text: str) -> TriangleMesh:
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ParseError(f"OBJ line {lineno}: vertex needs 3 coordinates")
            try:
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError as exc:
                raise ParseError(f"OBJ line {lineno}: bad vertex coordinate") from exc
        elif tag == "f":
            if len(parts) < 4:
                raise ParseError(f"OBJ line {lineno}: face needs >= 3 vertices")
            idx = []
            for tok in parts[1:]:
                ref = tok.split("/")[0]
                try:
                    i = int(ref)
                except ValueError as exc:
                    raise ParseError(f"OBJ line {lineno}: bad face index {tok!r}") from exc
                if i == 0:
                    raise ParseError(f"OBJ line {lineno}: OBJ indices are 1-based")
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            faces.extend(_fan_triangulate(idx))
        # vt/vn/usemtl/... intentionally ignored
    if not faces:
        raise EmptyMeshError("OBJ file has no faces")
    return TriangleMesh(np.array(vertices, dtype=np.float64), np.array(faces, dtype=np.int64))


def _parse_off(text: str) -> TriangleMesh:
    tokens: list[str] = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens:
        raise ParseError("empty OFF file")
    pos = 0
    header = tokens[0]
    if header.upper().endswith("OFF") and not header[0].isdigit() and header[0] not in "-.":
        pos = 1
    try:
        nv, nf = int(tokens[pos]), int(tokens[pos + 1])
        pos += 3  # skip edge count
        coords = [float(t) for t in tokens[pos : pos + 3 * nv]]
        if len(coords) != 3 * nv:
            raise ParseError("OFF file truncated in vertex block")
        pos += 3 * nv
        faces: list[tuple[int, int, int]] = []
        for _ in range(nf):
            cnt = int(tokens[pos])
            idx = [int(t) for t in tokens[pos + 1 : pos + 1 + cnt]]
            if len(idx) != cnt or cnt < 3:
                raise ParseError("OFF file truncated in face block")
            pos += 1 + cnt
            faces.extend(_fan_triangulate(idx))
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed OFF file: {exc}") from exc
    if not faces:
        raise EmptyMeshError("OFF file has no faces")
    vertices = np.array(coords, dtype=np.float64).reshape(nv, 3)
    return TriangleMesh(vertices, np.array(faces, dtype=np.int64))


def load_mesh(path, fmt: str | None = None) -> TriangleMesh:
    """Load an OBJ or OFF triangle mesh; non-triangular faces are fan-triangulated.

    `fmt` is "obj" or "off"; inferred from the file extension when omitted.
    """
    path = os.fspath(path)
    if fmt is None:
        fmt = os.path.splitext(path)[1].lstrip(".").lower()
    fmt = fmt.lower()
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        text = fh.read()
    if fmt == "obj":
        return _parse_obj(text)
    if fmt == "off":
        return _parse_off(text)
    raise ParseError(f"unknown mesh format {fmt!r}")


def save_obj(mesh: TriangleMesh, path) -> None:
    """Write a minimal OBJ file (v/f lines only)."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def normalize(mesh: TriangleMesh) -> NormalizedMesh:
    """Translate the mesh so its AABB center is the origin; record the diagonal."""
    if mesh.n_faces == 0:
        raise EmptyMeshError("cannot normalize an empty mesh")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    diagonal = float(np.linalg.norm(hi - lo))
    if diagonal == 0.0:
        raise DegenerateMeshError("mesh bounding box has zero diagonal")
    center = (lo + hi) / 2.0
    shifted = TriangleMesh(mesh.vertices - center, mesh.faces, mesh.normals)
    return NormalizedMesh(shifted, diagonal, -center)


def reflect_point(points, plane: Plane) -> np.ndarray:
    """Reflect point(s) across the plane: p' = p - 2 (n . p + offset) n."""
    pts = np.asarray(points, dtype=np.float64)
    d = pts @ plane.normal + plane.offset
    return pts - 2.0 * np.multiply.outer(d, plane.normal)


def face_areas(mesh: TriangleMesh) -> np.ndarray:
    tri = mesh.triangles()
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def sample_surface(nmesh: NormalizedMesh, n: int, seed: int) -> SurfaceSamples:
    """Draw n area-weighted uniform surface samples; deterministic per seed.

    Zero-area faces get zero selection probability.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    mesh = nmesh.mesh
    areas = face_areas(mesh)
    total = areas.sum()
    if total <= 0.0:
        raise DegenerateMeshError("total surface area is zero")
    rng = np.random.default_rng(seed)
    face_ids = rng.choice(mesh.n_faces, size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    tri = mesh.vertices[mesh.faces[face_ids]]
    points = np.einsum("ij,ijk->ik", bary, tri)
    return SurfaceSamples(points, face_ids.astype(np.int64), bary)
