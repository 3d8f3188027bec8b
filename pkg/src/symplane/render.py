"""Viewpoint generation, pinhole camera model and a software rasterizer.

The rasterizer produces a flat-shaded grayscale image plus a per-pixel
fragment buffer (face id, perspective-correct barycentrics, view depth)
that downstream feature backprojection consumes.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import FormatError
from .geometry import NormalizedMesh

__all__ = [
    "Viewpoint",
    "Camera",
    "FragmentBuffer",
    "fibonacci_viewpoints",
    "regular_viewpoints",
    "rasterize",
    "rotate_raster",
    "camera_for_viewpoint",
    "render_view",
    "save_image",
    "write_fragments",
    "read_fragments",
    "REGULAR_LEVEL_COUNTS",
    "DEFAULT_FOV_DEG",
    "DEFAULT_RADIUS_FACTOR",
    "frag_filename",
]

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
REGULAR_LEVEL_COUNTS = (6, 14, 26, 42, 62, 86, 114)

# Camera defaults: object fills most of the frame from every direction and
# the image side is a multiple of the 14 px ViT patch so patch grids align
# with pixels exactly (518 = 37 * 14).
DEFAULT_FOV_DEG = 40.0
DEFAULT_RADIUS_FACTOR = 2.2
DEFAULT_IMAGE_SIZE = 518

ROTATIONS_DEG = (0, 90, 180, 270)


@dataclass(frozen=True)
class Viewpoint:
    """Camera position on a sphere around the origin plus in-plane roll."""

    position: np.ndarray
    up_hint: np.ndarray
    rotation_deg: int = 0
    view_id: int = 0

    def __post_init__(self):
        if self.rotation_deg not in ROTATIONS_DEG:
            raise ValueError("rotation_deg must be one of 0/90/180/270")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "up_hint", np.asarray(self.up_hint, dtype=np.float64))

    def with_rotation(self, deg: int) -> "Viewpoint":
        return Viewpoint(self.position, self.up_hint, deg, self.view_id)


def _up_hint_for(direction: np.ndarray) -> np.ndarray:
    # Global +y up, falling back to +x when looking straight along +/-y.
    if abs(direction[1]) > math.cos(math.radians(1.0)):
        return np.array([1.0, 0.0, 0.0])
    return np.array([0.0, 1.0, 0.0])


def fibonacci_viewpoints(n: int, radius: float) -> list[Viewpoint]:
    """n near-uniform viewpoints on a sphere via the Fibonacci lattice."""
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    theta = GOLDEN_ANGLE * i
    pts = np.stack([rho * np.cos(theta), rho * np.sin(theta), z], axis=1)
    return [
        Viewpoint(radius * p, _up_hint_for(p), 0, view_id=k) for k, p in enumerate(pts)
    ]


def regular_viewpoints(level: int, radius: float = 1.0) -> list[Viewpoint]:
    """Latitude/longitude partition of the sphere: 2 poles plus `level` rings
    of 2*level + 2 points each, giving 6/14/26/42/62/86/114 points for
    levels 1..7. Level 1 is the octahedron vertex set.
    """
    if not 1 <= level <= 7:
        raise ValueError("level must be in 1..7")
    dirs = [np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])]
    per_ring = 2 * level + 2
    for ring in range(1, level + 1):
        polar = math.pi * ring / (level + 1)
        sp, cp = math.sin(polar), math.cos(polar)
        for j in range(per_ring):
            az = 2.0 * math.pi * j / per_ring
            dirs.append(np.array([sp * math.cos(az), sp * math.sin(az), cp]))
    return [
        Viewpoint(radius * d, _up_hint_for(d), 0, view_id=k) for k, d in enumerate(dirs)
    ]


@dataclass(frozen=True)
class Camera:
    """Look-at pinhole camera with square image and vertical FOV in degrees."""

    position: np.ndarray
    target: np.ndarray
    up: np.ndarray
    fov_deg: float
    width: int
    height: int

    def __post_init__(self):
        if self.width != self.height:
            raise ValueError("square images required")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "target", np.asarray(self.target, dtype=np.float64))
        object.__setattr__(self, "up", np.asarray(self.up, dtype=np.float64))

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Right, up, forward unit vectors of the camera frame."""
        fwd = self.target - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise ValueError("up vector parallel to view direction")
        right = right / nr
        up = np.cross(right, fwd)
        return right, up, fwd

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World -> camera coordinates (x right, y up, z forward depth)."""
        right, up, fwd = self.axes()
        rel = np.asarray(points, dtype=np.float64) - self.position
        return rel @ np.stack([right, up, fwd], axis=1)

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points to pixel coordinates; returns (pixels, depth)."""
        cam = self.to_camera(points)
        f = 1.0 / math.tan(math.radians(self.fov_deg) / 2.0)
        z = cam[:, 2]
        x_ndc = f * cam[:, 0] / z
        y_ndc = f * cam[:, 1] / z
        px = (x_ndc + 1.0) * self.width / 2.0
        py = (1.0 - y_ndc) * self.height / 2.0
        return np.stack([px, py], axis=1), z


def camera_for_viewpoint(
    vp: Viewpoint,
    image_size: int = DEFAULT_IMAGE_SIZE,
    fov_deg: float = DEFAULT_FOV_DEG,
) -> Camera:
    return Camera(vp.position, np.zeros(3), vp.up_hint, fov_deg, image_size, image_size)


@dataclass
class FragmentBuffer:
    """Per-pixel winning fragment: face id (-1 = empty), barycentrics, depth."""

    face_id: np.ndarray  # (H, W) int32
    bary: np.ndarray  # (H, W, 3) float32
    depth: np.ndarray  # (H, W) float32, +inf where empty
    view_id: int = 0
    rotation_deg: int = 0

    @property
    def width(self) -> int:
        return self.face_id.shape[1]

    @property
    def height(self) -> int:
        return self.face_id.shape[0]

    def coverage_mask(self) -> np.ndarray:
        return self.face_id >= 0

    @classmethod
    def empty(cls, width: int, height: int, view_id: int = 0, rotation_deg: int = 0):
        return cls(
            np.full((height, width), -1, dtype=np.int32),
            np.zeros((height, width, 3), dtype=np.float32),
            np.full((height, width), np.inf, dtype=np.float32),
            view_id,
            rotation_deg,
        )


BACKGROUND = 1.0
ALBEDO = 0.7


def rasterize(nmesh: NormalizedMesh, camera: Camera) -> tuple[np.ndarray, FragmentBuffer]:
    """Z-buffered rasterization with perspective-correct barycentrics.

    Shading is flat per face with a headlight (light co-located with the
    camera) on a uniform gray material; faces are rendered double-sided.
    Returns (grayscale image in [0, 1], fragment buffer).
    """
    W, H = camera.width, camera.height
    frag = FragmentBuffer.empty(W, H)
    image = np.full((H, W), BACKGROUND, dtype=np.float32)

    verts = nmesh.vertices
    faces = nmesh.faces
    pix, depth = camera.project(verts)
    near = 1e-9

    # Per-face headlight Lambertian term, using the direction from the face
    # centroid to the camera; abs() renders back faces like front faces.
    tri_world = verts[faces]
    fnorm = np.cross(tri_world[:, 1] - tri_world[:, 0], tri_world[:, 2] - tri_world[:, 0])
    fnorm_len = np.linalg.norm(fnorm, axis=1)
    centroids = tri_world.mean(axis=1)
    to_cam = camera.position - centroids
    to_cam_len = np.linalg.norm(to_cam, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        lambert = np.abs(np.einsum("ij,ij->i", fnorm, to_cam)) / (fnorm_len * to_cam_len)
    shade = (ALBEDO * np.nan_to_num(lambert)).astype(np.float32)

    for fi in range(len(faces)):
        ids = faces[fi]
        z = depth[ids]
        if (z <= near).any():
            continue  # triangle not fully in front of the camera
        p = pix[ids]
        x0 = max(int(math.floor(p[:, 0].min() - 0.5)), 0)
        x1 = min(int(math.ceil(p[:, 0].max() + 0.5)), W - 1)
        y0 = max(int(math.floor(p[:, 1].min() - 0.5)), 0)
        y1 = min(int(math.ceil(p[:, 1].max() + 0.5)), H - 1)
        if x1 < x0 or y1 < y0:
            continue
        area = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (
            p[2, 0] - p[0, 0]
        )
        if area == 0.0:
            continue
        xs = np.arange(x0, x1 + 1) + 0.5
        ys = np.arange(y0, y1 + 1) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        w0 = (p[2, 0] - p[1, 0]) * (gy - p[1, 1]) - (p[2, 1] - p[1, 1]) * (gx - p[1, 0])
        w1 = (p[0, 0] - p[2, 0]) * (gy - p[2, 1]) - (p[0, 1] - p[2, 1]) * (gx - p[2, 0])
        w2 = (p[1, 0] - p[0, 0]) * (gy - p[0, 1]) - (p[1, 1] - p[0, 1]) * (gx - p[0, 0])
        lam = np.stack([w0, w1, w2], axis=-1) / area
        inside = (lam >= 0.0).all(axis=-1)
        if not inside.any():
            continue
        # Perspective-correct interpolation: weight screen barycentrics by 1/z.
        lam_over_z = lam / z
        inv_z = lam_over_z.sum(axis=-1)
        zi = 1.0 / inv_z
        bary = lam_over_z * zi[..., None]

        sub_depth = frag.depth[y0 : y1 + 1, x0 : x1 + 1]
        win = inside & (zi < sub_depth)
        if not win.any():
            continue
        sub_depth[win] = zi[win].astype(np.float32)
        frag.face_id[y0 : y1 + 1, x0 : x1 + 1][win] = fi
        frag.bary[y0 : y1 + 1, x0 : x1 + 1][win] = bary[win].astype(np.float32)
        image[y0 : y1 + 1, x0 : x1 + 1][win] = shade[fi]

    return image, frag


def rotate_raster(array: np.ndarray, rotation_deg: int) -> np.ndarray:
    """Rotate an image or per-pixel grid in-plane by a multiple of 90 degrees.

    Positive angles rotate the image content counterclockwise, matching an
    equal clockwise roll of the camera about its view axis.
    """
    if rotation_deg % 90 != 0:
        raise ValueError("rotation must be a multiple of 90 degrees")
    return np.ascontiguousarray(np.rot90(array, k=(rotation_deg // 90) % 4))


def render_view(
    nmesh: NormalizedMesh,
    vp: Viewpoint,
    image_size: int = DEFAULT_IMAGE_SIZE,
    fov_deg: float = DEFAULT_FOV_DEG,
) -> tuple[np.ndarray, FragmentBuffer]:
    """Rasterize one viewpoint and apply its in-plane rotation to both grids."""
    camera = camera_for_viewpoint(vp, image_size, fov_deg)
    image, frag = rasterize(nmesh, camera)
    if vp.rotation_deg:
        image = rotate_raster(image, vp.rotation_deg)
        frag = FragmentBuffer(
            rotate_raster(frag.face_id, vp.rotation_deg),
            rotate_raster(frag.bary, vp.rotation_deg),
            rotate_raster(frag.depth, vp.rotation_deg),
        )
    frag.view_id = vp.view_id
    frag.rotation_deg = vp.rotation_deg
    return image, frag


def image_filename(view_id: int, rotation_deg: int) -> str:
    return f"view_{view_id:03}_rot{rotation_deg:03}.png"


def frag_filename(view_id: int, rotation_deg: int) -> str:
    return f"view_{view_id:03}_rot{rotation_deg:03}.frag"


def save_image(image: np.ndarray, path) -> None:
    """Write a [0, 1] grayscale array as 8-bit PNG."""
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(os.fspath(path))


_FRAG_MAGIC = b"FRAG"


def write_fragments(frag: FragmentBuffer, path) -> None:
    """Serialize a fragment buffer: magic, u32 W/H, then per-pixel
    {i32 face_id, 3x f32 bary, f32 depth}, little-endian row-major."""
    H, W = frag.face_id.shape
    buf = np.empty((H, W), dtype=[("face", "<i4"), ("bary", "<f4", 3), ("depth", "<f4")])
    buf["face"] = frag.face_id
    buf["bary"] = frag.bary
    buf["depth"] = np.where(np.isfinite(frag.depth), frag.depth, 0.0)
    with open(path, "wb") as fh:
        fh.write(_FRAG_MAGIC)
        fh.write(struct.pack("<II", W, H))
        fh.write(buf.tobytes())


def read_fragments(path, view_id: int = 0, rotation_deg: int = 0) -> FragmentBuffer:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _FRAG_MAGIC:
            raise FormatError(f"{path}: bad fragment magic {magic!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise FormatError(f"{path}: truncated fragment header")
        W, H = struct.unpack("<II", header)
        payload = fh.read()
    dtype = np.dtype([("face", "<i4"), ("bary", "<f4", 3), ("depth", "<f4")])
    expected = W * H * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    buf = np.frombuffer(payload, dtype=dtype).reshape(H, W)
    face = np.ascontiguousarray(buf["face"])
    depth = np.ascontiguousarray(buf["depth"]).astype(np.float32)
    depth[face < 0] = np.inf
    return FragmentBuffer(
        face, np.ascontiguousarray(buf["bary"]), depth, view_id, rotation_deg
    )
