"""Feature-invariance experiments: discrepancy measure, pairing controls and
the viewpoint/rotation/density ablation grid."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloudError
from .features import (
    FeatureCloud,
    FeatureMap,
    backproject,
    canonical_orbit_points,
    interpolate_features,
    smooth_feature_field,
)
from .geometry import NormalizedMesh, Plane, reflect_point, sample_surface
from .render import (
    REGULAR_LEVEL_COUNTS,
    DEFAULT_RADIUS_FACTOR,
    FragmentBuffer,
    fibonacci_viewpoints,
    regular_viewpoints,
    render_view,
)

__all__ = [
    "InvarianceConfig",
    "InvarianceResult",
    "discrepancy",
    "random_pairing_discrepancy",
    "SyntheticExtractor",
    "run_invariance_object",
    "ablation_grid",
    "grid_to_csv",
    "ROTATION_SETS",
]

log = logging.getLogger(__name__)

# Rotation subsets, keyed the way the ablation names them. "t4" repeats the
# unrotated render four times as a control.
ROTATION_SETS = {
    "1": (0,),
    "2": (0, 180),
    "3": (0, 90, 270),
    "4": (0, 90, 180, 270),
    "t4": (0, 0, 0, 0),
}


@dataclass(frozen=True)
class InvarianceConfig:
    """One cell of the invariance ablation grid.

    sampling: "raw" uses the vertex features directly; an integer n samples
    the surface and interpolates (feature-mesh sampling with n points).
    """

    scheme: str = "fibonacci"  # or "regular"
    n_views: int = 14
    rotations: str = "1"  # key into ROTATION_SETS
    sampling: str | int = "raw"
    pairing: str = "symmetric"  # or "random"

    def __post_init__(self):
        if self.scheme not in ("fibonacci", "regular"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "regular" and self.n_views not in REGULAR_LEVEL_COUNTS:
            raise ValueError(
                f"regular scheme supports view counts {REGULAR_LEVEL_COUNTS}"
            )
        if str(self.rotations) not in ROTATION_SETS:
            raise ValueError(f"rotations must be one of {sorted(ROTATION_SETS)}")
        if self.pairing not in ("symmetric", "random"):
            raise ValueError(f"unknown pairing {self.pairing!r}")
        if self.n_views < 1:
            raise ValueError("n_views must be >= 1")

    @property
    def config_id(self) -> str:
        samp = "rm" if self.sampling == "raw" else f"fm{self.sampling}"
        tag = "fi" if self.scheme == "fibonacci" else "re"
        pair = "" if self.pairing == "symmetric" else "-rand"
        return f"{samp}-{self.rotations}r-{tag}-{self.n_views}{pair}"


@dataclass(frozen=True)
class InvarianceResult:
    config: InvarianceConfig
    per_object: dict[str, float]
    e_mean: float
    e_std: float

    @property
    def n_objects(self) -> int:
        return len(self.per_object)


def discrepancy(cloud: FeatureCloud, gt_plane: Plane) -> float:
    """Mean L1 feature distance between each point and the cloud point
    geometrically nearest to its reflection across the ground-truth plane."""
    if len(cloud) == 0:
        raise EmptyCloudError("discrepancy needs a non-empty cloud")
    mirrored = reflect_point(cloud.points, gt_plane)
    _, idx = cKDTree(cloud.points).query(mirrored, k=1)
    return float(np.abs(cloud.features - cloud.features[idx]).sum(axis=1).mean())


def random_pairing_discrepancy(cloud: FeatureCloud, seed: int) -> float:
    """Discrepancy control with uniformly random partners (never self)."""
    n = len(cloud)
    if n < 2:
        raise EmptyCloudError("random pairing needs at least 2 points")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n - 1, size=n)
    idx += idx >= np.arange(n)  # shift past the diagonal
    return float(np.abs(cloud.features - cloud.features[idx]).sum(axis=1).mean())


@dataclass
class SyntheticExtractor:
    """Stands in for the vision model during desk-scale experiments.

    Each patch receives the mean of a smooth reflection-invariant field,
    evaluated at the world points visible in its pixels, plus deterministic
    per-render noise. Repeating the identical render reproduces identical
    maps bit for bit (the T4 control relies on this).
    """

    planes: list[Plane]
    d: int = 16
    noise: float = 0.02
    seed: int = 0
    freq_scale: float = 0.5
    patch_px: int = 14

    def __call__(self, nmesh: NormalizedMesh, frag: FragmentBuffer) -> FeatureMap:
        if frag.width % self.patch_px:
            raise ValueError("image size must be a multiple of the patch size")
        P = frag.width // self.patch_px
        grid = np.zeros((P, P, self.d), dtype=np.float64)
        ys, xs = np.nonzero(frag.coverage_mask())
        if len(ys):
            faces = nmesh.faces[frag.face_id[ys, xs]]
            tri = nmesh.vertices[faces]
            world = np.einsum("ij,ijk->ik", frag.bary[ys, xs].astype(np.float64), tri)
            reps = canonical_orbit_points(world, self.planes)
            feats = smooth_feature_field(reps, self.d, self.seed, self.freq_scale / nmesh.diagonal)
            patch_flat = (ys // self.patch_px) * P + (xs // self.patch_px)
            acc = np.zeros((P * P, self.d))
            cnt = np.zeros(P * P)
            np.add.at(acc, patch_flat, feats)
            np.add.at(cnt, patch_flat, 1.0)
            covered = cnt > 0
            acc[covered] /= cnt[covered, None]
            grid = acc.reshape(P, P, self.d)
        if self.noise > 0:
            rng = np.random.default_rng((self.seed, frag.view_id, frag.rotation_deg))
            grid = grid + rng.uniform(-self.noise, self.noise, size=grid.shape)
        return FeatureMap(frag.view_id, frag.rotation_deg, grid.astype(np.float32))


def run_invariance_object(
    nmesh: NormalizedMesh,
    gt_plane: Plane,
    cfg: InvarianceConfig,
    extractor: SyntheticExtractor,
    image_size: int = 126,
    seed: int = 0,
) -> float:
    """Render -> extract -> backproject -> (sample) -> discrepancy for one object."""
    radius = DEFAULT_RADIUS_FACTOR * nmesh.diagonal
    if cfg.scheme == "fibonacci":
        views = fibonacci_viewpoints(cfg.n_views, radius)
    else:
        level = REGULAR_LEVEL_COUNTS.index(cfg.n_views) + 1
        views = regular_viewpoints(level, radius)

    rotations = ROTATION_SETS[str(cfg.rotations)]
    fragments: list[FragmentBuffer] = []
    maps: list[FeatureMap] = []
    for vp in views:
        if str(cfg.rotations) == "t4":
            _, frag = render_view(nmesh, vp, image_size)
            fmap = extractor(nmesh, frag)
            fragments.extend([frag] * 4)
            maps.extend([fmap] * 4)
        else:
            for rot in rotations:
                _, frag = render_view(nmesh, vp.with_rotation(rot), image_size)
                fragments.append(frag)
                maps.append(extractor(nmesh, frag))

    vf = backproject(nmesh, fragments, maps)
    if cfg.sampling == "raw":
        covered = vf.covered_mask()
        cloud = FeatureCloud(nmesh.vertices[covered], vf.features[covered])
    else:
        samples = sample_surface(nmesh, int(cfg.sampling), seed)
        cloud = interpolate_features(vf, samples, nmesh.faces)
    if cfg.pairing == "symmetric":
        return discrepancy(cloud, gt_plane)
    return random_pairing_discrepancy(cloud, seed + 1)


def ablation_grid(
    corpus: list[tuple[str, NormalizedMesh, Plane]],
    configs: list[InvarianceConfig],
    d: int = 16,
    noise: float = 0.02,
    seed: int = 0,
    image_size: int = 126,
    gt_planes_by_name: dict[str, list[Plane]] | None = None,
) -> list[InvarianceResult]:
    """Run every config over every object; failed objects are logged and
    excluded from that cell's mean."""
    results = []
    for cfg in configs:
        per_object: dict[str, float] = {}
        for name, nmesh, gt_plane in corpus:
            planes = (gt_planes_by_name or {}).get(name, [gt_plane])
            extractor = SyntheticExtractor(planes=planes, d=d, noise=noise, seed=seed)
            try:
                per_object[name] = run_invariance_object(
                    nmesh, gt_plane, cfg, extractor, image_size=image_size, seed=seed
                )
            except Exception:
                log.exception("invariance run failed for %s / %s", name, cfg.config_id)
        values = np.array(list(per_object.values()))
        results.append(
            InvarianceResult(
                cfg,
                per_object,
                float(values.mean()) if len(values) else float("nan"),
                float(values.std()) if len(values) else float("nan"),
            )
        )
    return results


def grid_to_csv(results: list[InvarianceResult]) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(
        ["config_id", "scheme", "n_views", "rotations", "sampling", "pairing", "E_mean", "E_std", "n_objects"]
    )
    for r in results:
        writer.writerow(
            [
                r.config.config_id,
                r.config.scheme,
                r.config.n_views,
                r.config.rotations,
                r.config.sampling,
                r.config.pairing,
                f"{r.e_mean:.9g}",
                f"{r.e_std:.9g}",
                r.n_objects,
            ]
        )
    return out.getvalue()
