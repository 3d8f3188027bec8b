"""Acceptance suite: one test per top-level acceptance criterion.

Each test prints a single [PASS]/[FAIL] line (visible with `pytest -s`).
End-to-end detection rows run the full pipeline with synthetic
reflection-invariant features and a detection config tuned for the
acceptance corpus: a Chamfer threshold a factor ~2 above the sampling floor
of the chosen cloud size (rejects near-miss planes cheaply) and a dedup
window covering the whole central candidate band (collapses the
chamfer-degenerate tilt/offset variants of each true plane into one
representative). Library defaults are untouched.
"""

import dataclasses
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from conftest import random_mesh
from test_render import ray_cast

from symplane.features import interpolate_features, synthetic_features
from symplane.geometry import (
    Plane,
    TriangleMesh,
    normalize,
    reflect_point,
    sample_surface,
)
from symplane.metrics import GroundTruth, fscore, sde
from symplane.render import (
    DEFAULT_RADIUS_FACTOR,
    camera_for_viewpoint,
    fibonacci_viewpoints,
    rasterize,
)
from symplane.symmetry import DetectionConfig, chamfer_distance, detect
from symplane.synth import make_shape, random_rotation


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\n[FAIL] {name}")
        raise
    print(f"\n[PASS] {name}")


# ------------------------------------------------------------------ helpers

# Detection settings for the acceptance corpus (see module docstring).
# The 10 deg dedup cone is safe (distinct true planes sit >= 45 deg apart)
# and wide enough that any tilt variant escaping it costs more Chamfer
# than tau1 allows: on flat-faced solids the cost grows as tilt^2 and
# crosses 2.8e-4 near 6 deg.
E2E_POINTS = 7000
E2E_CFG = DetectionConfig(
    chamfer_tau1=2e-4, angle_tau2_deg=10.0, offset_dedup_frac=0.1
)
ROT_POINTS = 5000
ROT_CFG = DetectionConfig(
    chamfer_tau1=2.8e-4, angle_tau2_deg=10.0, offset_dedup_frac=0.1
)


def run_detection(kind, n_points, cfg, seed=0, noise=0.01, rotation_seed=None,
                  max_planes=None):
    """Full pipeline on a synthetic shape; returns (detected, gt_planes, nm, extended)."""
    shape = make_shape(kind, seed=0)
    if rotation_seed is not None:
        shape = random_rotation(shape, rotation_seed)
    if max_planes is not None:
        cfg = dataclasses.replace(cfg, max_planes=max_planes)
    nm = shape.normalized()
    gt = [p.translated(nm.translation) for p in shape.gt.planes]
    ext = (
        [p.translated(nm.translation) for p in shape.extended_gt.planes]
        if shape.extended_gt is not None
        else None
    )
    samples = sample_surface(nm, n_points, seed=seed)
    vf = synthetic_features(nm, gt, d=8, noise=noise, seed=seed)
    cloud = interpolate_features(vf, samples, nm.faces)
    return detect(cloud, nm.diagonal, cfg), gt, nm, ext


def best_match_angle_deg(detected, gt_plane):
    if not detected:
        return 90.0
    dots = [abs(float(c.plane.normal @ gt_plane.normal)) for c in detected]
    return float(np.degrees(np.arccos(np.clip(max(dots), 0.0, 1.0))))


def fscore_at(detected, gt_planes, diagonal, threshold=0.05):
    report = fscore(
        [c.plane for c in detected], GroundTruth(gt_planes), [threshold], diagonal
    )
    return report.per_threshold[0]["fscore"]


# ---------------------------------------------------------- chamfer oracle


def test_chamfer_oracle():
    with criterion("Chamfer oracle: 200 random pairs vs O(n^2), 1e-12, < 30 s"):
        rng = np.random.default_rng(0)
        t0 = time.perf_counter()
        for _ in range(200):
            n, m = rng.integers(3, 501, size=2)
            P = rng.normal(size=(n, 3)) * rng.uniform(0.1, 10.0)
            Q = rng.normal(size=(m, 3)) * rng.uniform(0.1, 10.0)
            sq = cdist(P, Q, metric="sqeuclidean")
            brute = 0.5 * (sq.min(axis=1).mean() + sq.min(axis=0).mean())
            assert chamfer_distance(P, Q) == pytest.approx(brute, abs=1e-12)
        assert time.perf_counter() - t0 < 30.0


# ---------------------------------------------------- reflection properties


def test_reflection_involution_isometry():
    with criterion("Reflection involution + isometry on 1e5 cases, 1e-9"):
        rng = np.random.default_rng(1)
        for _ in range(100):
            pts = rng.normal(size=(1000, 3)) * rng.uniform(0.05, 20.0)
            v = rng.normal(size=3)
            plane = Plane(v / np.linalg.norm(v), rng.uniform(-3.0, 3.0))
            mirrored = reflect_point(pts, plane)
            # involution
            back = reflect_point(mirrored, plane)
            assert np.abs(back - pts).max() <= 1e-9
            # isometry on consecutive pairs
            d0 = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            d1 = np.linalg.norm(np.diff(mirrored, axis=0), axis=1)
            assert np.abs(d1 - d0).max() <= 1e-9
            # signed plane distance is negated
            s0 = pts @ plane.normal + plane.offset
            s1 = mirrored @ plane.normal + plane.offset
            assert np.abs(s0 + s1).max() <= 1e-9


# ---------------------------------------------------------- rasterizer oracle


def test_rasterizer_oracle():
    with criterion(
        "Rasterizer vs ray-casting oracle: 20 pairs x 100 pixels, depth 1e-4, < 60 s"
    ):
        rng = np.random.default_rng(2)
        t0 = time.perf_counter()
        for trial in range(20):
            nm = normalize(random_mesh(rng, n_vertices=25, n_faces=30))
            vps = fibonacci_viewpoints(20, DEFAULT_RADIUS_FACTOR * nm.diagonal)
            camera = camera_for_viewpoint(vps[trial], image_size=64)
            _, frag = rasterize(nm, camera)
            covered = np.argwhere(frag.coverage_mask())
            assert len(covered) >= 100, "render covers too few pixels"
            picks = covered[rng.choice(len(covered), size=100, replace=False)]
            for row, col in picks:
                hits = ray_cast(camera, nm.vertices, nm.faces, col + 0.5, row + 0.5)
                assert hits, f"oracle found no hit at ({row},{col})"
                depth0 = hits[0][0]
                assert frag.depth[row, col] == pytest.approx(depth0, abs=1e-4)
                tied = {fi for t, fi in hits if t - depth0 <= 1e-6}
                assert frag.face_id[row, col] in tied
        assert time.perf_counter() - t0 < 60.0


# ------------------------------------------------- end-to-end detection


@pytest.fixture(scope="module")
def e2e():
    results, t0 = {}, time.perf_counter()
    for kind, n in (("cube", E2E_POINTS), ("lshape", E2E_POINTS), ("blob", 10000)):
        results[kind] = run_detection(kind, n, E2E_CFG)
    results["elapsed"] = time.perf_counter() - t0
    return results


def test_e2e_cube_axis_planes(e2e):
    with criterion("End-to-end CUBE: 3 axis GT planes detected, chamfer < 1e-4"):
        detected, gt, nm, _ = e2e["cube"]
        for plane in gt:
            angles = [best_match_angle_deg([c], plane) for c in detected]
            best = int(np.argmin(angles))
            assert angles[best] < 2.0, f"axis plane missing (best {angles[best]:.2f} deg)"
            assert detected[best].chamfer < 1e-4


def test_e2e_cube_fscore_vs_3plane_gt(e2e):
    # Expected RED: the cube's 6 diagonal planes are exact symmetries, are
    # honestly detected, and count as false positives against the 3-plane GT.
    with criterion("End-to-end CUBE: F-score 1.0 at 0.05 against the 3-plane GT"):
        detected, gt, nm, _ = e2e["cube"]
        assert fscore_at(detected, gt, nm.diagonal) == pytest.approx(1.0)


def test_e2e_cube_full_symmetry_group(e2e):
    with criterion("End-to-end CUBE: F-score 1.0 at 0.05 against all 9 true planes"):
        detected, _, nm, ext = e2e["cube"]
        assert ext is not None
        assert fscore_at(detected, ext, nm.diagonal) == pytest.approx(1.0)


def test_e2e_lshape_exactly_one(e2e):
    with criterion("End-to-end LSHAPE: exactly its 1 GT plane matched"):
        detected, gt, nm, _ = e2e["lshape"]
        assert len(detected) == 1
        assert best_match_angle_deg(detected, gt[0]) < 1.0
        assert fscore_at(detected, gt, nm.diagonal) == pytest.approx(1.0)


def test_e2e_blob_zero_planes(e2e):
    with criterion("End-to-end BLOB: zero planes detected"):
        detected, _, _, _ = e2e["blob"]
        assert detected == []


def test_e2e_runtime(e2e):
    with criterion("End-to-end suite runtime < 5 min"):
        assert e2e["elapsed"] < 300.0


def test_e2e_cuboid_supplementary():
    # Supplementary: the same criterion that is RED for the cube (whose true
    # symmetry group is larger than its 3-plane GT) is green for the cuboid.
    with criterion("Supplementary CUBOID: F-score 1.0 at 0.05 vs 3-plane GT"):
        detected, gt, nm, _ = run_detection("cuboid", ROT_POINTS, ROT_CFG)
        assert len(detected) == 3
        assert fscore_at(detected, gt, nm.diagonal) == pytest.approx(1.0)


# ------------------------------------------------- rotated-corpus equivariance


@pytest.fixture(scope="module")
def rotated_runs():
    rows = []
    for kind in ("cube", "cuboid", "lshape"):
        for r in range(10):
            detected, gt, nm, ext = run_detection(
                kind, ROT_POINTS, ROT_CFG, seed=r, rotation_seed=100 + r,
                max_planes=9 if kind == "cube" else None,
            )
            planes = ext if kind == "cube" else gt
            rows.append((kind, r, detected, planes, nm))
    return rows


def test_rotated_corpus_fscore(rotated_runs):
    with criterion("Rotated corpus: F-score 1.0 at 0.05 for 10 rotations x 3 shapes"):
        for kind, r, detected, planes, nm in rotated_runs:
            f = fscore_at(detected, planes, nm.diagonal)
            assert f == pytest.approx(1.0), f"{kind} rotation {r}: F={f:.3f}"


def test_rotated_corpus_normals(rotated_runs):
    with criterion("Rotated corpus: detected normals within 0.5 deg of rotated GT"):
        worst = 0.0
        for kind, r, detected, planes, nm in rotated_runs:
            for plane in planes:
                worst = max(worst, best_match_angle_deg(detected, plane))
        assert worst <= 0.5, f"worst normal error {worst:.3f} deg"


# ---------------------------------------------------------------- SDE


def test_sde_closed_form():
    with criterion("SDE closed form: flat square (2*offset)^2 and exact GT < 1e-9"):
        s = 1.0 / np.sqrt(2.0)
        verts = np.array([[0, 0, 0], [s, 0, 0], [s, s, 0], [0, s, 0]], dtype=float)
        nm = normalize(TriangleMesh(verts, np.array([[0, 1, 2], [0, 2, 3]])))
        plane = Plane(np.array([0.0, 0.0, 1.0]), -0.01)
        assert sde(nm, plane, n_samples=1000, seed=0) == pytest.approx(
            0.02**2, abs=1e-9
        )
        for kind in ("cube", "cuboid", "lshape", "ngon_prism"):
            shape = make_shape(kind, tessellation=3)
            snm = shape.normalized()
            for gt_plane in shape.gt.planes:
                assert sde(snm, gt_plane, n_samples=500, seed=0) < 1e-9


# ---------------------------------------------------------------- F-score


def test_fscore_arithmetic():
    with criterion("F-score arithmetic: identity, empty, 1-GT/2-detected = 2/3"):
        x = Plane(np.array([1.0, 0, 0]), 0.0)
        y = Plane(np.array([0.0, 1, 0]), 0.0)
        gt = GroundTruth([x, y])
        assert fscore([x, y], gt, [0.05]).fscore_mean == pytest.approx(1.0)
        assert fscore([], gt, [0.05]).fscore_mean == 0.0
        report = fscore([x, Plane(np.array([1.0, 0, 0]), 0.2)], GroundTruth([x]), [0.05])
        row = report.per_threshold[0]
        assert (row["tp"], row["fp"], row["fn"]) == (1, 1, 0)
        assert report.fscore_mean == pytest.approx(2.0 / 3.0)


# ------------------------------------------------------- invariance orderings


def test_invariance_orderings():
    from symplane.analysis import InvarianceConfig, SyntheticExtractor, run_invariance_object

    with criterion(
        "Invariance orderings: E(4R)<=E(1R), E(FM10k)<=E(RM), "
        "E(sym)<=E(rand)/5, E(T4)==E(1R) bit-exact; 5 objects, < 10 min"
    ):
        t0 = time.perf_counter()
        # Tessellation fine enough that the mirror-asymmetric vertex jitter
        # dominates raw-mesh pairing error (the FM-vs-RM signal).
        corpus = [
            ("cube", make_shape("cube", tessellation=4)),
            ("cuboid", make_shape("cuboid", tessellation=5)),
            ("lshape", make_shape("lshape", tessellation=3)),
            ("ngon8", make_shape("ngon_prism", tessellation=3, ngon=8)),
            ("ngon6", make_shape("ngon_prism", tessellation=3, ngon=6)),
        ]
        for name, shape in corpus:
            nm = shape.normalized()
            gt_plane = shape.gt.planes[0]
            extractor = SyntheticExtractor(
                planes=shape.gt.planes, d=16, noise=0.02, seed=0
            )

            def run(**kw):
                cfg = InvarianceConfig(n_views=26, **kw)
                return run_invariance_object(
                    nm, gt_plane, cfg, extractor, image_size=126, seed=0
                )

            e_1r = run(rotations="1")
            assert run(rotations="4") <= e_1r, name
            assert run(sampling=10000) <= e_1r, name
            assert e_1r <= run(pairing="random") / 5.0, name
            assert run(rotations="t4") == e_1r, name
        assert time.perf_counter() - t0 < 600.0


# ------------------------------------------------------------- determinism


def test_determinism_thread_counts(tmp_path):
    from symplane.cli import main
    from symplane.geometry import save_obj
    from symplane.metrics import GroundTruth as GT

    with criterion("Determinism: --threads 1 vs --threads 8 byte-identical planes"):
        shape = make_shape("cube", tessellation=2)
        nm = shape.normalized()
        mesh_path = tmp_path / "cube.obj"
        save_obj(TriangleMesh(nm.vertices, nm.faces), mesh_path)
        gt_path = tmp_path / "cube.gt.json"
        gt_path.write_text(GT(shape.gt.planes).to_json())
        outputs = []
        for threads in (1, 8):
            out = tmp_path / f"run{threads}"
            assert main([
                "render", str(mesh_path), "--views", "2", "--size", "28",
                "--rotations", "1", "--out", str(out),
            ]) == 0
            assert main([
                "backproject", str(out), "--synthetic-features",
                "--gt", str(gt_path), "--dim", "6", "--noise", "0.01",
            ]) == 0
            assert main([
                "detect", str(out), "--points", "2000",
                "--threads", str(threads),
            ]) == 0
            outputs.append((out / "planes.json").read_bytes())
        assert outputs[0] == outputs[1]
