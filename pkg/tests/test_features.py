import numpy as np
import pytest

from symplane.errors import (
    ChecksumError,
    DimensionMismatchError,
    FormatError,
    PairingError,
)
from symplane.features import (
    FeatureMap,
    VertexFeatures,
    backproject,
    canonical_orbit_points,
    fmap_filename,
    interpolate_features,
    load_feature_map,
    save_feature_map,
    smooth_feature_field,
    synthetic_features,
)
from symplane.geometry import (
    NormalizedMesh,
    Plane,
    SurfaceSamples,
    TriangleMesh,
    reflect_point,
)
from symplane.render import FragmentBuffer


def tiny_nmesh():
    """Two triangles sharing an edge; vertices 0..3."""
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [1.0, 1, 0]])
    faces = np.array([[0, 1, 2], [1, 3, 2]])
    return NormalizedMesh(TriangleMesh(verts, faces), np.sqrt(2.0), np.zeros(3))


def frag_with(face_grid, view_id=0, rotation_deg=0):
    face_id = np.asarray(face_grid, dtype=np.int32)
    H, W = face_id.shape
    frag = FragmentBuffer.empty(W, H, view_id, rotation_deg)
    frag.face_id[:] = face_id
    frag.depth[face_id >= 0] = 1.0
    return frag


# ---------------------------------------------------------------- fmap io


def test_fmap_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    fmap = FeatureMap(7, 180, rng.normal(size=(5, 5, 3)).astype(np.float32))
    path = tmp_path / fmap_filename(7, 180)
    save_feature_map(fmap, path)
    back = load_feature_map(path)
    assert (back.view_id, back.rotation_deg) == (7, 180)
    assert back.patches == 5 and back.dim == 3
    np.testing.assert_array_equal(back.grid, fmap.grid)


def test_fmap_filename():
    assert fmap_filename(7, 90) == "view_007_rot090.fmap"


def test_fmap_bad_magic(tmp_path):
    p = tmp_path / "x.fmap"
    p.write_bytes(b"XMAP" + b"\x00" * 40)
    with pytest.raises(FormatError):
        load_feature_map(p)


def test_fmap_size_mismatch(tmp_path):
    fmap = FeatureMap(0, 0, np.zeros((2, 2, 3), dtype=np.float32))
    p = tmp_path / "x.fmap"
    save_feature_map(fmap, p)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(FormatError):
        load_feature_map(p)


def test_fmap_crc_corruption(tmp_path):
    fmap = FeatureMap(0, 0, np.ones((2, 2, 3), dtype=np.float32))
    p = tmp_path / "x.fmap"
    save_feature_map(fmap, p)
    data = bytearray(p.read_bytes())
    data[30] ^= 0xFF  # flip payload bits, keep length
    p.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        load_feature_map(p)


def test_fmap_bad_version(tmp_path):
    import struct

    fmap = FeatureMap(0, 0, np.ones((2, 2, 3), dtype=np.float32))
    p = tmp_path / "x.fmap"
    save_feature_map(fmap, p)
    data = bytearray(p.read_bytes())
    data[4:8] = struct.pack("<I", 99)
    p.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        load_feature_map(p)


def test_feature_map_validation():
    with pytest.raises(DimensionMismatchError):
        FeatureMap(0, 0, np.zeros((2, 3, 4)))
    with pytest.raises(DimensionMismatchError):
        FeatureMap(0, 0, np.zeros((2, 2)))


# ------------------------------------------------------------- backproject


def test_backproject_single_render_mean():
    nmesh = tiny_nmesh()
    # 4x4 image, 2x2 patch grid (patch_px = 2); face 0 wins the top-left
    # patch (4 px) and one pixel of the top-right patch
    face_grid = -np.ones((4, 4), dtype=np.int32)
    face_grid[0:2, 0:2] = 0
    face_grid[0, 2] = 0
    frag = frag_with(face_grid)
    grid = np.zeros((2, 2, 2), dtype=np.float32)
    grid[0, 0] = [1.0, 10.0]
    grid[0, 1] = [5.0, 50.0]
    vf = backproject(nmesh, [frag], [FeatureMap(0, 0, grid)])
    # face 0 vertices (0,1,2): 4 px of patch (0,0) + 1 px of patch (0,1)
    expected = (4 * np.array([1.0, 10.0]) + 1 * np.array([5.0, 50.0])) / 5
    for v in (0, 1, 2):
        np.testing.assert_allclose(vf.features[v], expected)
        assert vf.visibility[v] == 1
    np.testing.assert_array_equal(vf.features[3], [0.0, 0.0])
    assert vf.visibility[3] == 0


def test_backproject_cross_render_mean_of_means():
    nmesh = tiny_nmesh()
    g1 = np.full((1, 1, 1), 2.0, dtype=np.float32)
    g2 = np.full((1, 1, 1), 6.0, dtype=np.float32)
    f1 = frag_with([[0]], view_id=0)
    f2 = frag_with([[1]], view_id=1)
    vf = backproject(nmesh, [f1, f2], [FeatureMap(0, 0, g1), FeatureMap(1, 0, g2)])
    # vertex 0 only in face 0; vertex 3 only in face 1; vertices 1,2 in both
    assert vf.features[0, 0] == 2.0 and vf.visibility[0] == 1
    assert vf.features[3, 0] == 6.0 and vf.visibility[3] == 1
    assert vf.features[1, 0] == pytest.approx(4.0) and vf.visibility[1] == 2
    assert vf.features[2, 0] == pytest.approx(4.0)


def test_backproject_reorders_by_key():
    nmesh = tiny_nmesh()
    g1 = np.full((1, 1, 1), 2.0, dtype=np.float32)
    g2 = np.full((1, 1, 1), 6.0, dtype=np.float32)
    f1 = frag_with([[0]], view_id=0)
    f2 = frag_with([[1]], view_id=1)
    a = backproject(nmesh, [f1, f2], [FeatureMap(0, 0, g1), FeatureMap(1, 0, g2)])
    b = backproject(nmesh, [f1, f2], [FeatureMap(1, 0, g2), FeatureMap(0, 0, g1)])
    np.testing.assert_array_equal(a.features, b.features)


def test_backproject_pairing_errors():
    nmesh = tiny_nmesh()
    f1 = frag_with([[0]], view_id=0)
    g = np.zeros((1, 1, 1), dtype=np.float32)
    with pytest.raises(PairingError):
        backproject(nmesh, [f1], [])
    with pytest.raises(PairingError):
        backproject(nmesh, [f1], [FeatureMap(5, 0, g)])  # no map for view 0
    f2 = frag_with([[0]], view_id=1)
    with pytest.raises(PairingError):
        backproject(nmesh, [f1, f2], [FeatureMap(1, 0, g), FeatureMap(1, 0, g)])


def test_backproject_dimension_errors():
    nmesh = tiny_nmesh()
    f1 = frag_with([[0]], view_id=0)
    f2 = frag_with([[1]], view_id=1)
    with pytest.raises(DimensionMismatchError):
        backproject(
            nmesh,
            [f1, f2],
            [FeatureMap(0, 0, np.zeros((1, 1, 2))), FeatureMap(1, 0, np.zeros((1, 1, 3)))],
        )
    bad = frag_with(-np.ones((5, 5)))  # 5 px image, 2-patch grid
    with pytest.raises(DimensionMismatchError):
        backproject(nmesh, [bad], [FeatureMap(0, 0, np.zeros((2, 2, 3)))])


def test_backproject_duplicate_renders_allowed():
    # positional pairing admits repeated identical (view, rotation) pairs
    nmesh = tiny_nmesh()
    f1 = frag_with([[0]], view_id=0)
    g = np.full((1, 1, 1), 3.0, dtype=np.float32)
    maps = [FeatureMap(0, 0, g)] * 4
    vf = backproject(nmesh, [f1] * 4, maps)
    assert vf.features[0, 0] == 3.0
    assert vf.visibility[0] == 4


# ------------------------------------------------------------ interpolation


def test_interpolate_convex_and_exact():
    nmesh = tiny_nmesh()
    feats = np.array([[0.0, 0], [1.0, 10], [2.0, 20], [3.0, 30]])
    vf = VertexFeatures(feats, np.ones(4, dtype=np.int64))
    bary = np.array([[1.0, 0, 0], [0.2, 0.3, 0.5]])
    samples = SurfaceSamples(np.zeros((2, 3)), np.array([0, 0]), bary)
    cloud = interpolate_features(vf, samples, nmesh.faces)
    np.testing.assert_allclose(cloud.features[0], feats[0])
    np.testing.assert_allclose(
        cloud.features[1], 0.2 * feats[0] + 0.3 * feats[1] + 0.5 * feats[2]
    )
    lo = feats[:3].min(axis=0) - 1e-12
    hi = feats[:3].max(axis=0) + 1e-12
    assert np.all(cloud.features >= lo) and np.all(cloud.features <= hi)
    assert cloud.n_dropped == 0


def test_interpolate_drops_uncovered():
    nmesh = tiny_nmesh()
    vf = VertexFeatures(np.ones((4, 2)), np.array([1, 1, 1, 0]))  # vertex 3 unseen
    samples = SurfaceSamples(
        np.zeros((3, 3)), np.array([0, 1, 0]), np.full((3, 3), 1 / 3)
    )
    cloud = interpolate_features(vf, samples, nmesh.faces)
    assert len(cloud) == 2
    assert cloud.n_dropped == 1
    np.testing.assert_array_equal(cloud.provenance.face_ids, [0, 0])


# ----------------------------------------------------------- feature fields


def test_canonical_orbit_invariant_under_reflection():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(100, 3))
    planes = [Plane(np.array([1.0, 0, 0]), 0.0), Plane(np.array([0.0, 1, 0]), 0.1)]
    reps = canonical_orbit_points(pts, planes)
    for plane in planes:
        np.testing.assert_allclose(
            canonical_orbit_points(reflect_point(pts, plane), planes), reps, atol=1e-12
        )
    # idempotent and a no-op without planes
    np.testing.assert_allclose(canonical_orbit_points(reps, planes), reps, atol=1e-12)
    np.testing.assert_array_equal(canonical_orbit_points(pts, []), pts)


def test_smooth_field_deterministic_bounded():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(50, 3))
    a = smooth_feature_field(pts, 6, seed=3)
    b = smooth_feature_field(pts, 6, seed=3)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (50, 6)
    assert np.all(np.abs(a) <= 1.0)
    c = smooth_feature_field(pts, 6, seed=4)
    assert not np.array_equal(a, c)


def test_synthetic_features_mirror_invariant():
    rng = np.random.default_rng(3)
    half = rng.uniform(0.05, 0.5, size=(40, 3))
    plane = Plane(np.array([1.0, 0, 0]), 0.0)
    verts = np.vstack([half, reflect_point(half, plane)])
    faces = np.array([[0, 1, 2]])
    nmesh = NormalizedMesh(TriangleMesh(verts, faces), 1.0, np.zeros(3))
    vf = synthetic_features(nmesh, [plane], d=5, noise=0.0, seed=0)
    np.testing.assert_allclose(vf.features[:40], vf.features[40:], atol=1e-12)


def test_synthetic_features_noise_and_validation(cube_nmesh):
    clean = synthetic_features(cube_nmesh, [], d=4, noise=0.0, seed=0)
    noisy = synthetic_features(cube_nmesh, [], d=4, noise=0.02, seed=0)
    delta = np.abs(noisy.features - clean.features)
    assert delta.max() <= 0.02 + 1e-12
    assert delta.max() > 0.0
    with pytest.raises(ValueError):
        synthetic_features(cube_nmesh, [], d=2, noise=0.0, seed=0)


def test_synthetic_features_deterministic(cube_nmesh):
    a = synthetic_features(cube_nmesh, [], d=4, noise=0.01, seed=5)
    b = synthetic_features(cube_nmesh, [], d=4, noise=0.01, seed=5)
    np.testing.assert_array_equal(a.features, b.features)
