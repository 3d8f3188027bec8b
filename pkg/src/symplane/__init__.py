"""symplane: reflective symmetry plane detection for triangle meshes via
multi-view feature backprojection."""

from .errors import (
    ChecksumError,
    DegenerateMeshError,
    DimensionMismatchError,
    EmptyCloudError,
    EmptyMeshError,
    EmptySetError,
    FormatError,
    PairingError,
    ParseError,
    SymplaneError,
    TooFewPointsError,
    UncoveredFaceError,
)
from .geometry import (
    NormalizedMesh,
    Plane,
    SurfaceSample,
    SurfaceSamples,
    TriangleMesh,
    load_mesh,
    normalize,
    reflect_point,
    sample_surface,
)
from .render import (
    Camera,
    FragmentBuffer,
    Viewpoint,
    fibonacci_viewpoints,
    rasterize,
    regular_viewpoints,
    render_view,
)
from .features import (
    FeatureCloud,
    FeatureMap,
    VertexFeatures,
    backproject,
    interpolate_features,
    load_feature_map,
    save_feature_map,
    synthetic_features,
)
from .symmetry import (
    CandidatePlane,
    DetectionConfig,
    MatchTrio,
    chamfer_distance,
    candidate_planes,
    detect,
    filter_by_origin,
    match_trios,
    verify_and_select,
)
from .metrics import EvalReport, GroundTruth, fscore, plane_distance, sde
from .analysis import (
    InvarianceConfig,
    InvarianceResult,
    ablation_grid,
    discrepancy,
    random_pairing_discrepancy,
)
from .synth import SynthShape, make_shape, random_rotation
from .estimator import SymmetryPlaneDetector

__version__ = "0.1.0"
