"""Command-line front-end: stage-per-subcommand pipeline with a JSON run
manifest tying the on-disk artifacts together."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .analysis import (
    ROTATION_SETS,
    InvarianceConfig,
    SyntheticExtractor,
    ablation_grid,
    grid_to_csv,
)
from .errors import PairingError, ParseError, SymplaneError
from .features import (
    FeatureMap,
    VertexFeatures,
    backproject,
    fmap_filename,
    interpolate_features,
    load_feature_map,
    synthetic_features,
)
from .geometry import load_mesh, normalize, sample_surface
from .metrics import (
    DEFAULT_THRESHOLDS,
    GroundTruth,
    TriangleBVH,
    fscore,
    sde,
)
from .render import (
    REGULAR_LEVEL_COUNTS,
    fibonacci_viewpoints,
    frag_filename,
    image_filename,
    read_fragments,
    regular_viewpoints,
    render_view,
    save_image,
    write_fragments,
    DEFAULT_RADIUS_FACTOR,
)
from .symmetry import DetectionConfig, detect, planes_to_json, planes_from_json

log = logging.getLogger(__name__)

EXIT_USAGE = 64
EXIT_PARSE = 2
EXIT_RENDER = 3
EXIT_PAIRING = 4
EXIT_NO_FEATURES = 5
EXIT_NO_GT = 6

MANIFEST_NAME = "manifest.json"


class StageError(click.ClickException):
    """Pipeline failure carrying a stage-specific exit code."""

    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _default_threads() -> int:
    env = os.environ.get("SYMPLANE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _config_hash(config: dict) -> str:
    payload = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def _write_manifest(out_dir: Path, manifest: dict) -> Path:
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2))
    return path


def _read_manifest(path: Path) -> dict:
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise StageError(f"manifest not found: {path}", EXIT_USAGE)
    manifest = json.loads(path.read_text())
    manifest["_dir"] = str(path.parent)
    return manifest


def _load_normalized(manifest: dict):
    mesh_path = manifest["mesh"]
    try:
        return normalize(load_mesh(mesh_path))
    except (ParseError, FileNotFoundError, OSError) as exc:
        raise StageError(f"cannot load mesh {mesh_path}: {exc}", EXIT_PARSE)


@click.group()
@click.version_option(version=__version__, prog_name="symplane")
def cli():
    """Detect global reflective symmetry planes of triangle meshes."""


@cli.command("render")
@click.argument("mesh_path", type=click.Path())
@click.option("--views", default=14, show_default=True, help="Number of viewpoints.")
@click.option("--scheme", type=click.Choice(["fib", "reg"]), default="fib", show_default=True)
@click.option("--rotations", type=click.Choice(sorted(ROTATION_SETS)), default="4",
              show_default=True, help="In-plane rotation set; t4 repeats the unrotated view.")
@click.option("--size", default=518, show_default=True, help="Square image size in pixels.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def cmd_render(mesh_path, views, scheme, rotations, size, out_dir):
    """Render a mesh from a sphere of viewpoints; write PNG + FRAG files."""
    if views < 1:
        raise click.UsageError("--views must be >= 1")
    if size < 14:
        raise click.UsageError("--size must be >= 14")
    if scheme == "reg" and views not in REGULAR_LEVEL_COUNTS:
        raise click.UsageError(
            f"--scheme reg supports view counts {list(REGULAR_LEVEL_COUNTS)}"
        )
    try:
        nmesh = normalize(load_mesh(mesh_path))
    except (ParseError, FileNotFoundError, OSError) as exc:
        raise StageError(f"cannot load mesh {mesh_path}: {exc}", EXIT_PARSE)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    radius = DEFAULT_RADIUS_FACTOR * nmesh.diagonal
    if scheme == "fib":
        vps = fibonacci_viewpoints(views, radius)
    else:
        vps = regular_viewpoints(REGULAR_LEVEL_COUNTS.index(views) + 1, radius)

    rot_set = ROTATION_SETS[rotations]
    renders, frags = [], []
    for vp in vps:
        # t4 renders the unrotated view once; the manifest lists it four
        # times so downstream stages see four aligned entries.
        unique_rots = [0] if rotations == "t4" else list(rot_set)
        per_view = {}
        for rot in unique_rots:
            try:
                image, frag = render_view(nmesh, vp.with_rotation(rot), size)
            except Exception as exc:
                raise StageError(
                    f"render failed for view {vp.view_id} rot {rot}: {exc}", EXIT_RENDER
                )
            png = out / image_filename(vp.view_id, rot)
            frg = out / frag_filename(vp.view_id, rot)
            save_image(image, png)
            write_fragments(frag, frg)
            per_view[rot] = (str(png), str(frg))
        for rot in rot_set:
            png, frg = per_view[rot if rotations != "t4" else 0]
            renders.append(png)
            frags.append(frg)

    config = {
        "mesh": str(mesh_path),
        "views": views,
        "scheme": scheme,
        "rotations": rotations,
        "size": size,
        "version": __version__,
    }
    manifest = {
        "object_id": Path(mesh_path).stem,
        "version": __version__,
        "mesh": str(mesh_path),
        "config": config,
        "config_hash": _config_hash(config),
        "stages": {
            "render": {"complete": True, "renders": renders, "fragments": frags}
        },
    }
    _write_manifest(out, manifest)
    click.echo(f"rendered {len(renders)} views -> {out} (hash {manifest['config_hash']})")


@cli.command("backproject")
@click.argument("manifest_path", type=click.Path())
@click.option("--features", "fmap_dir", type=click.Path(file_okay=False),
              help="Directory of FMAP files matching the rendered views.")
@click.option("--synthetic-features", "synthetic", is_flag=True,
              help="Generate reflection-invariant synthetic features instead of FMAPs.")
@click.option("--gt", "gt_path", type=click.Path(), help="GT planes JSON for --synthetic-features.")
@click.option("--dim", default=16, show_default=True, help="Synthetic feature dimension.")
@click.option("--noise", default=0.01, show_default=True, help="Synthetic feature noise amplitude.")
@click.option("--seed", default=0, show_default=True)
def cmd_backproject(manifest_path, fmap_dir, synthetic, gt_path, dim, noise, seed):
    """Average per-view patch features onto mesh vertices."""
    manifest = _read_manifest(Path(manifest_path))
    nmesh = _load_normalized(manifest)
    out = Path(manifest["_dir"])

    if synthetic:
        if not gt_path:
            raise click.UsageError("--synthetic-features requires --gt")
        if not Path(gt_path).exists():
            raise StageError(f"GT file not found: {gt_path}", EXIT_NO_GT)
        gt = GroundTruth.from_json(Path(gt_path).read_text())
        vf = synthetic_features(nmesh, gt.planes, d=dim, noise=noise, seed=seed)
    else:
        if not fmap_dir:
            raise click.UsageError("either --features DIR or --synthetic-features is required")
        frag_paths = manifest["stages"]["render"]["fragments"]
        frags, maps = [], []
        for fp in frag_paths:
            frag = read_fragments(fp, *_ids_from_name(Path(fp).stem))
            fmap_path = Path(fmap_dir) / fmap_filename(frag.view_id, frag.rotation_deg)
            if not fmap_path.exists():
                raise StageError(
                    f"missing feature map for view {frag.view_id} rot "
                    f"{frag.rotation_deg}: {fmap_path}",
                    EXIT_PAIRING,
                )
            frags.append(frag)
            maps.append(load_feature_map(fmap_path))
        try:
            vf = backproject(nmesh, frags, maps)
        except PairingError as exc:
            raise StageError(str(exc), EXIT_PAIRING)

    vf_path = out / "vertex_features.npz"
    np.savez_compressed(vf_path, features=vf.features, visibility=vf.visibility)
    manifest["stages"]["backproject"] = {
        "complete": True,
        "vertex_features": str(vf_path),
        "synthetic": bool(synthetic),
    }
    _write_manifest(out, manifest)
    uncovered = float(np.mean(~vf.covered_mask()))
    click.echo(f"vertex features: {vf.features.shape}, uncovered fraction {uncovered:.4f}")


def _ids_from_name(stem: str) -> tuple[int, int]:
    # view_{vid:03}_rot{deg:03}
    parts = stem.split("_")
    return int(parts[1]), int(parts[2][3:])


@cli.command("detect")
@click.argument("manifest_path", type=click.Path())
@click.option("--points", default=10000, show_default=True, help="Surface sample count.")
@click.option("--tau1", default=0.01, show_default=True, help="Chamfer acceptance threshold.")
@click.option("--tau2", default=1.0, show_default=True, help="Angular dedup threshold (deg).")
@click.option("--k", default=10, show_default=True, help="Maximum planes returned.")
@click.option("--origin-frac", default=0.05, show_default=True,
              help="Max candidate distance to origin, as a diagonal fraction.")
@click.option("--seed", default=0, show_default=True)
@click.option("--threads", default=None, type=int,
              help="Worker threads (default: SYMPLANE_THREADS or CPU count).")
def cmd_detect(manifest_path, points, tau1, tau2, k, origin_frac, seed, threads):
    """Sample the surface, match features and emit verified symmetry planes."""
    if points < 3:
        raise click.UsageError("--points must be >= 3")
    manifest = _read_manifest(Path(manifest_path))
    stage = manifest.get("stages", {}).get("backproject")
    if not stage or not stage.get("complete"):
        raise StageError("no vertex features; run backproject first", EXIT_NO_FEATURES)
    vf_path = Path(stage["vertex_features"])
    if not vf_path.exists():
        raise StageError(f"vertex feature file missing: {vf_path}", EXIT_NO_FEATURES)

    nmesh = _load_normalized(manifest)
    data = np.load(vf_path)
    vf = VertexFeatures(data["features"], data["visibility"])
    samples = sample_surface(nmesh, points, seed)
    cloud = interpolate_features(vf, samples, nmesh.faces)
    cfg = DetectionConfig(
        origin_tol_frac=origin_frac,
        chamfer_tau1=tau1,
        angle_tau2_deg=tau2,
        max_planes=k,
    )
    workers = threads if threads else _default_threads()
    planes = detect(cloud, nmesh.diagonal, cfg, workers=workers)

    out = Path(manifest["_dir"])
    planes_path = out / "planes.json"
    planes_path.write_text(planes_to_json(planes))
    manifest["stages"]["detect"] = {
        "complete": True,
        "planes": str(planes_path),
        "points": points,
    }
    _write_manifest(out, manifest)
    for c in planes:
        n = c.plane.normal
        click.echo(
            f"plane n=({n[0]:+.4f},{n[1]:+.4f},{n[2]:+.4f}) off={c.plane.offset:+.5f} "
            f"chamfer={c.chamfer:.3e} confidence={c.confidence:.4f}"
        )
    click.echo(f"{len(planes)} plane(s) -> {planes_path}")


@cli.command("evaluate")
@click.argument("planes_path", type=click.Path())
@click.argument("gt_path", type=click.Path())
@click.argument("mesh_path", type=click.Path())
@click.option("--thresholds", default=",".join(str(t) for t in DEFAULT_THRESHOLDS),
              show_default=True, help="Comma-separated F-score thresholds.")
@click.option("--sde-samples", default=1000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_prefix", type=click.Path(), default=None,
              help="Write <out>.json and <out>.csv (default: alongside planes).")
def cmd_evaluate(planes_path, gt_path, mesh_path, thresholds, sde_samples, seed, out_prefix):
    """Score detected planes against ground truth: F-score and SDE."""
    if not Path(gt_path).exists():
        raise StageError(f"GT file not found: {gt_path}", EXIT_NO_GT)
    if not Path(planes_path).exists():
        raise StageError(f"planes file not found: {planes_path}", EXIT_USAGE)
    try:
        thr = [float(t) for t in thresholds.split(",") if t.strip()]
    except ValueError:
        raise click.UsageError(f"bad --thresholds: {thresholds!r}")
    if not thr:
        raise click.UsageError("--thresholds must name at least one value")

    detected = planes_from_json(Path(planes_path).read_text())
    gt = GroundTruth.from_json(Path(gt_path).read_text())
    try:
        nmesh = normalize(load_mesh(mesh_path))
    except (ParseError, FileNotFoundError, OSError) as exc:
        raise StageError(f"cannot load mesh {mesh_path}: {exc}", EXIT_PARSE)

    report = fscore([c.plane for c in detected], gt, thr, diagonal=nmesh.diagonal)
    if detected:
        bvh = TriangleBVH(nmesh.vertices, nmesh.faces)
        values = [
            sde(nmesh, c.plane, n_samples=sde_samples, seed=seed, bvh=bvh)
            for c in detected
        ]
        report.sde_mean = float(np.mean(values))
    prefix = Path(out_prefix) if out_prefix else Path(planes_path).with_suffix("")
    Path(f"{prefix}.report.json").write_text(report.to_json())
    Path(f"{prefix}.report.csv").write_text(report.to_csv())
    sde_text = "n/a" if report.sde_mean is None else f"{report.sde_mean:.3e}"
    click.echo(f"fscore_mean={report.fscore_mean:.4f} sde_mean={sde_text}")


@cli.command("invariance")
@click.argument("corpus_dir", type=click.Path(file_okay=False))
@click.argument("grid_path", type=click.Path())
@click.option("--dim", default=16, show_default=True)
@click.option("--noise", default=0.02, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--size", default=126, show_default=True, help="Render size for the ablation.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="CSV output path (default: stdout).")
def cmd_invariance(corpus_dir, grid_path, dim, noise, seed, size, out_path):
    """Run the invariance ablation grid over a mesh+GT corpus; emit CSV.

    The corpus directory holds OBJ meshes with sidecar `<name>.gt.json`
    planes. The grid file has one configuration per line of key=value
    pairs: scheme, views, rotations, sampling, pairing.
    """
    corpus_path = Path(corpus_dir)
    meshes = sorted(corpus_path.glob("*.obj"))
    if not meshes:
        raise click.UsageError(f"no .obj meshes in corpus {corpus_dir}")
    if not Path(grid_path).exists():
        raise click.UsageError(f"grid file not found: {grid_path}")
    configs = parse_grid(Path(grid_path).read_text())
    if not configs:
        raise click.UsageError("grid file defines no configurations")

    corpus = []
    gt_by_name: dict[str, list] = {}
    for mesh_path in meshes:
        name = mesh_path.stem
        gt_path = corpus_path / f"{name}.gt.json"
        if not gt_path.exists():
            log.warning("skipping %s: no GT sidecar", name)
            continue
        gt = GroundTruth.from_json(gt_path.read_text())
        if not gt.planes:
            log.warning("skipping %s: empty GT", name)
            continue
        try:
            nmesh = normalize(load_mesh(mesh_path))
        except (ParseError, OSError) as exc:
            log.warning("skipping %s: %s", name, exc)
            continue
        corpus.append((name, nmesh, gt.planes[0]))
        gt_by_name[name] = gt.planes
    if not corpus:
        raise click.UsageError("corpus contains no usable mesh+GT pairs")

    results = ablation_grid(
        corpus, configs, d=dim, noise=noise, seed=seed, image_size=size,
        gt_planes_by_name=gt_by_name,
    )
    text = grid_to_csv(results)
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"{len(results)} config(s) -> {out_path}")
    else:
        click.echo(text, nl=False)


def parse_grid(text: str) -> list[InvarianceConfig]:
    """Parse one InvarianceConfig per non-comment line of key=value pairs."""
    configs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        kv = {}
        for token in line.replace(";", " ").split():
            if "=" not in token:
                raise click.UsageError(f"grid line {lineno}: bad token {token!r}")
            key, value = token.split("=", 1)
            kv[key.strip()] = value.strip()
        unknown = set(kv) - {"scheme", "views", "rotations", "sampling", "pairing"}
        if unknown:
            raise click.UsageError(f"grid line {lineno}: unknown keys {sorted(unknown)}")
        sampling: str | int = kv.get("sampling", "raw")
        if sampling != "raw":
            sampling = int(sampling)
        try:
            configs.append(
                InvarianceConfig(
                    scheme=kv.get("scheme", "fibonacci"),
                    n_views=int(kv.get("views", 14)),
                    rotations=str(kv.get("rotations", "1")),
                    sampling=sampling,
                    pairing=kv.get("pairing", "symmetric"),
                )
            )
        except ValueError as exc:
            raise click.UsageError(f"grid line {lineno}: {exc}")
    return configs


def main(argv=None) -> int:
    """Entry point with the stage-specific exit-code scheme."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except SymplaneError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_PARSE if isinstance(exc, ParseError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
