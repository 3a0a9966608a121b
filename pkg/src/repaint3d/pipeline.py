"""End-to-end orchestration: view planning, prompt construction, and the
facade-then-alternating paint loop with periodic surface fusion.

A frontal facade fan is painted first, chaining remaps without fusion; the
remaining views alternate clockwise / counterclockwise around the back, and
all painted views are re-fused into the surface color field before each new
one so later views are conditioned on a globally consistent state.
"""

from __future__ import annotations

import hashlib
import shlex
import subprocess
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from repaint3d.fusion import (DEFAULT_DENSITY, FusionError, PaintedView,
                              SurfaceColorField, export_nerf_dataset,
                              field_lookup, fuse_views, import_nerf_renders,
                              sample_surface)
from repaint3d.geometry import (FRAMING_RADIUS, Mesh, camera_on_sphere,
                                compute_vertex_normals, normalize,
                                pointcloud_to_mesh)
from repaint3d.images import to_u8, write_json, write_png
from repaint3d.meshio import (is_pointcloud_file, load_mesh, load_pointcloud,
                              save_ply)
from repaint3d.protocol import (BUILTIN_PAINTERS, PaintRequest, PainterError,
                                ProtocolError, paint_view)
from repaint3d.raster import rasterize, render_position, render_visibility
from repaint3d.remap import DEPTH_AGREEMENT_TOL, REFINE_THRESHOLD, remap_multi
from repaint3d.remesh import export_colored, remesh_planar, transfer_colors


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    """Everything the pipeline needs beyond the input asset itself.

    The camera fan, painter, and consistency engine are all configuration;
    defaults reproduce the standard 9-view / 40 degree setup with the
    procedural painter and built-in fusion.
    """

    prompt_object: str = "object"
    prompt_modifier: str | None = None
    n_views: int = 9
    increment_deg: float = 40.0
    n_facade: int = 5
    elevation: float = 0.0
    fov_y: float = 60.0
    resolution: int = 512
    camera_radius: float = FRAMING_RADIUS
    eval_views: int = 8
    zoning: bool = True
    painter: str = "procedural"
    consistency: str = "builtin"
    seed: int = 0
    tol: float = DEPTH_AGREEMENT_TOL
    refine_threshold: float = REFINE_THRESHOLD
    w_refine: float = 0.5
    init_mode: str = "auto"
    init_retries: int = 0
    sample_density: float = DEFAULT_DENSITY
    target_edge: float = 0.05
    export_format: str = "ply"
    painter_timeout: float = 300.0

    def validate(self) -> None:
        if not self.prompt_object or not str(self.prompt_object).strip():
            raise ConfigError("prompt object must be non-empty")
        if self.n_views < 1:
            raise ConfigError("n_views must be at least 1")
        if not 0.0 < self.increment_deg <= 360.0:
            raise ConfigError("increment must be in (0, 360] degrees")
        if self.n_facade < 1:
            raise ConfigError("n_facade must be at least 1")
        span = self.n_views * self.increment_deg
        if span > 360.0 + 1e-9:
            raise ConfigError(
                "view fan wraps past a full circle: n_views * increment must "
                "not exceed 360 (use an increment that divides 360)")
        if not 0.0 < self.fov_y < 180.0:
            raise ConfigError("fov_y must be in (0, 180)")
        if self.resolution < 8:
            raise ConfigError("resolution must be at least 8")
        if self.camera_radius <= 1.0:
            raise ConfigError(
                "camera radius must exceed the normalized asset radius of 1")
        if self.eval_views < 1:
            raise ConfigError("eval_views must be at least 1")
        if self.painter not in BUILTIN_PAINTERS:
            if not (self.painter.startswith("external:")
                    and "{dir}" in self.painter):
                raise ConfigError(
                    f"painter must be one of {sorted(BUILTIN_PAINTERS)} or "
                    "'external:<command with {dir}>'")
        if self.consistency != "builtin":
            if not (self.consistency.startswith("external-nerf:")
                    and "{dir}" in self.consistency):
                raise ConfigError(
                    "consistency must be 'builtin' or "
                    "'external-nerf:<command with {dir}>'")
        if self.init_mode not in ("auto", "interactive", "seed-retry"):
            raise ConfigError("init_mode must be auto, interactive, or seed-retry")
        if self.init_retries < 0:
            raise ConfigError("init_retries must be non-negative")
        if self.tol <= 0:
            raise ConfigError("depth agreement tol must be positive")
        if self.refine_threshold < 0:
            raise ConfigError("refine threshold must be non-negative")
        if not 0.0 <= self.w_refine <= 1.0:
            raise ConfigError("w_refine must be in [0, 1]")
        if self.sample_density <= 0:
            raise ConfigError("sample density must be positive")
        if self.target_edge <= 0:
            raise ConfigError("target edge must be positive")
        if self.export_format not in ("ply", "obj"):
            raise ConfigError("export format must be ply or obj")
        if self.painter_timeout <= 0:
            raise ConfigError("painter timeout must be positive")


@dataclass(frozen=True)
class PlannedView:
    view_index: int
    azimuth: float
    camera: object
    remap_sources: tuple
    fuse_before: bool


@dataclass(frozen=True)
class ViewPlan:
    views: tuple

    def azimuths(self) -> list:
        return [v.azimuth for v in self.views]

    def as_dict(self) -> dict:
        return {
            "azimuths": self.azimuths(),
            "views": [{
                "view_index": v.view_index,
                "azimuth": v.azimuth,
                "remap_sources": list(v.remap_sources),
                "fuse_before": v.fuse_before,
            } for v in self.views],
        }


def _nearest_per_side(azimuth: float, painted) -> tuple:
    """Indices of the nearest already-painted view on each rotational side.

    Side is the sign of the shortest signed angle from the view to the
    source; a view straight behind (-180) counts as one side only.
    """
    best = {}
    for idx, az in painted:
        rel = ((az - azimuth + 180.0) % 360.0) - 180.0
        side = rel > 0
        key = (abs(rel), idx)
        if side not in best or key < best[side][0]:
            best[side] = (key, idx)
    return tuple(sorted({entry[1] for entry in best.values()}))


def plan_views(cfg: PipelineConfig) -> ViewPlan:
    """Expand the facade-then-alternating azimuth sequence into a full plan.

    Azimuth order is 0, +inc, -inc, +2inc, -2inc, ... truncated at n_views;
    the first min(n_facade, n_views) entries paint without prior fusion and
    every later view re-fuses all painted views first. Each view after the
    first remaps from its nearest painted neighbor per rotational side.
    """
    cfg.validate()
    azimuths = [0.0]
    step = 1
    while len(azimuths) < cfg.n_views:
        azimuths.append((step * cfg.increment_deg) % 360.0)
        if len(azimuths) < cfg.n_views:
            azimuths.append((-step * cfg.increment_deg) % 360.0)
        step += 1
    n_facade = min(cfg.n_facade, cfg.n_views)
    views = []
    painted = []
    for i, az in enumerate(azimuths):
        camera = camera_on_sphere(az, cfg.elevation, radius=cfg.camera_radius,
                                  fov_y=cfg.fov_y, resolution=cfg.resolution)
        sources = _nearest_per_side(az, painted)
        views.append(PlannedView(i, az, camera, sources, i >= n_facade))
        painted.append((i, az))
    return ViewPlan(tuple(views))


def build_prompt(object_name: str, azimuth: float,
                 modifier: str | None = None) -> str:
    """Prompt text for one view: object, optional modifier, direction token."""
    if not object_name or not str(object_name).strip():
        raise ConfigError("object name must be non-empty")
    rel = abs(((azimuth + 180.0) % 360.0) - 180.0)
    if rel <= 45.0:
        direction = "front"
    elif rel < 135.0:
        direction = "side"
    else:
        direction = "back"
    if modifier:
        return f"A photo of a {modifier} {object_name}, {direction} view"
    return f"A photo of {object_name}, {direction} view"


def _terminal_ask(image) -> bool:
    answer = input("accept first view? [y/n] ")
    return answer.strip().lower() in ("y", "yes", "")


def confirm_initialization(image, mode: str = "auto", ask=None,
                           attempt: int = 0, retries: int = 0) -> bool:
    """Accept or reject the first painted view.

    auto always accepts; interactive defers to `ask` (terminal prompt by
    default); seed-retry rejects until `retries` regenerations have happened,
    accepting earlier if an `ask` callback approves one.
    """
    if mode == "auto":
        return True
    if mode == "interactive":
        return bool((ask or _terminal_ask)(image))
    if mode == "seed-retry":
        if ask is not None and ask(image):
            return True
        return attempt >= retries
    raise ConfigError(f"unknown init mode '{mode}'")


@dataclass
class PipelineResult:
    mesh: Mesh
    field: SurfaceColorField
    views: list
    plan: ViewPlan
    asset: Mesh
    export_path: Path
    manifest_path: Path
    manifest: dict


def _load_input(path) -> Mesh:
    path = Path(path)
    if is_pointcloud_file(path):
        return pointcloud_to_mesh(load_pointcloud(path))
    return load_mesh(path)


def _make_painter(cfg: PipelineConfig):
    if cfg.painter in BUILTIN_PAINTERS:
        cls = BUILTIN_PAINTERS[cfg.painter]
        if cfg.painter == "masked-diffusion":
            return cls(w_refine=cfg.w_refine)
        return cls()
    return cfg.painter


def _rendered_from_field(field, views, position_cache) -> dict:
    out = {}
    for i, view in views.items():
        positions, fg = position_cache[i]
        image = np.zeros(positions.shape)
        if fg.any():
            image[fg] = field_lookup(field, positions[fg])
        out[i] = PaintedView(view.camera, image, view.depth, view.visibility)
    return out


def _run_consistency_tool(command: str, dirpath: Path, timeout: float) -> None:
    argv = [part.replace("{dir}", str(dirpath)) for part in shlex.split(command)]
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=timeout)
    except subprocess.TimeoutExpired as exc:
        raise FusionError(f"consistency tool exceeded {timeout}s") from exc
    except OSError as exc:
        raise FusionError(f"consistency tool failed to start: {exc}") from exc
    if proc.returncode != 0:
        tail = proc.stderr.decode(errors="replace")[-2000:]
        raise FusionError(
            f"consistency tool exited {proc.returncode}: {tail}")


def _consistency_pass(cfg, base_field, mesh, views, position_cache, stage_dir):
    """Fuse all painted views and return (field, replacement views).

    builtin runs fuse_views and re-renders through the field; external-nerf
    exports the dataset, runs the tool in place, and imports its renders.
    """
    ordered = [views[i] for i in sorted(views)]
    if cfg.consistency == "builtin":
        fused = fuse_views(base_field, ordered, tol=cfg.tol)
        return fused, _rendered_from_field(fused, views, position_cache)
    command = cfg.consistency[len("external-nerf:"):]
    export_nerf_dataset(ordered, stage_dir)
    _run_consistency_tool(command, stage_dir, cfg.painter_timeout)
    imported = import_nerf_renders(stage_dir, [v.camera for v in ordered], mesh)
    replaced = dict(zip(sorted(views), imported))
    fused = fuse_views(base_field, imported, tol=cfg.tol)
    return fused, replaced


def save_field(field: SurfaceColorField, dirpath) -> Path:
    """Persist a colored field as one .npy per array (deterministic bytes)."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    for name, array in (("positions", field.positions),
                        ("normals", field.normals),
                        ("colors", field.colors),
                        ("confidence", field.confidence)):
        np.save(dirpath / f"{name}.npy", array)
    return dirpath


def load_field(dirpath) -> SurfaceColorField:
    """Read a field saved by save_field / run_pipeline."""
    dirpath = Path(dirpath)
    arrays = {}
    for name in ("positions", "normals", "colors", "confidence"):
        path = dirpath / f"{name}.npy"
        if not path.exists():
            raise FusionError(f"missing field array {path}")
        arrays[name] = np.load(path)
    return SurfaceColorField(**arrays)


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _digest_tree(root: Path, exclude=()) -> dict:
    digests = {}
    for path in sorted(root.rglob("*")):
        if not path.is_file():
            continue
        rel = path.relative_to(root).as_posix()
        if rel in exclude:
            continue
        digests[rel] = _sha256_file(path)
    return digests


def run_pipeline(cfg: PipelineConfig, input_path, out_dir,
                 ask=None) -> PipelineResult:
    """Run the whole repainting pipeline and write all artifacts to out_dir.

    Steps: load and normalize the asset (point clouds are surfaced first),
    plan views, paint each view through the file protocol with remapped
    initialization, fuse before each post-facade view, final fusion, then
    remesh, color transfer, export, and a manifest with content digests.

    Args:
      cfg: validated pipeline configuration.
      input_path: mesh (.obj/.ply) or point cloud (.xyz / faceless .ply).
      out_dir: output directory, created if missing.
      ask: optional callback(image) -> bool for interactive / seed-retry
        first-view confirmation.

    Returns:
      PipelineResult with the normalized mesh, fused field, final views,
      plan, colored export, and manifest.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    input_path = Path(input_path)
    mesh = normalize(_load_input(input_path))
    mesh.normals = compute_vertex_normals(mesh)
    save_ply(out / "normalized.ply", mesh)
    plan = plan_views(cfg)
    painter = _make_painter(cfg)
    base_field = sample_surface(mesh, density=cfg.sample_density, seed=cfg.seed)

    views: dict[int, PaintedView] = {}
    position_cache: dict[int, tuple] = {}
    seeds: dict[int, list] = {}
    timings = []
    field = None
    stage = 0

    for pv in plan.views:
        t0 = time.perf_counter()
        if pv.fuse_before and views:
            field, replaced = _consistency_pass(
                cfg, base_field, mesh, views, position_cache,
                out / "consistency" / f"stage_{stage:02d}")
            views.update(replaced)
            stage += 1
        frag = rasterize(mesh, pv.camera)
        visibility = render_visibility(mesh, pv.camera, fragments=frag)
        positions = render_position(mesh, pv.camera, fragments=frag)
        position_cache[pv.view_index] = (positions, frag.foreground)
        if pv.remap_sources:
            sources = [views[i] for i in pv.remap_sources]
            image0, mask, zones = remap_multi(
                sources, pv.camera, frag.depth,
                visibility if cfg.zoning else None,
                tol=cfg.tol, threshold=cfg.refine_threshold)
        else:
            image0 = None
            mask = np.ones((cfg.resolution, cfg.resolution), dtype=np.uint8)
            zones = None
        prompt = build_prompt(cfg.prompt_object, pv.azimuth, cfg.prompt_modifier)
        request = PaintRequest(prompt, pv.view_index, pv.camera, frag.depth,
                               mask, image0, zones, seed=cfg.seed)
        used_seeds = [request.seed]
        try:
            color = paint_view(painter, request,
                               out / "requests" / f"view_{pv.view_index:03d}",
                               timeout=cfg.painter_timeout)
            if pv.view_index == 0:
                attempt = 0
                while not confirm_initialization(
                        color, cfg.init_mode, ask=ask,
                        attempt=attempt, retries=cfg.init_retries):
                    attempt += 1
                    request = replace(request, seed=cfg.seed + attempt)
                    color = paint_view(
                        painter, request,
                        out / "requests" / f"view_000_retry{attempt}",
                        timeout=cfg.painter_timeout)
                    used_seeds.append(request.seed)
        except (PainterError, ProtocolError) as exc:
            raise type(exc)(f"view {pv.view_index}: {exc}") from exc
        views[pv.view_index] = PaintedView(pv.camera, color, frag.depth,
                                           visibility)
        seeds[pv.view_index] = used_seeds
        timings.append({"view": pv.view_index,
                        "seconds": round(time.perf_counter() - t0, 4)})

    t0 = time.perf_counter()
    field, replaced = _consistency_pass(cfg, base_field, mesh, views,
                                        position_cache,
                                        out / "consistency" / "final")
    views.update(replaced)
    final_views = [views[i] for i in sorted(views)]
    final_dir = out / "final"
    final_dir.mkdir(exist_ok=True)
    for pv, view in zip(plan.views, final_views):
        write_png(final_dir / f"view_{pv.view_index:03d}.png",
                  to_u8(np.clip(view.color, 0.0, 1.0)))
    save_field(field, out / "field")
    eval_dir = out / "eval"
    eval_dir.mkdir(exist_ok=True)
    for az in np.arange(cfg.eval_views) * (360.0 / cfg.eval_views):
        camera = camera_on_sphere(float(az), 0.0, radius=cfg.camera_radius,
                                  fov_y=cfg.fov_y, resolution=cfg.resolution)
        frag = rasterize(mesh, camera)
        positions = render_position(mesh, camera, fragments=frag)
        image = np.zeros(positions.shape)
        fg = frag.foreground
        if fg.any():
            image[fg] = field_lookup(field, positions[fg])
        write_png(eval_dir / f"view_{int(round(az)):03d}.png",
                  to_u8(np.clip(image, 0.0, 1.0)))
    remeshed = remesh_planar(mesh, target_edge=cfg.target_edge)
    asset = transfer_colors(remeshed, field)
    export_path = out / f"asset.{cfg.export_format}"
    export_colored(asset, export_path)
    timings.append({"view": "final",
                    "seconds": round(time.perf_counter() - t0, 4)})

    manifest = {
        "input": {"path": str(input_path), "sha256": _sha256_file(input_path)},
        "config": asdict(cfg),
        "plan": plan.as_dict(),
        "seeds": {str(k): seeds[k] for k in sorted(seeds)},
        "timings": timings,
        "digests": _digest_tree(out, exclude=("manifest.json",)),
    }
    manifest_path = out / "manifest.json"
    write_json(manifest_path, manifest)
    return PipelineResult(mesh, field, final_views, plan, asset, export_path,
                          manifest_path, manifest)
