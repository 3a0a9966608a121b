"""Multi-view color reconciliation on the object surface.

Painted views rarely agree exactly where they overlap. Instead of fitting a
radiance field, colors are fused into a view-invariant field of surface
samples: each sample collects color votes from every view that sees it,
weighted by how head-on that view observes the surface. Renders then look
the fused colors up by nearest samples, so any two cameras see identical
surface colors by construction.
"""

from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Camera, Mesh
from .images import (
    decode_depth,
    encode_depth,
    read_json,
    read_png,
    sample_bilinear,
    to_u8,
    to_unit,
    write_json,
    write_png,
)
from .raster import render_position, render_visibility, rasterize

DEPTH_TEST_TOL = 5e-3
WEIGHT_POWER = 2
RENDER_NEIGHBORS = 4
DEFAULT_DENSITY = 2e5 / (4.0 * np.pi)  # 200k samples on a unit sphere


class FusionError(RuntimeError):
    pass


@dataclass
class PaintedView:
    """One painted image with the camera and geometry buffers that made it."""

    camera: Camera
    color: np.ndarray
    depth: np.ndarray
    visibility: np.ndarray


@dataclass
class SurfaceColorField:
    """Point samples on the mesh surface, optionally colored.

    colors and confidence stay None until fuse_views assigns them.
    """

    positions: np.ndarray
    normals: np.ndarray
    colors: np.ndarray | None = None
    confidence: np.ndarray | None = None
    _tree: object = dataclass_field(default=None, repr=False, compare=False)

    @property
    def is_colored(self) -> bool:
        return self.colors is not None

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.positions)
        return self._tree


def sample_surface(mesh: Mesh, density: float = DEFAULT_DENSITY,
                   seed: int = 0) -> SurfaceColorField:
    """Draw area-weighted uniform samples on the mesh surface.

    The sample count is round(density * total_area); faces receive counts
    multinomially by area and samples are placed uniformly within each face.

    Args:
      mesh: source geometry.
      density: expected samples per unit surface area.
      seed: sampling seed.

    Returns:
      uncolored SurfaceColorField with unit normals from the faces.
    """
    areas = mesh.face_areas()
    total = float(areas.sum())
    if total <= 0.0:
        raise FusionError("mesh has zero surface area")
    n = int(round(density * total))
    if n < 1:
        raise FusionError(f"density {density} yields no samples on area {total}")
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n, areas / total)
    face_idx = np.repeat(np.arange(len(areas)), counts)
    # sqrt reshaping makes (u, v) uniform over the triangle
    u = np.sqrt(rng.uniform(size=n))
    v = rng.uniform(size=n)
    bary = np.stack([1.0 - u, u * (1.0 - v), u * v], axis=1)
    tri = mesh.vertices[mesh.faces[face_idx]]
    positions = np.einsum("nk,nkd->nd", bary, tri)
    fn = mesh.face_normals()
    return SurfaceColorField(positions, fn[face_idx])


def fuse_views(field: SurfaceColorField, views: list[PaintedView],
               tol: float = DEPTH_TEST_TOL,
               weight_power: float = WEIGHT_POWER) -> SurfaceColorField:
    """Color surface samples by weighted votes from all views that see them.

    A view sees a sample when the sample projects inside the frame and the
    view's depth there matches the sample's distance within tol. Votes are
    weighted by sampled visibility^weight_power; contributions are summed in
    a canonical sorted order so the result is bit-identical under any view
    ordering. Samples seen by no view get confidence 0 and inherit the
    nearest colored sample's color.

    Returns:
      new SurfaceColorField sharing positions/normals, with colors set.
    """
    if not views:
        raise FusionError("empty view set")
    res = views[0].camera.resolution
    for view in views:
        if view.camera.resolution != res or view.color.shape != (res, res, 3):
            raise FusionError("views must share one resolution")
    pts = field.positions
    n = len(pts)
    weights = np.zeros((len(views), n))
    colors = np.zeros((len(views), n, 3))
    margin = 1.0 - 1.0 / res
    for vi, view in enumerate(views):
        cam = view.camera
        ndc = cam.project(pts)
        with np.errstate(invalid="ignore"):
            inside = (np.abs(ndc[:, 0]) <= margin) & (np.abs(ndc[:, 1]) <= margin)
        inside &= np.isfinite(ndc).all(axis=1)
        if not inside.any():
            continue
        px, py = cam.ndc_to_pixel(ndc[inside, 0], ndc[inside, 1])
        depth_map = np.where(np.isfinite(view.depth), view.depth, 1e9)
        seen_depth = sample_bilinear(depth_map, px, py)
        true_depth = cam.view_depth(pts[inside])
        visible = np.abs(seen_depth - true_depth) <= tol
        vis = sample_bilinear(view.visibility, px, py)
        w = np.where(visible, np.clip(vis, 0.0, None) ** weight_power, 0.0)
        idx = np.nonzero(inside)[0]
        weights[vi, idx] = w
        colors[vi, idx] = sample_bilinear(view.color, px, py) * visible[:, None]

    # canonical contribution order: view permutations must not change a bit
    v_count = len(views)
    sample_key = np.repeat(np.arange(n), v_count)
    wf = weights.T.reshape(-1)
    cf = colors.transpose(1, 0, 2).reshape(-1, 3)
    order = np.lexsort((cf[:, 2], cf[:, 1], cf[:, 0], wf, sample_key))
    w_sorted = wf[order].reshape(n, v_count)
    c_sorted = cf[order].reshape(n, v_count, 3)
    conf = w_sorted.sum(axis=1)
    summed = (w_sorted[:, :, None] * c_sorted).sum(axis=1)

    out = np.zeros((n, 3))
    seen = conf > 0.0
    if not seen.any():
        raise FusionError("no surface sample is visible in any view")
    out[seen] = summed[seen] / conf[seen, None]
    if (~seen).any():
        tree = cKDTree(pts[seen])
        _, nearest = tree.query(pts[~seen], k=1)
        out[~seen] = out[seen][nearest]
    return SurfaceColorField(field.positions, field.normals, out, conf)


def field_lookup(field: SurfaceColorField, points: np.ndarray,
                 k: int = RENDER_NEIGHBORS) -> np.ndarray:
    """Confidence-weighted average color of the k nearest field samples."""
    if not field.is_colored:
        raise FusionError("field has no colors yet")
    k = min(k, len(field.positions))
    _, idx = field.tree().query(points, k=k)
    idx = idx.reshape(len(points), k)
    conf = field.confidence[idx]
    cols = field.colors[idx]
    total = conf.sum(axis=1)
    flat = total <= 0.0
    safe = np.where(flat, 1.0, total)
    out = (conf[:, :, None] * cols).sum(axis=1) / safe[:, None]
    if flat.any():
        out[flat] = cols[flat].mean(axis=1)
    return out


def render_fused(field: SurfaceColorField, mesh: Mesh, camera: Camera,
                 k: int = RENDER_NEIGHBORS, fragments=None) -> np.ndarray:
    """Render the mesh with colors looked up from the fused field."""
    pos = render_position(mesh, camera, fragments=fragments)
    fg = np.isfinite(pos[..., 0])
    image = np.zeros(pos.shape)
    if fg.any():
        image[fg] = field_lookup(field, pos[fg], k=k)
    return image


def export_nerf_dataset(views: list[PaintedView], dirpath) -> Path:
    """Write images, quantized depth, and a camera manifest for NeRF tools.

    Layout: images/frame_XXX.png, depth/frame_XXX.png (16-bit, range in the
    manifest), transforms.json with frames[] of {file_path, depth_path,
    transform_matrix (camera to world), fov_y, resolution, depth_min,
    depth_max}.
    """
    if not views:
        raise FusionError("empty view set")
    dirpath = Path(dirpath)
    (dirpath / "images").mkdir(parents=True, exist_ok=True)
    (dirpath / "depth").mkdir(parents=True, exist_ok=True)
    frames = []
    for i, view in enumerate(views):
        name = f"frame_{i:03d}.png"
        write_png(dirpath / "images" / name, to_u8(view.color))
        codes, dmin, dmax = encode_depth(view.depth)
        write_png(dirpath / "depth" / name, codes)
        frames.append({
            "file_path": f"images/{name}",
            "depth_path": f"depth/{name}",
            "transform_matrix": view.camera.camera_to_world().tolist(),
            "fov_y": view.camera.fov_y,
            "resolution": view.camera.resolution,
            "depth_min": dmin,
            "depth_max": dmax,
        })
    write_json(dirpath / "transforms.json", {"frames": frames})
    return dirpath


def import_nerf_renders(dirpath, cameras: list[Camera],
                        mesh: Mesh) -> list[PaintedView]:
    """Read one render per expected camera back into painted views.

    Depth and visibility are re-rendered from the mesh (the external tool
    owns only colors); each color file must exist at the exported location
    and match the camera resolution.
    """
    dirpath = Path(dirpath)
    manifest_path = dirpath / "transforms.json"
    if not manifest_path.exists():
        raise FusionError(f"missing {manifest_path}")
    frames = read_json(manifest_path)["frames"]
    if len(frames) != len(cameras):
        raise FusionError(f"manifest has {len(frames)} frames for "
                          f"{len(cameras)} cameras")
    views = []
    for i, (frame, cam) in enumerate(zip(frames, cameras)):
        path = dirpath / frame["file_path"]
        if not path.exists():
            raise FusionError(f"missing render for view {i}: {path}")
        color = read_png(path)
        if color.shape != (cam.resolution, cam.resolution, 3):
            raise FusionError(f"view {i} resolution {color.shape[:2]} != "
                              f"{cam.resolution}")
        pose = np.asarray(frame["transform_matrix"])
        if np.abs(pose - cam.camera_to_world()).max() > 1e-9:
            raise FusionError(f"view {i} pose does not match the expected camera")
        frag = rasterize(mesh, cam)
        visibility = render_visibility(mesh, cam, fragments=frag)
        views.append(PaintedView(cam, to_unit(color), frag.depth, visibility))
    return views


def load_exported_views(dirpath, cameras: list[Camera]) -> list[PaintedView]:
    """Round-trip reader for export_nerf_dataset output (depth from files)."""
    dirpath = Path(dirpath)
    frames = read_json(dirpath / "transforms.json")["frames"]
    if len(frames) != len(cameras):
        raise FusionError("camera count mismatch")
    views = []
    for frame, cam in zip(frames, cameras):
        color = to_unit(read_png(dirpath / frame["file_path"]))
        codes = read_png(dirpath / frame["depth_path"])
        depth = decode_depth(codes, frame["depth_min"], frame["depth_max"])
        visibility = np.zeros_like(depth)
        views.append(PaintedView(cam, color, depth, visibility))
    return views
