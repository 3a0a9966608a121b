"""Meshes, cameras, and scene normalization.

Conventions used across the package:

* World space is right-handed, +Y up.  A normalized scene has its bounding
  box centroid at the origin and max vertex norm 1, with the asset's up axis
  mapped to +Y and its front axis to -Z.
* Cameras sit on a sphere around the origin and look at the origin.
  Azimuth 0 / elevation 0 places the camera at (0, 0, radius); azimuth 90
  at (radius, 0, 0); positive elevation moves toward +Y.  Angles are degrees
  in every public signature, radians only inside formulas.
* Depth is the view-space distance along the viewing axis (positive in
  front of the camera).  NDC has x right and y up in [-1, 1] and z in
  [0, 1] between the near and far planes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree
from skimage import measure


class GeometryError(ValueError):
    pass


# Camera distance at which a unit-ball mesh fills ~80% of the frame height
# at the default 60 degree fov; the pipeline default for normalized input.
FRAMING_RADIUS = 2.5


@dataclass
class Mesh:
    """Triangle mesh with optional per-vertex normals and colors in [0, 1]."""

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.validate()

    def validate(self):
        n = len(self.vertices)
        if len(self.faces):
            if self.faces.min() < 0 or self.faces.max() >= n:
                raise GeometryError("face index out of range")
            f = self.faces
            if ((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])).any():
                raise GeometryError("degenerate face (repeated vertex index)")
        if self.normals is not None:
            if self.normals.shape != self.vertices.shape:
                raise GeometryError("normals shape mismatch")
            lengths = np.linalg.norm(self.normals, axis=1)
            if len(lengths) and np.abs(lengths - 1.0).max() > 1e-6:
                raise GeometryError("vertex normals must be unit length")
        if self.colors is not None:
            if self.colors.shape != self.vertices.shape:
                raise GeometryError("colors shape mismatch")

    def copy(self) -> "Mesh":
        return Mesh(
            self.vertices.copy(),
            self.faces.copy(),
            None if self.normals is None else self.normals.copy(),
            None if self.colors is None else self.colors.copy(),
        )

    def face_normals(self) -> np.ndarray:
        """Unit face normals; zero vector for zero-area faces."""
        v = self.vertices
        e1 = v[self.faces[:, 1]] - v[self.faces[:, 0]]
        e2 = v[self.faces[:, 2]] - v[self.faces[:, 0]]
        fn = np.cross(e1, e2)
        norm = np.linalg.norm(fn, axis=1, keepdims=True)
        return np.divide(fn, norm, out=np.zeros_like(fn), where=norm > 0)

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        e1 = v[self.faces[:, 1]] - v[self.faces[:, 0]]
        e2 = v[self.faces[:, 2]] - v[self.faces[:, 0]]
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def compute_vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted vertex normals (unit length; +Z fallback for isolated)."""
    v, f = mesh.vertices, mesh.faces
    weighted = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, f[:, k], weighted)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    out = np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 1e-20)
    out[norm[:, 0] <= 1e-20] = (0.0, 0.0, 1.0)
    return out


@dataclass(frozen=True)
class SceneFrame:
    """Asset orientation metadata plus optional pre-normalization transform."""

    up: tuple = (0.0, 1.0, 0.0)
    front: tuple = (0.0, 0.0, -1.0)
    center_offset: tuple = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def rotation(self) -> np.ndarray:
        """3x3 rotation taking `up` to +Y and `front` to -Z."""
        up = np.asarray(self.up, dtype=np.float64)
        front = np.asarray(self.front, dtype=np.float64)
        if np.linalg.norm(up) < 1e-12 or np.linalg.norm(front) < 1e-12:
            raise GeometryError("scene frame axes must be nonzero")
        by = up / np.linalg.norm(up)
        f = front - np.dot(front, by) * by
        if np.linalg.norm(f) < 1e-9:
            raise GeometryError("scene frame up and front are parallel")
        bz = -f / np.linalg.norm(f)
        bx = np.cross(by, bz)
        return np.stack([bx, by, bz], axis=0)


def normalize(mesh: Mesh, frame: SceneFrame | None = None) -> Mesh:
    """Rotate into the canonical frame, center, and scale to max norm 1.

    The frame's `center_offset` and `scale` are applied after rotation and
    before centering, so they act as user overrides on the raw asset.  The
    result has its bounding box centroid at the origin and max vertex norm 1
    (both within 1e-9); repeated application is a fixed point.
    """
    frame = frame or SceneFrame()
    if not frame.scale > 0:
        raise GeometryError("scene frame scale must be positive")
    rot = frame.rotation()
    verts = mesh.vertices @ rot.T
    verts = (verts + np.asarray(frame.center_offset, dtype=np.float64)) * frame.scale
    lo = verts.min(axis=0)
    hi = verts.max(axis=0)
    verts = verts - (lo + hi) / 2.0
    radius = float(np.linalg.norm(verts, axis=1).max())
    if radius <= 0:
        raise GeometryError("degenerate mesh: all vertices coincide")
    verts = verts / radius
    normals = None
    if mesh.normals is not None:
        normals = mesh.normals @ rot.T
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return Mesh(verts, mesh.faces.copy(), normals,
                None if mesh.colors is None else mesh.colors.copy())


def pointcloud_to_mesh(points, grid_size: int = 64, offset_factor: float = 2.5) -> Mesh:
    """Mesh an unoriented point cloud via an offset unsigned distance field.

    The implicit surface is d(x) - r0 where d is the distance to the nearest
    cloud point and r0 = offset_factor * mean nearest-neighbor spacing, so the
    output is a thin watertight shell hugging the cloud.  Extraction runs
    marching cubes on a grid_size^3 cube around the cloud.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 4:
        raise GeometryError("point cloud needs at least 4 points")
    centered = points - points.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-9) < 3:
        raise GeometryError("degenerate point cloud: points are coplanar")
    tree = cKDTree(points)
    nn, _ = tree.query(points, k=2)
    r0 = offset_factor * float(nn[:, 1].mean())
    if r0 <= 0:
        raise GeometryError("degenerate point cloud: duplicate points only")

    lo = points.min(axis=0)
    hi = points.max(axis=0)
    center = (lo + hi) / 2.0
    extent = float((hi - lo).max())
    cell = extent / (grid_size - 1)
    margin = 2.0 * r0 + 2.0 * cell
    half = extent / 2.0 + margin
    cell = 2.0 * half / (grid_size - 1)
    if cell > 2.0 * r0:
        raise GeometryError(
            f"grid too small to resolve offset: cell {cell:.4g} vs offset {r0:.4g}"
        )
    axes = [np.linspace(c - half, c + half, grid_size) for c in center]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    grid_pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    dist, _ = tree.query(grid_pts)
    volume = dist.reshape(grid_size, grid_size, grid_size) - r0
    verts, faces, vnormals, _ = measure.marching_cubes(volume, 0.0, spacing=(cell,) * 3)
    verts = verts + (center - half)
    n = vnormals / np.linalg.norm(vnormals, axis=1, keepdims=True)
    return Mesh(verts, faces.astype(np.int64), n)


@dataclass(frozen=True)
class Camera:
    """Perspective camera on a sphere around the origin, looking at it."""

    azimuth: float
    elevation: float = 0.0
    radius: float = 1.0
    fov_y: float = 60.0
    resolution: int = 512
    near: float = 0.01
    far: float = 10.0

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError("camera radius must be positive")
        if not 0.0 < self.fov_y < 180.0:
            raise GeometryError("fov_y must be in (0, 180)")
        if self.resolution < 1:
            raise GeometryError("resolution must be >= 1")
        if not 0.0 < self.near < self.far:
            raise GeometryError("require 0 < near < far")

    @property
    def position(self) -> np.ndarray:
        az = np.radians(self.azimuth)
        el = np.radians(self.elevation)
        return self.radius * np.array(
            [np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)]
        )

    def basis(self):
        """Right-handed (right, up, forward) view basis; forward points at the origin."""
        eye = self.position
        fwd = -eye / np.linalg.norm(eye)
        hint = np.array([0.0, 1.0, 0.0])
        side = np.cross(fwd, hint)
        if np.linalg.norm(side) < 1e-9:
            hint = np.array([0.0, 0.0, -1.0 if fwd[1] < 0 else 1.0])
            side = np.cross(fwd, hint)
        side = side / np.linalg.norm(side)
        up = np.cross(side, fwd)
        return side, up, fwd

    def world_to_view(self) -> np.ndarray:
        """4x4 mapping world points to (right, up, depth) view coordinates."""
        side, up, fwd = self.basis()
        eye = self.position
        m = np.eye(4)
        m[0, :3], m[1, :3], m[2, :3] = side, up, fwd
        m[:3, 3] = -m[:3, :3] @ eye
        return m

    def camera_to_world(self) -> np.ndarray:
        """4x4 pose (inverse of world_to_view) with -Z as the viewing axis."""
        side, up, fwd = self.basis()
        m = np.eye(4)
        m[:3, 0], m[:3, 1], m[:3, 2] = side, up, -fwd
        m[:3, 3] = self.position
        return m

    def projection(self) -> np.ndarray:
        """4x4 view -> NDC projection (square aspect, z in [0, 1])."""
        t = np.tan(np.radians(self.fov_y) / 2.0)
        n, f = self.near, self.far
        m = np.zeros((4, 4))
        m[0, 0] = 1.0 / t
        m[1, 1] = 1.0 / t
        m[2, 2] = f / (f - n)
        m[2, 3] = -f * n / (f - n)
        m[3, 2] = 1.0
        return m

    def world_to_ndc(self) -> np.ndarray:
        return self.projection() @ self.world_to_view()

    def view_depth(self, points) -> np.ndarray:
        _, _, fwd = self.basis()
        return (np.asarray(points, dtype=np.float64) - self.position) @ fwd

    def project(self, points) -> np.ndarray:
        """World points (n, 3) to NDC (n, 3); points behind the eye get NaN."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
        clip = hom @ self.world_to_ndc().T
        w = clip[:, 3:4]
        with np.errstate(divide="ignore", invalid="ignore"):
            ndc = np.where(w > 1e-12, clip[:, :3] / w, np.nan)
        return ndc

    def unproject(self, px, py, depth) -> np.ndarray:
        """Pixel coordinates plus view depth back to world points."""
        x_ndc, y_ndc = self.pixel_to_ndc(px, py)
        t = np.tan(np.radians(self.fov_y) / 2.0)
        d = np.asarray(depth, dtype=np.float64)
        side, up, fwd = self.basis()
        view = (
            (x_ndc * t * d)[..., None] * side
            + (y_ndc * t * d)[..., None] * up
            + d[..., None] * fwd
        )
        return self.position + view

    def pixel_to_ndc(self, px, py):
        r = self.resolution
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        return 2.0 * (px + 0.5) / r - 1.0, 1.0 - 2.0 * (py + 0.5) / r

    def ndc_to_pixel(self, x_ndc, y_ndc):
        r = self.resolution
        px = (np.asarray(x_ndc, dtype=np.float64) + 1.0) / 2.0 * r - 0.5
        py = (1.0 - np.asarray(y_ndc, dtype=np.float64)) / 2.0 * r - 0.5
        return px, py

    def depth_to_ndc_z(self, depth):
        n, f = self.near, self.far
        d = np.asarray(depth, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            return f * (d - n) / (d * (f - n))

    def ndc_z_to_depth(self, z_ndc):
        n, f = self.near, self.far
        z = np.asarray(z_ndc, dtype=np.float64)
        denom = f - z * (f - n)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(np.abs(denom) > 1e-300, f * n / denom, np.inf)

    def with_resolution(self, resolution: int) -> "Camera":
        return replace(self, resolution=resolution)


def camera_on_sphere(
    azimuth: float,
    elevation: float = 0.0,
    radius: float = 1.0,
    fov_y: float = 60.0,
    resolution: int = 512,
) -> Camera:
    """Camera at the given spherical angles (degrees), looking at the origin."""
    return Camera(azimuth=azimuth, elevation=elevation, radius=radius,
                  fov_y=fov_y, resolution=resolution)
