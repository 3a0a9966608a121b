"""Software Z-buffer rasterizer with perspective-correct interpolation.

Coverage is decided at pixel centers with a top-left fill rule so pixels on
a shared edge are owned by exactly one triangle; no antialiasing.  Faces are
processed sequentially in index order with a strict depth comparison, which
makes output deterministic and resolves exact depth ties toward the lower
face index.  Front faces wind counter-clockwise in NDC; triangles crossing
the near plane are clipped, the far plane is left unclamped (scenes here are
always well inside it).

The depth buffer stores view-space distance along the viewing axis, with
+inf as the background sentinel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera, GeometryError, Mesh
from .images import DEPTH_BACKGROUND


@dataclass
class Fragments:
    """Per-pixel rasterization output: depth, covering face, barycentrics.

    `bary` holds perspective-correct barycentric coordinates with respect to
    the covering face's original vertices (valid even for near-clipped
    faces).  `face_index` is -1 on background.
    """

    camera: Camera
    depth: np.ndarray
    face_index: np.ndarray
    bary: np.ndarray

    @property
    def foreground(self) -> np.ndarray:
        return self.face_index >= 0


def _clip_near(pts, bary, near):
    """Sutherland-Hodgman clip of a triangle against z >= near."""
    out = []
    for i in range(3):
        p0, b0 = pts[i], bary[i]
        p1, b1 = pts[(i + 1) % 3], bary[(i + 1) % 3]
        in0 = p0[2] >= near
        in1 = p1[2] >= near
        if in0:
            out.append((p0, b0))
        if in0 != in1:
            s = (near - p0[2]) / (p1[2] - p0[2])
            out.append((p0 + s * (p1 - p0), b0 + s * (b1 - b0)))
    return out


def rasterize(mesh: Mesh, camera: Camera, culling: str = "backface") -> Fragments:
    """Rasterize a mesh into per-pixel fragments.

    Args:
        mesh: triangle mesh in world space.
        camera: view to render.
        culling: "backface" skips faces winding clockwise in NDC; "none"
            renders both orientations (nearest fragment still wins).
    """
    if culling not in ("backface", "none"):
        raise GeometryError(f"unknown culling mode: {culling!r}")
    res = camera.resolution
    depth_buf = np.full((res, res), DEPTH_BACKGROUND, dtype=np.float64)
    face_buf = np.full((res, res), -1, dtype=np.int32)
    bary_buf = np.zeros((res, res, 3), dtype=np.float64)

    view = camera.world_to_view()
    pts = mesh.vertices @ view[:3, :3].T + view[:3, 3]
    t = np.tan(np.radians(camera.fov_y) / 2.0)
    near = camera.near

    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (pts[:, 0] / (t * pts[:, 2]) + 1.0) / 2.0 * res - 0.5
        sy = (1.0 - pts[:, 1] / (t * pts[:, 2])) / 2.0 * res - 0.5

    eye3 = np.eye(3)
    faces = mesh.faces
    for fi in range(len(faces)):
        idx = faces[fi]
        z3 = pts[idx, 2]
        if (z3 <= near).all():
            continue
        if (z3 < near).any():
            poly = _clip_near(pts[idx], eye3, near)
            if len(poly) < 3:
                continue
            vpos = np.stack([p for p, _ in poly])
            vbar = np.stack([b for _, b in poly])
            px = (vpos[:, 0] / (t * vpos[:, 2]) + 1.0) / 2.0 * res - 0.5
            py = (1.0 - vpos[:, 1] / (t * vpos[:, 2])) / 2.0 * res - 0.5
            zz = vpos[:, 2]
        else:
            px, py, zz, vbar = sx[idx], sy[idx], z3, eye3
        for a in range(1, len(px) - 1):
            _fill_triangle(
                (px[0], px[a], px[a + 1]),
                (py[0], py[a], py[a + 1]),
                (zz[0], zz[a], zz[a + 1]),
                (vbar[0], vbar[a], vbar[a + 1]),
                fi, culling, res, depth_buf, face_buf, bary_buf,
            )
    return Fragments(camera, depth_buf, face_buf, bary_buf)


def _fill_triangle(xs3, ys3, zs3, bars3, fi, culling, res,
                   depth_buf, face_buf, bary_buf):
    ax, bx, cx = xs3
    ay, by, cy = ys3
    # pixel space has y down, so front faces (CCW in NDC) have negative area
    area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if area == 0.0:
        return
    if area < 0.0:
        order = (0, 2, 1)
        bx, by, cx, cy = cx, cy, bx, by
    else:
        if culling == "backface":
            return
        order = (0, 1, 2)
    z0, z1, z2 = (zs3[k] for k in order)
    bar0, bar1, bar2 = (bars3[k] for k in order)

    x_lo = max(0, int(np.ceil(min(ax, bx, cx))))
    x_hi = min(res - 1, int(np.floor(max(ax, bx, cx))))
    y_lo = max(0, int(np.ceil(min(ay, by, cy))))
    y_hi = min(res - 1, int(np.floor(max(ay, by, cy))))
    if x_lo > x_hi or y_lo > y_hi:
        return

    pxg = np.arange(x_lo, x_hi + 1, dtype=np.float64)[None, :]
    pyg = np.arange(y_lo, y_hi + 1, dtype=np.float64)[:, None]

    def edge(ox, oy, qx, qy):
        # evaluate with a canonical origin (lexicographic) so the two faces
        # sharing this edge compute bit-identical values and every boundary
        # pixel is owned exactly once
        dx = qx - ox
        dy = qy - oy
        if (ox, oy) <= (qx, qy):
            e = dx * (pyg - oy) - dy * (pxg - ox)
        else:
            e = -((ox - qx) * (pyg - qy) - (oy - qy) * (pxg - qx))
        accept = (dy < 0.0) or (dy == 0.0 and dx > 0.0)
        return e, accept

    e0, acc0 = edge(bx, by, cx, cy)
    e1, acc1 = edge(cx, cy, ax, ay)
    e2, acc2 = edge(ax, ay, bx, by)
    inside = (
        ((e0 > 0.0) | ((e0 == 0.0) & acc0))
        & ((e1 > 0.0) | ((e1 == 0.0) & acc1))
        & ((e2 > 0.0) | ((e2 == 0.0) & acc2))
    )
    if not inside.any():
        return
    denom = e0 + e1 + e2
    l0 = e0 / denom
    l1 = e1 / denom
    l2 = e2 / denom
    inv_z = l0 / z0 + l1 / z1 + l2 / z2
    with np.errstate(divide="ignore"):
        zf = 1.0 / inv_z
    window = (slice(y_lo, y_hi + 1), slice(x_lo, x_hi + 1))
    better = inside & (zf < depth_buf[window])
    if not better.any():
        return
    w0 = (l0 / z0) * zf
    w1 = (l1 / z1) * zf
    w2 = (l2 / z2) * zf
    bary = w0[..., None] * bar0 + w1[..., None] * bar1 + w2[..., None] * bar2
    depth_buf[window] = np.where(better, zf, depth_buf[window])
    face_buf[window] = np.where(better, fi, face_buf[window])
    bary_buf[window] = np.where(better[..., None], bary, bary_buf[window])


def interpolate(fragments: Fragments, mesh: Mesh, values: np.ndarray,
                background: float = 0.0) -> np.ndarray:
    """Interpolate per-vertex values over foreground fragments."""
    values = np.asarray(values, dtype=np.float64)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[:, None]
    res = fragments.depth.shape
    out = np.full(res + (values.shape[1],), background, dtype=np.float64)
    fg = fragments.foreground
    if fg.any():
        corners = mesh.faces[fragments.face_index[fg]]
        b = fragments.bary[fg]
        out[fg] = np.einsum("kc,kcd->kd", b, values[corners])
    return out[..., 0] if squeeze else out


def render_depth(mesh: Mesh, camera: Camera, culling: str = "backface",
                 fragments: Fragments | None = None) -> np.ndarray:
    """Depth map (view-space distance; +inf background)."""
    frag = fragments or rasterize(mesh, camera, culling)
    return frag.depth.copy()


def render_position(mesh: Mesh, camera: Camera, culling: str = "backface",
                    fragments: Fragments | None = None) -> np.ndarray:
    """(H, W, 3) world position per pixel; NaN on background."""
    frag = fragments or rasterize(mesh, camera, culling)
    pos = interpolate(frag, mesh, mesh.vertices, background=np.nan)
    return pos


def render_visibility(mesh: Mesh, camera: Camera, culling: str = "backface",
                      fragments: Fragments | None = None) -> np.ndarray:
    """Per-pixel visibility score clamp(-n.d, 0, 1); 0 on background.

    n is the interpolated vertex normal renormalized per fragment and d the
    unit direction from the camera to the fragment.
    """
    if mesh.normals is None:
        raise GeometryError("render_visibility needs per-vertex normals")
    frag = fragments or rasterize(mesh, camera, culling)
    fg = frag.foreground
    out = np.zeros(frag.depth.shape, dtype=np.float64)
    if not fg.any():
        return out
    n = interpolate(frag, mesh, mesh.normals)[fg]
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 1e-20)
    p = interpolate(frag, mesh, mesh.vertices)[fg]
    d = p - camera.position
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    out[fg] = np.clip(-(n * d).sum(axis=1), 0.0, 1.0)
    return out


def render_color(mesh: Mesh, camera: Camera, culling: str = "backface",
                 fragments: Fragments | None = None) -> np.ndarray:
    """(H, W, 3) interpolated vertex colors; black background."""
    if mesh.colors is None:
        raise GeometryError("render_color needs per-vertex colors")
    frag = fragments or rasterize(mesh, camera, culling)
    return np.clip(interpolate(frag, mesh, mesh.colors), 0.0, 1.0)
