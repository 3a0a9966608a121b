"""Occlusion-aware backward remapping of painted views into a novel view.

The transform between two cameras sharing a projection K is the homogeneous
NDC-space map P = K E K^-1, with E the relative camera pose.  A novel-view
pixel with Z-buffer depth is carried through P into the source view; the
surface point is visible there exactly when the source depth map, sampled at
the mapped location, agrees with the transformed depth.  Pixels that are not
visible anywhere must be inpainted (mask 1); visible pixels constrain the
painter, and a zoning trimap further marks pixels whose viewing angle
improves enough to be worth refining.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera, GeometryError
from .images import sample_bilinear

KEEP, REFINE, GENERATE = 0, 1, 2

DEPTH_AGREEMENT_TOL = 5e-3
REFINE_THRESHOLD = 0.1

_FAR_SENTINEL = 1e9


class RemapError(GeometryError):
    pass


@dataclass(frozen=True)
class ViewTransform:
    """Homogeneous map between the NDC spaces of two cameras."""

    matrix: np.ndarray
    cam_from: Camera
    cam_to: Camera

    def inverse(self) -> "ViewTransform":
        return ViewTransform(np.linalg.inv(self.matrix), self.cam_to, self.cam_from)

    def apply(self, ndc):
        """Map NDC points (..., 3); returns (mapped ndc, positive-w flag)."""
        ndc = np.asarray(ndc, dtype=np.float64)
        hom = np.concatenate([ndc, np.ones(ndc.shape[:-1] + (1,))], axis=-1)
        out = hom @ self.matrix.T
        w = out[..., 3]
        ok = w > 1e-12
        safe_w = np.where(ok, w, 1.0)
        return out[..., :3] / safe_w[..., None], ok


def relative_ndc_transform(cam_prev: Camera, cam_novel: Camera) -> ViewTransform:
    """NDC-to-NDC transform taking cam_prev coordinates to cam_novel.

    Both cameras must share the projection (fov and near/far planes); the
    relative pose E goes through world space, so radii and angles are free.
    """
    for attr in ("fov_y", "near", "far"):
        if getattr(cam_prev, attr) != getattr(cam_novel, attr):
            raise RemapError(f"cameras must share projection ({attr} differs)")
    k = cam_novel.projection()
    pose = cam_novel.world_to_view() @ np.linalg.inv(cam_prev.world_to_view())
    matrix = k @ pose @ np.linalg.inv(cam_prev.projection())
    if not np.isfinite(matrix).all():
        raise RemapError("singular projection")
    return ViewTransform(matrix, cam_prev, cam_novel)


@dataclass
class XYMap:
    """Per-pixel source-view lookup produced by compute_xy_map.

    x, y hold source-view NDC coordinates for each novel-view pixel and
    depth_prev the depth the surface point should have in the source view.
    valid is False on background, behind-camera points, and samples landing
    within half a pixel of (or beyond) the source image border.
    """

    x: np.ndarray
    y: np.ndarray
    depth_prev: np.ndarray
    valid: np.ndarray
    cam_to: Camera


def compute_xy_map(novel_depth, transform: ViewTransform) -> XYMap:
    """Backward lookup map from a novel view's Z-buffer into a source view.

    `transform` must map the novel camera's NDC into the source camera's
    (i.e. relative_ndc_transform(novel_cam, source_cam)).
    """
    cam = transform.cam_from
    target = transform.cam_to
    depth = np.asarray(novel_depth, dtype=np.float64)
    h, w = depth.shape
    if (h, w) != (cam.resolution, cam.resolution):
        raise RemapError("novel depth resolution does not match camera")
    fg = np.isfinite(depth)
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
    x_ndc, y_ndc = cam.pixel_to_ndc(cols, rows)
    z_ndc = cam.depth_to_ndc_z(np.where(fg, depth, cam.far))
    mapped, w_ok = transform.apply(np.stack([x_ndc, y_ndc, z_ndc], axis=-1))
    x_prev = mapped[..., 0]
    y_prev = mapped[..., 1]
    depth_prev = target.ndc_z_to_depth(mapped[..., 2])
    margin = 1.0 / target.resolution  # half a pixel in ndc units
    valid = (
        fg & w_ok
        & (np.abs(x_prev) <= 1.0 - margin)
        & (np.abs(y_prev) <= 1.0 - margin)
        & (depth_prev > target.near)
        & (depth_prev < target.far)
    )
    return XYMap(x_prev, y_prev, depth_prev, valid, target)


def backward_remap(prev_image, xy_map: XYMap) -> np.ndarray:
    """Bilinearly pull source-view pixels through the map; invalid pixels 0."""
    img = np.asarray(prev_image, dtype=np.float64)
    px, py = xy_map.cam_to.ndc_to_pixel(xy_map.x, xy_map.y)
    out = sample_bilinear(img, px, py)
    if img.ndim == 3:
        out[~xy_map.valid] = 0.0
    else:
        out = np.where(xy_map.valid, out, 0.0)
    return out


def sample_source_map(values, xy_map: XYMap, fill: float = 0.0) -> np.ndarray:
    """Sample a single-channel source-view map at the xy locations."""
    px, py = xy_map.cam_to.ndc_to_pixel(xy_map.x, xy_map.y)
    out = sample_bilinear(np.asarray(values, dtype=np.float64), px, py)
    return np.where(xy_map.valid, out, fill)


def occlusion_mask(prev_depth, xy_map: XYMap,
                   tol: float = DEPTH_AGREEMENT_TOL) -> np.ndarray:
    """Inpainting mask: 1 where the surface point is not visible in the source.

    A pixel is visible (mask 0) iff its lookup is valid and the source depth
    map, bilinearly sampled at the mapped location, matches the transformed
    depth within tol (view-space units).  Background in the source depth map
    acts as an infinitely far surface, so silhouette lookups disagree.
    """
    depth = np.asarray(prev_depth, dtype=np.float64)
    finite = np.where(np.isfinite(depth), depth, _FAR_SENTINEL)
    sampled = sample_source_map(finite, xy_map, fill=_FAR_SENTINEL)
    agree = np.abs(sampled - xy_map.depth_prev) <= tol
    return np.where(xy_map.valid & agree, 0, 1).astype(np.uint8)


def zoning(mask, vis_prev, vis_novel,
           threshold: float = REFINE_THRESHOLD) -> np.ndarray:
    """Trimap from the inpainting mask and visibility scores.

    Masked pixels must be generated regardless of scores; unmasked pixels
    are refined when the novel view sees the surface better by more than
    `threshold`, and kept otherwise.
    """
    mask = np.asarray(mask)
    zones = np.full(mask.shape, KEEP, dtype=np.uint8)
    refine = (mask == 0) & (np.asarray(vis_novel) > np.asarray(vis_prev) + threshold)
    zones[refine] = REFINE
    zones[mask == 1] = GENERATE
    return zones


def remap_multi(sources, novel_camera: Camera, novel_depth,
                novel_visibility=None, tol: float = DEPTH_AGREEMENT_TOL,
                threshold: float = REFINE_THRESHOLD):
    """Combine several painted source views into one constraint image.

    Every pixel takes its color from the visible source whose surface is
    seen most head-on there (ties go to the earlier source).  Returns
    (image, mask, zones); zones is None when novel_visibility is None.

    Args:
        sources: sequence of painted views exposing .camera, .color, .depth
            and .visibility attributes.
        novel_camera: camera of the view being painted.
        novel_depth: Z-buffer of the novel view.
        novel_visibility: visibility map of the novel view, for zoning.
    """
    if not sources:
        raise RemapError("remap_multi needs at least one source view")
    h = w = novel_camera.resolution
    n = len(sources)
    remaps = np.zeros((n, h, w, 3))
    vis_src = np.full((n, h, w), -1.0)
    visible = np.zeros((n, h, w), dtype=bool)
    for i, src in enumerate(sources):
        transform = relative_ndc_transform(novel_camera, src.camera)
        xy = compute_xy_map(novel_depth, transform)
        m = occlusion_mask(src.depth, xy, tol)
        remaps[i] = backward_remap(src.color, xy)
        visible[i] = m == 0
        vis_src[i] = np.where(visible[i],
                              sample_source_map(src.visibility, xy), -1.0)
    any_visible = visible.any(axis=0)
    mask = np.where(any_visible, 0, 1).astype(np.uint8)
    choice = vis_src.argmax(axis=0)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    image = remaps[choice, rows, cols]
    image[~any_visible] = 0.0
    zones = None
    if novel_visibility is not None:
        vis_prev = np.where(any_visible, vis_src[choice, rows, cols], 0.0)
        zones = zoning(mask, vis_prev, novel_visibility, threshold)
    return image, mask, zones
