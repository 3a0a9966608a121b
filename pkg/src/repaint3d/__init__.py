"""repaint3d: text-guided repainting of 3D assets.

Renders depth from geometry, paints views progressively with occlusion-aware
remap-then-inpaint constraints, fuses painted views into view-invariant
surface colors, and exports an isotropically remeshed, vertex-colored asset.
"""

from .geometry import (
    Camera,
    GeometryError,
    Mesh,
    SceneFrame,
    camera_on_sphere,
    compute_vertex_normals,
    normalize,
    pointcloud_to_mesh,
)
from .meshio import load_mesh, load_pointcloud, save_obj, save_ply
from .raster import (
    Fragments,
    rasterize,
    render_color,
    render_depth,
    render_position,
    render_visibility,
)

__version__ = "0.1.0"
