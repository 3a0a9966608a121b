"""Procedural test and demo geometry.

All constructors return meshes with outward CCW winding (front faces are
counter-clockwise seen from outside) so they render correctly with backface
culling enabled.
"""

from __future__ import annotations

import numpy as np

from .geometry import Mesh, compute_vertex_normals

_CUBE_CORNERS = np.array(
    [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
     [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]], dtype=np.float64
)
# per axis-aligned face, corner indices ordered CCW from outside
_CUBE_FACES = [
    (0, 3, 2, 1),  # -z
    (4, 5, 6, 7),  # +z
    (0, 4, 7, 3),  # -x
    (1, 2, 6, 5),  # +x
    (0, 1, 5, 4),  # -y
    (3, 7, 6, 2),  # +y
]


def make_cube(size: float = 1.0, center=(0.0, 0.0, 0.0),
              split_corners: bool = False) -> Mesh:
    """Axis-aligned cube with the given edge length.

    With split_corners each face gets its own four vertices carrying the true
    face normal (24 verts); otherwise the classic shared 8-vertex cube with
    corner-averaged normals.
    """
    half = size / 2.0
    center = np.asarray(center, dtype=np.float64)
    if split_corners:
        verts, faces, normals = [], [], []
        for quad in _CUBE_FACES:
            base = len(verts)
            corners = _CUBE_CORNERS[list(quad)] * half + center
            n = np.cross(corners[1] - corners[0], corners[2] - corners[0])
            n = n / np.linalg.norm(n)
            verts.extend(corners)
            normals.extend([n] * 4)
            faces.append([base, base + 1, base + 2])
            faces.append([base, base + 2, base + 3])
        return Mesh(np.asarray(verts), np.asarray(faces), np.asarray(normals))
    verts = _CUBE_CORNERS * half + center
    faces = []
    for quad in _CUBE_FACES:
        faces.append([quad[0], quad[1], quad[2]])
        faces.append([quad[0], quad[2], quad[3]])
    mesh = Mesh(verts, np.asarray(faces))
    mesh.normals = compute_vertex_normals(mesh)
    return mesh


def make_icosphere(subdivisions: int = 3, radius: float = 1.0) -> Mesh:
    """Geodesic sphere from a subdivided icosahedron; normals point outward."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
         [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
         [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]],
        dtype=np.int64,
    )
    for _ in range(subdivisions):
        verts, faces = _subdivide(verts, faces)
        verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    # enforce outward winding (convex, centered at origin)
    v = verts[faces]
    fn = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    centroid = v.mean(axis=1)
    flip = (fn * centroid).sum(axis=1) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return Mesh(verts * radius, faces, verts.copy())


def _subdivide(verts, faces):
    verts = list(map(tuple, verts))
    midpoint: dict = {}

    def mid(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in midpoint:
            pa, pb = np.asarray(verts[a]), np.asarray(verts[b])
            verts.append(tuple((pa + pb) / 2.0))
            midpoint[key] = len(verts) - 1
        return midpoint[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        out += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.asarray(verts, dtype=np.float64), np.asarray(out, dtype=np.int64)


def make_bumpy_sphere(subdivisions: int = 4, radius: float = 0.75,
                      bump: float = 0.12, seed: int = 0) -> Mesh:
    """Smoothly perturbed sphere (~5k faces at subdivisions=4)."""
    base = make_icosphere(subdivisions, 1.0)
    rng = np.random.default_rng(seed)
    freqs = rng.uniform(1.0, 3.0, size=(4, 3))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=4)
    amps = rng.uniform(0.3, 1.0, size=4)
    p = base.vertices
    wobble = sum(
        a * np.sin(p @ f * np.pi + ph) for a, f, ph in zip(amps, freqs, phases)
    )
    wobble = wobble / np.abs(wobble).max()
    r = radius * (1.0 + bump * wobble)
    mesh = Mesh(p * r[:, None], base.faces)
    mesh.normals = compute_vertex_normals(mesh)
    return mesh


def make_quad(width: float = 1.0, height: float = 1.0, center=(0.0, 0.0, 0.0),
              normal=(0.0, 0.0, 1.0), up=(0.0, 1.0, 0.0)) -> Mesh:
    """Planar rectangle (2 triangles) facing along `normal`."""
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    u = np.asarray(up, dtype=np.float64)
    u = u - np.dot(u, n) * n
    u = u / np.linalg.norm(u)
    r = np.cross(u, n)  # so that (r, u, n) is right-handed with n out of the plane
    c = np.asarray(center, dtype=np.float64)
    hw, hh = width / 2.0, height / 2.0
    verts = np.array([c - r * hw - u * hh, c + r * hw - u * hh,
                      c + r * hw + u * hh, c - r * hw + u * hh])
    faces = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
    mesh = Mesh(verts, faces, np.tile(n, (4, 1)))
    fn = np.cross(verts[1] - verts[0], verts[2] - verts[0])
    if np.dot(fn, n) < 0:
        mesh.faces = faces[:, [0, 2, 1]]
    return mesh


def make_occluder_scene() -> Mesh:
    """Two parallel quads facing +Z: a large backdrop and a small occluder."""
    back = make_quad(1.4, 1.4, center=(0.0, 0.0, -0.3))
    front = make_quad(0.5, 0.5, center=(0.08, 0.05, 0.35))
    verts = np.concatenate([back.vertices, front.vertices])
    faces = np.concatenate([back.faces, front.faces + len(back.vertices)])
    normals = np.concatenate([back.normals, front.normals])
    return Mesh(verts, faces, normals)
