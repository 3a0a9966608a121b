"""Planar remeshing, color transfer, and colored export tests."""

import numpy as np
import pytest
from scipy.spatial import cKDTree

from repaint3d.fusion import SurfaceColorField, render_fused, sample_surface
from repaint3d.geometry import Mesh, camera_on_sphere
from repaint3d.meshio import load_mesh
from repaint3d.raster import rasterize, render_color
from repaint3d.remesh import (RemeshError, export_colored, find_planar_patches,
                              remesh_planar, transfer_colors)
from repaint3d.shapes import make_cube, make_icosphere, make_quad


def smooth_colors(points):
    p = np.asarray(points, dtype=np.float64)
    return np.stack([
        0.5 + 0.35 * np.sin(2.0 * p[:, 0]),
        0.5 + 0.35 * np.cos(2.0 * p[:, 1]),
        0.5 + 0.35 * np.sin(p[:, 0] + p[:, 2]),
    ], axis=1)


def colored_field(mesh, density, seed=0):
    base = sample_surface(mesh, density=density, seed=seed)
    return SurfaceColorField(base.positions, base.normals,
                             smooth_colors(base.positions),
                             np.ones(len(base.positions)))


def mesh_edges(mesh):
    pairs = np.sort(mesh.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    return np.unique(pairs, axis=0, return_counts=True)


def closest_on_triangles(p, a, b, c):
    # Ericson's closest-point-on-triangle, vectorized over rows
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def assign(mask, value):
        take = mask & ~done
        out[take] = value[take]
        done[take] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), a)
        assign((d3 >= 0) & (d4 <= d3), b)
        assign((d6 >= 0) & (d5 <= d6), c)
        t = (d1 / (d1 - d3))[:, None]
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t * ab)
        t = (d2 / (d2 - d6))[:, None]
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + t * ac)
        t = ((d4 - d3) / ((d4 - d3) + (d5 - d6)))[:, None]
        assign((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + t * (c - b))
        denom = (va + vb + vc)[:, None]
        assign(np.ones(len(p), dtype=bool),
               a + (vb / denom[:, 0])[:, None] * ab
               + (vc / denom[:, 0])[:, None] * ac)
    return out


def surface_distance(points, mesh, k=8, chunk=2048):
    # k nearest centroids give an upper bound; any face whose centroid ball
    # still intersects that bound is then tested exactly, so the result is
    # the true distance even for large thin faces
    tri = mesh.vertices[mesh.faces]
    centroids = tri.mean(axis=1)
    radius = np.linalg.norm(tri - centroids[:, None, :], axis=2).max(axis=1)
    tree = cKDTree(centroids)
    k = min(k, len(centroids))
    out = np.empty(len(points))
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk]
        idx = tree.query(p, k=k)[1].reshape(len(p), k)
        best = np.full(len(p), np.inf)
        for j in range(k):
            f = idx[:, j]
            cp = closest_on_triangles(p, tri[f, 0], tri[f, 1], tri[f, 2])
            best = np.minimum(best, np.linalg.norm(p - cp, axis=1))
        gap = np.linalg.norm(p[:, None, :] - centroids[None, :, :], axis=2)
        cand_p, cand_f = np.nonzero(gap - radius[None, :] < best[:, None])
        if len(cand_p):
            cp = closest_on_triangles(p[cand_p], tri[cand_f, 0],
                                      tri[cand_f, 1], tri[cand_f, 2])
            np.minimum.at(best, cand_p, np.linalg.norm(p[cand_p] - cp, axis=1))
        out[start:start + chunk] = best
    return out


def test_quad_reaches_target_edge_length():
    quad = make_quad(1.0, 1.0)
    out = remesh_planar(quad, target_edge=0.1)
    assert 100 <= len(out.faces) <= 400
    edges, counts = mesh_edges(out)
    lengths = np.linalg.norm(out.vertices[edges[:, 0]] - out.vertices[edges[:, 1]],
                             axis=1)
    assert 0.05 <= np.median(lengths[counts == 2]) <= 0.15
    # rim must stay exactly the original unit square
    boundary = edges[counts == 1]
    rim_vertices = np.unique(boundary)
    assert len(boundary) == 4 and len(rim_vertices) == 4
    corners = {tuple(v) for v in quad.vertices}
    assert {tuple(out.vertices[i]) for i in rim_vertices} == corners
    # everything stays on the plane and inside the original extent
    assert np.abs(out.vertices[:, 2]).max() <= 1e-9
    assert (np.abs(out.vertices[:, :2]) <= 0.5 + 1e-9).all()


def test_curved_mesh_unchanged():
    sphere = make_icosphere(2, 1.0)
    out = remesh_planar(sphere, target_edge=0.05)
    assert np.array_equal(out.vertices, sphere.vertices)
    assert np.array_equal(out.faces, sphere.faces)


def test_target_above_patch_size_is_noop():
    quad = make_quad(1.0, 1.0)
    out = remesh_planar(quad, target_edge=2.0)
    assert np.array_equal(out.vertices, quad.vertices)
    assert np.array_equal(out.faces, quad.faces)
    with pytest.raises(RemeshError, match="positive"):
        remesh_planar(quad, target_edge=0.0)


def test_non_manifold_patch_skipped_with_warning():
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 1.0, 0.0],
                         [0.5, -1.0, 0.0], [0.5, 2.0, 0.0]])
    faces = np.array([[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    fin = Mesh(vertices, faces)
    with pytest.warns(UserWarning, match="non-manifold"):
        out = remesh_planar(fin, target_edge=0.2)
    assert np.array_equal(out.vertices, fin.vertices)
    assert np.array_equal(out.faces, fin.faces)


def test_cube_faces_remesh_within_tolerance():
    cube = make_cube(1.0)
    assert len(find_planar_patches(cube)) == 6
    out = remesh_planar(cube, target_edge=0.1)
    assert len(out.faces) > 10 * len(cube.faces)
    # remeshing must not move the surface: symmetric sampled point-to-surface
    # distance stays within 1e-6 of the bounding-box diagonal
    diag = np.linalg.norm(cube.vertices.max(0) - cube.vertices.min(0))
    for source, target, seed in ((cube, out, 0), (out, cube, 1)):
        points = sample_surface(source, density=1e5 / 6.0, seed=seed).positions
        assert surface_distance(points, target).max() <= 1e-6 * diag


def test_transfer_colors_matches_field():
    quad = make_quad(1.0, 1.0)
    remeshed = remesh_planar(quad, target_edge=0.1)
    colored = transfer_colors(remeshed, colored_field(quad, density=5e4))
    assert colored.colors.shape == (len(remeshed.vertices), 3)
    expected = smooth_colors(remeshed.vertices)
    assert np.abs(colored.colors - expected).max() <= 4 / 255


def test_transfer_colors_constant_field_exact():
    quad = make_quad(1.0, 1.0)
    remeshed = remesh_planar(quad, target_edge=0.2)
    base = sample_surface(quad, density=2000.0, seed=3)
    color = np.array([0.2, 0.4, 0.8])
    field = SurfaceColorField(base.positions, base.normals,
                              np.tile(color, (len(base.positions), 1)),
                              np.ones(len(base.positions)))
    colored = transfer_colors(remeshed, field)
    assert np.allclose(colored.colors, color, rtol=0.0, atol=1e-12)
    with pytest.raises(RemeshError, match="uncolored"):
        transfer_colors(remeshed, base)


def test_far_vertices_take_nearest_sample_color():
    quad = make_quad(1.0, 1.0)
    vertices = np.vstack([quad.vertices,
                          [[5.0, 5.0, 5.0], [5.5, 5.0, 5.0], [5.0, 5.5, 5.0]]])
    faces = np.vstack([quad.faces, [[4, 5, 6]]])
    mesh = Mesh(vertices, faces)
    field = colored_field(quad, density=2e4, seed=1)
    with pytest.warns(UserWarning, match="far from"):
        colored = transfer_colors(mesh, field)
    _, nearest = field.tree().query(vertices[4:], k=1)
    assert np.array_equal(colored.colors[4:], field.colors[nearest])
    near_expected = smooth_colors(vertices[:4])
    assert np.abs(colored.colors[:4] - near_expected).max() <= 4 / 255


def test_colored_export_round_trips(tmp_path):
    quad = make_quad(1.0, 1.0)
    remeshed = remesh_planar(quad, target_edge=0.15)
    colored = transfer_colors(remeshed, colored_field(quad, density=2e4, seed=2))
    for name in ("mesh.ply", "mesh.obj"):
        path = tmp_path / name
        export_colored(colored, path)
        back = load_mesh(path)
        assert np.allclose(back.vertices, colored.vertices, rtol=0.0, atol=1e-12)
        assert np.array_equal(back.faces, colored.faces)
        assert np.abs(back.colors - colored.colors).max() <= 1 / 255
    header = (tmp_path / "mesh.ply").read_bytes().split(b"end_header")[0]
    for channel in (b"red", b"green", b"blue"):
        assert b"property uchar " + channel in header
    with pytest.raises(RemeshError, match="no colors"):
        export_colored(remeshed, tmp_path / "plain.ply")
    with pytest.raises(RemeshError, match="format"):
        export_colored(colored, tmp_path / "mesh.stl")


def test_remeshed_preview_matches_field_render():
    quad = make_quad(0.5, 0.5)
    remeshed = remesh_planar(quad, target_edge=0.02)
    field = colored_field(quad, density=1.2e5, seed=4)
    colored = transfer_colors(remeshed, field)
    camera = camera_on_sphere(0.0, 0.0, radius=1.0, resolution=256)
    fragments = rasterize(colored, camera)
    fg = fragments.foreground
    assert fg.sum() > 5000
    mesh_image = render_color(colored, camera, fragments=fragments)
    field_image = render_fused(field, colored, camera, fragments=fragments)
    assert np.abs(mesh_image[fg] - field_image[fg]).mean() <= 6 / 255
