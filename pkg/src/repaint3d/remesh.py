"""Planar isotropic remeshing, vertex color transfer, and colored export.

Curved geometry is never touched: faces are grouped into planar patches
(face normals within a degree of the seed face), each patch interior is
re-triangulated toward a target edge length with the classic split /
collapse / flip / relax loop, and the patch rim plus all non-planar faces
keep their exact vertex data.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np

from repaint3d import meshio
from repaint3d.fusion import SurfaceColorField, field_lookup
from repaint3d.geometry import Mesh, compute_vertex_normals

PLANAR_ANGLE_DEG = 1.0
DEFAULT_TARGET_EDGE = 0.01
REMESH_ITERATIONS = 5


class RemeshError(ValueError):
    pass


def _face_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    n = np.cross(vertices[faces[:, 1]] - vertices[faces[:, 0]],
                 vertices[faces[:, 2]] - vertices[faces[:, 0]])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return np.divide(n, norm, out=np.zeros_like(n), where=norm > 1e-20)


def _edge_key(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


def find_planar_patches(mesh: Mesh, angle_deg: float = PLANAR_ANGLE_DEG) -> list[np.ndarray]:
    """Group faces into planar patches by BFS over shared edges.

    A face joins a patch when its normal is within angle_deg of the seed
    face's normal. Only patches of at least two faces are returned; a lone
    face has no interior edge to remesh.
    """
    faces = mesh.faces
    normals = _face_normals(mesh.vertices, faces)
    cos_limit = np.cos(np.radians(angle_deg))

    edge_faces: dict = {}
    for fi in range(len(faces)):
        a, b, c = faces[fi]
        for u, v in ((a, b), (b, c), (c, a)):
            edge_faces.setdefault(_edge_key(u, v), []).append(fi)
    neighbors: list[list[int]] = [[] for _ in range(len(faces))]
    for group in edge_faces.values():
        for i in group:
            for j in group:
                if j != i:
                    neighbors[i].append(j)

    patches = []
    assigned = np.full(len(faces), -1)
    for seed in range(len(faces)):
        if assigned[seed] >= 0 or np.linalg.norm(normals[seed]) < 0.5:
            continue
        assigned[seed] = seed
        patch = [seed]
        queue = [seed]
        while queue:
            fi = queue.pop()
            for nj in neighbors[fi]:
                if assigned[nj] < 0 and normals[nj] @ normals[seed] >= cos_limit:
                    assigned[nj] = seed
                    patch.append(nj)
                    queue.append(nj)
        if len(patch) > 1:
            patches.append(np.array(sorted(patch)))
    return patches


def _area2(p0, p1, p2, normal) -> float:
    return float(np.cross(p1 - p0, p2 - p0) @ normal)


def _build_edges(faces: list) -> dict:
    table: dict = {}
    for fi, (a, b, c) in enumerate(faces):
        for u, v in ((a, b), (b, c), (c, a)):
            table.setdefault(_edge_key(u, v), []).append(fi)
    return table


def _third(face, a, b) -> int:
    for v in face:
        if v != a and v != b:
            return v
    raise RemeshError(f"degenerate face {face}")


def _remesh_patch(pos: list, faces: list, outside_count: dict, fixed_outside: set,
                  anchor: np.ndarray, normal: np.ndarray, target: float,
                  iterations: int) -> tuple[list, bool]:
    """Split/collapse/flip/relax loop on one planar patch.

    `pos` is the global, growable vertex position list; `faces` the patch's
    face list (vertex ids are global). Edges on the patch rim (single patch
    face, or shared with any outside face) are never altered and their
    vertices never move.
    """
    hi = 4.0 / 3.0 * target
    lo = 4.0 / 5.0 * target
    area_floor = 1e-8 * target * target
    # faces flatter than this are never produced by a split; rim edges cannot
    # be subdivided, so the cap faces over them stop refining at this height
    # instead of thinning forever
    min_height = 0.2 * target

    def project(p):
        return p - ((p - anchor) @ normal) * normal

    def height_ok(p0, p1, p2):
        area2 = abs(_area2(p0, p1, p2, normal))
        longest = max(float(np.linalg.norm(p1 - p0)),
                      float(np.linalg.norm(p2 - p1)),
                      float(np.linalg.norm(p0 - p2)))
        return longest > 0.0 and area2 / longest >= min_height

    def is_rim(key, table):
        return len(table[key]) != 2 or outside_count.get(key, 0) > 0

    def fixed_vertices(table):
        fixed = set(fixed_outside)
        for key in table:
            if is_rim(key, table):
                fixed.update(key)
        return fixed

    changed = False
    for _ in range(iterations):
        iteration_applied = 0
        # split interior edges longer than 4/3 target until none remain
        for _sweep in range(60):
            table = _build_edges(faces)
            candidates = []
            for key, adjacent in table.items():
                if len(adjacent) == 2 and outside_count.get(key, 0) == 0:
                    length = float(np.linalg.norm(pos[key[0]] - pos[key[1]]))
                    if length > hi:
                        candidates.append((-length, key))
            if not candidates:
                break
            candidates.sort()
            used = set()
            applied = 0
            for _, (a, b) in candidates:
                f1, f2 = table[(a, b)]
                if f1 in used or f2 in used:
                    continue
                mid_pos = project((pos[a] + pos[b]) / 2.0)
                if not all(height_ok(q0, q1, q2)
                           for fi in (f1, f2)
                           for w in (_third(faces[fi], a, b),)
                           for q0, q1, q2 in ((pos[a], mid_pos, pos[w]),
                                              (mid_pos, pos[b], pos[w]))):
                    continue
                used.update((f1, f2))
                mid = len(pos)
                pos.append(mid_pos)
                applied += 1
                changed = True
                for fi in (f1, f2):
                    face = faces[fi]
                    for k in range(3):
                        u, v = face[k], face[(k + 1) % 3]
                        if _edge_key(u, v) == (a, b):
                            w = face[(k + 2) % 3]
                            faces[fi] = [u, mid, w]
                            faces.append([mid, v, w])
                            break
            iteration_applied += applied
            if applied == 0:
                break

        # collapse interior edges shorter than 4/5 target
        for _sweep in range(10):
            table = _build_edges(faces)
            fixed = fixed_vertices(table)
            adjacency: dict = {}
            for u, v in table:
                adjacency.setdefault(u, set()).add(v)
                adjacency.setdefault(v, set()).add(u)
            vertex_faces: dict = {}
            for fi, face in enumerate(faces):
                for v in face:
                    vertex_faces.setdefault(v, []).append(fi)
            candidates = []
            for key, adjacent in table.items():
                if len(adjacent) == 2 and outside_count.get(key, 0) == 0:
                    length = float(np.linalg.norm(pos[key[0]] - pos[key[1]]))
                    if length < lo:
                        candidates.append((length, key))
            candidates.sort()
            touched: set = set()
            dying: set = set()
            applied = 0
            for _, (a, b) in candidates:
                if a in touched or b in touched:
                    continue
                if b not in fixed:
                    keep, drop = a, b
                elif a not in fixed:
                    keep, drop = b, a
                else:
                    continue
                apexes = {_third(faces[fi], a, b) for fi in table[(a, b)]}
                if adjacency[a] & adjacency[b] != apexes:
                    continue
                shared = set(table[(a, b)])
                valid = True
                for fi in vertex_faces[drop]:
                    if fi in shared or fi in dying:
                        continue
                    replaced = [keep if v == drop else v for v in faces[fi]]
                    if _area2(pos[replaced[0]], pos[replaced[1]],
                              pos[replaced[2]], normal) <= area_floor:
                        valid = False
                        break
                if not valid:
                    continue
                for fi in vertex_faces[drop]:
                    if fi in shared:
                        dying.add(fi)
                    else:
                        faces[fi] = [keep if v == drop else v for v in faces[fi]]
                touched.update(adjacency[drop] | {keep, drop})
                applied += 1
                changed = True
            if dying:
                faces[:] = [f for fi, f in enumerate(faces) if fi not in dying]
            iteration_applied += applied
            if applied == 0:
                break

        # flip interior edges that even out vertex valences
        for _sweep in range(2):
            table = _build_edges(faces)
            valence: dict = {}
            for u, v in table:
                valence[u] = valence.get(u, 0) + 1
                valence[v] = valence.get(v, 0) + 1
            used = set()
            created = set()
            applied = 0
            for key in sorted(table):
                if is_rim(key, table):
                    continue
                f1, f2 = table[key]
                if f1 in used or f2 in used:
                    continue
                a, b = key
                face1 = faces[f1]
                for k in range(3):
                    if _edge_key(face1[k], face1[(k + 1) % 3]) == key:
                        p, q = face1[k], face1[(k + 1) % 3]
                        c = face1[(k + 2) % 3]
                        break
                d = _third(faces[f2], a, b)
                new_key = _edge_key(c, d)
                if c == d or new_key in table or new_key in created:
                    continue
                before = sum((valence[v] - 6) ** 2 for v in (p, q, c, d))
                after = ((valence[p] - 7) ** 2 + (valence[q] - 7) ** 2
                         + (valence[c] - 5) ** 2 + (valence[d] - 5) ** 2)
                if after >= before:
                    continue
                if (_area2(pos[p], pos[d], pos[c], normal) <= area_floor or
                        _area2(pos[d], pos[q], pos[c], normal) <= area_floor):
                    continue
                faces[f1] = [p, d, c]
                faces[f2] = [d, q, c]
                used.update((f1, f2))
                created.add(new_key)
                valence[p] -= 1
                valence[q] -= 1
                valence[c] += 1
                valence[d] += 1
                applied += 1
                changed = True
            iteration_applied += applied
            if applied == 0:
                break

        # in-plane relaxation toward the one-ring centroid
        table = _build_edges(faces)
        fixed = fixed_vertices(table)
        adjacency = {}
        for u, v in table:
            adjacency.setdefault(u, set()).add(v)
            adjacency.setdefault(v, set()).add(u)
        movable = sorted(v for v in adjacency if v not in fixed)
        for _round in range(3):
            updates = {}
            for v in movable:
                ring = adjacency[v]
                centroid = sum(pos[n] for n in ring) / len(ring)
                updates[v] = project(centroid)
            for v, p in updates.items():
                pos[v] = p
        if movable:
            changed = True
        # a fixed point: no operation applied and no vertex can move, so
        # every remaining iteration would be an identical no-op
        if iteration_applied == 0 and not movable:
            break
    return faces, changed


def remesh_planar(mesh: Mesh, target_edge: float = DEFAULT_TARGET_EDGE,
                  angle_deg: float = PLANAR_ANGLE_DEG,
                  iterations: int = REMESH_ITERATIONS) -> Mesh:
    """Re-triangulate planar regions toward an isotropic target edge length.

    Non-planar faces and patch rims are preserved bit-identically; new
    vertices lie on their patch's plane. Patches whose interior is
    non-manifold are skipped with a warning.
    """
    if target_edge <= 0:
        raise RemeshError("target_edge must be positive")
    patches = find_planar_patches(mesh, angle_deg)
    if not patches:
        return Mesh(mesh.vertices.copy(), mesh.faces.copy(),
                    None if mesh.normals is None else mesh.normals.copy())

    total_count: dict = {}
    for a, b, c in mesh.faces:
        for u, v in ((a, b), (b, c), (c, a)):
            key = _edge_key(u, v)
            total_count[key] = total_count.get(key, 0) + 1

    normals = _face_normals(mesh.vertices, mesh.faces)
    vertex_face_count = np.zeros(len(mesh.vertices), dtype=np.int64)
    np.add.at(vertex_face_count, mesh.faces, 1)

    pos = [row.copy() for row in mesh.vertices]
    replaced: dict = {}
    in_changed_patch = np.zeros(len(mesh.faces), dtype=bool)
    for pi, patch in enumerate(patches):
        patch_faces = [list(map(int, mesh.faces[fi])) for fi in patch]
        patch_count = _build_edges(patch_faces)
        if any(len(v) > 2 for v in patch_count.values()):
            warnings.warn(f"skipping non-manifold planar patch of {len(patch)} faces",
                          stacklevel=2)
            continue
        outside_count = {key: total_count[key] - len(fl)
                         for key, fl in patch_count.items()
                         if total_count[key] > len(fl)}
        # a patch vertex is pinned by the outside world exactly when some
        # face beyond the patch uses it
        local_count: dict = {}
        for face in patch_faces:
            for v in face:
                local_count[v] = local_count.get(v, 0) + 1
        fixed_outside = {v for v, c in local_count.items()
                         if vertex_face_count[v] > c}
        seed = int(patch[0])
        anchor = mesh.vertices[mesh.faces[seed][0]]
        new_faces, changed = _remesh_patch(
            pos, patch_faces, outside_count, fixed_outside,
            anchor, normals[seed], target_edge, iterations)
        if changed:
            replaced[pi] = new_faces
            in_changed_patch[patch] = True

    if not replaced:
        return Mesh(mesh.vertices.copy(), mesh.faces.copy(),
                    None if mesh.normals is None else mesh.normals.copy())

    faces_out = [list(map(int, f)) for fi, f in enumerate(mesh.faces)
                 if not in_changed_patch[fi]]
    for pi in sorted(replaced):
        faces_out.extend(replaced[pi])
    faces_arr = np.asarray(faces_out, dtype=np.int64)
    used = np.unique(faces_arr)
    remap = np.full(len(pos), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    vertices_out = np.stack([pos[i] for i in used])
    out = Mesh(vertices_out, remap[faces_arr])
    out.normals = compute_vertex_normals(out)
    return out


def transfer_colors(mesh: Mesh, field: SurfaceColorField, k: int = 4) -> Mesh:
    """Color each vertex by the confidence-weighted average of k nearest
    field samples; vertices far from every sample fall back to the single
    nearest sample's color (logged)."""
    if not field.is_colored:
        raise RemeshError("cannot transfer colors from an uncolored field")
    colors = field_lookup(field, mesh.vertices, k=k)
    tree = field.tree()
    spacing = np.median(tree.query(field.positions, k=2)[0][:, 1])
    dist, nearest = tree.query(mesh.vertices, k=1)
    far = dist > 10.0 * spacing
    if far.any():
        warnings.warn(f"{int(far.sum())} vertices far from all field samples; "
                      "using nearest-sample colors", stacklevel=2)
        colors[far] = field.colors[nearest[far]]
    return Mesh(mesh.vertices.copy(), mesh.faces.copy(),
                None if mesh.normals is None else mesh.normals.copy(),
                colors)


def export_colored(mesh: Mesh, path, fmt: str | None = None) -> None:
    """Write a colored mesh as PLY (uchar RGB) or OBJ (vertex-color rows)."""
    if mesh.colors is None:
        raise RemeshError("mesh has no colors to export")
    path = Path(path)
    chosen = (fmt or path.suffix.lstrip(".")).lower()
    if chosen == "ply":
        meshio.save_ply(path, mesh)
    elif chosen == "obj":
        meshio.save_obj(path, mesh)
    else:
        raise RemeshError(f"unsupported export format: {chosen!r}")
