"""Quadric edge collapse decimation for closed triangle 2-manifolds.

Greedy Garland-Heckbert simplification: per-vertex plane quadrics, a
lazy-deletion heap of edge collapse costs keyed by per-vertex version
stamps, and the usual safeguards (link condition, normal-flip and
degenerate-face rejection) so every intermediate mesh stays a closed
2-manifold. Inputs here are closed meshes, so boundary constraint
quadrics are not implemented.
"""

from __future__ import annotations

import heapq
import itertools

import numpy as np

from .mesh import Mesh, MeshError


def _vertex_quadrics(verts, faces):
    v0 = verts[faces[:, 0]]
    n = np.cross(verts[faces[:, 1]] - v0, verts[faces[:, 2]] - v0)
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    n = n / np.maximum(norms, 1e-300)
    d = -np.einsum("fd,fd->f", n, v0)
    planes = np.concatenate([n, d[:, None]], axis=1)  # (F,4)
    face_q = planes[:, :, None] * planes[:, None, :]
    q = np.zeros((len(verts), 4, 4))
    for k in range(3):
        np.add.at(q, faces[:, k], face_q)
    return q


def _solve_position(q, p1, p2):
    """Optimal collapse position for quadric q, or the best of the
    endpoints and midpoint when the 3x3 system is singular."""
    a00, a01, a02 = q[0, 0], q[0, 1], q[0, 2]
    a11, a12, a22 = q[1, 1], q[1, 2], q[2, 2]
    det = (a00 * (a11 * a22 - a12 * a12)
           - a01 * (a01 * a22 - a12 * a02)
           + a02 * (a01 * a12 - a11 * a02))
    scale = max(abs(a00), abs(a11), abs(a22), 1e-30)
    if abs(det) > 1e-10 * scale ** 3:
        b0, b1, b2 = -q[0, 3], -q[1, 3], -q[2, 3]
        x = (b0 * (a11 * a22 - a12 * a12)
             - a01 * (b1 * a22 - a12 * b2)
             + a02 * (b1 * a12 - a11 * b2)) / det
        y = (a00 * (b1 * a22 - a12 * b2)
             - b0 * (a01 * a22 - a12 * a02)
             + a02 * (a01 * b2 - b1 * a02)) / det
        z = (a00 * (a11 * b2 - b1 * a12)
             - a01 * (a01 * b2 - b1 * a02)
             + b0 * (a01 * a12 - a11 * a02)) / det
        return np.array([x, y, z])
    candidates = [p1, p2, 0.5 * (p1 + p2)]
    costs = [_quadric_cost(q, c) for c in candidates]
    return candidates[int(np.argmin(costs))]


def _quadric_cost(q, p):
    h = np.array([p[0], p[1], p[2], 1.0])
    return float(h @ q @ h)


def qecd_simplify(mesh: Mesh, target_vertices: int) -> Mesh:
    """Collapse minimum-cost edges until exactly `target_vertices` remain."""
    if target_vertices < 4:
        raise MeshError("cannot decimate a closed mesh below 4 vertices")
    if target_vertices > mesh.num_vertices:
        raise MeshError(
            f"target {target_vertices} exceeds current {mesh.num_vertices} vertices")
    if not mesh.is_closed_manifold():
        raise MeshError("decimation input must be a closed 2-manifold")
    if target_vertices == mesh.num_vertices:
        return mesh.copy()

    verts = mesh.vertices.copy()
    faces = [list(f) for f in mesh.faces]
    alive_v = np.ones(len(verts), dtype=bool)
    alive_f = np.ones(len(faces), dtype=bool)
    vert_faces = [set() for _ in range(len(verts))]
    for fid, f in enumerate(faces):
        for vi in f:
            vert_faces[vi].add(fid)
    quadrics = _vertex_quadrics(verts, mesh.faces)
    version = np.zeros(len(verts), dtype=np.int64)
    counter = itertools.count()

    def neighbors(u):
        out = set()
        for fid in vert_faces[u]:
            out.update(faces[fid])
        out.discard(u)
        return out

    def push_edge(heap, u, v):
        u, v = (u, v) if u < v else (v, u)
        q = quadrics[u] + quadrics[v]
        pos = _solve_position(q, verts[u], verts[v])
        cost = max(_quadric_cost(q, pos), 0.0)
        heapq.heappush(heap, (cost, next(counter), u, v, version[u], version[v], pos))

    heap = []
    for u, v in mesh.edges():
        push_edge(heap, int(u), int(v))

    alive_count = len(verts)
    while alive_count > target_vertices and heap:
        cost, _, u, v, ver_u, ver_v, pos = heapq.heappop(heap)
        if not (alive_v[u] and alive_v[v]):
            continue
        if version[u] != ver_u or version[v] != ver_v:
            continue
        shared = vert_faces[u] & vert_faces[v]
        if len(shared) != 2:
            continue  # edge gone, or collapse would break manifoldness
        opposite = set()
        for fid in shared:
            opposite.update(faces[fid])
        opposite -= {u, v}
        if neighbors(u) & neighbors(v) != opposite:
            continue  # link condition: non-manifold pinch
        # reject collapses that flip or squash any surviving face
        moved = (vert_faces[u] | vert_faces[v]) - shared
        ok = True
        for fid in moved:
            tri = faces[fid]
            old = [verts[i] for i in tri]
            new = [pos if i in (u, v) else verts[i] for i in tri]
            n_old = np.cross(old[1] - old[0], old[2] - old[0])
            n_new = np.cross(new[1] - new[0], new[2] - new[0])
            if np.linalg.norm(n_new) < 1e-14 or float(n_old @ n_new) <= 0.0:
                ok = False
                break
        if not ok:
            continue

        verts[u] = pos
        quadrics[u] = quadrics[u] + quadrics[v]
        for fid in shared:
            alive_f[fid] = False
            for vi in faces[fid]:
                vert_faces[vi].discard(fid)
        for fid in vert_faces[v]:
            faces[fid] = [u if i == v else i for i in faces[fid]]
            vert_faces[u].add(fid)
        vert_faces[v] = set()
        alive_v[v] = False
        version[u] += 1
        version[v] += 1
        alive_count -= 1
        for w in neighbors(u):
            push_edge(heap, u, w)

    if alive_count > target_vertices:
        raise MeshError(
            f"simplification stalled at {alive_count} vertices "
            f"(target {target_vertices}) without violating manifoldness")

    remap = -np.ones(len(verts), dtype=np.int64)
    remap[alive_v] = np.arange(alive_count)
    out_faces = np.array([[remap[i] for i in faces[fid]]
                          for fid in range(len(faces)) if alive_f[fid]], dtype=np.int64)
    out = Mesh(verts[alive_v], out_faces)
    if not out.is_closed_manifold():
        raise MeshError("internal error: decimation produced a non-manifold mesh")
    return out
