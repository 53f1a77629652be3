"""Triangle mesh type, OBJ/PLY round-trip IO, icosphere generation, and
geometry helpers (surface sampling, point-to-surface distance, the toy
hand template).

Vertices are float64 (x, y, z); faces are integer triples with
counter-clockwise outward orientation; canonical templates are closed
2-manifolds with Euler characteristic 2.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .rng import Rng

GOLDEN = (1.0 + 5.0 ** 0.5) / 2.0


class MeshError(Exception):
    pass


class Mesh:
    def __init__(self, vertices, faces, colors=None):
        self.vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        self.colors = None if colors is None else np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        self.validate()

    def validate(self):
        v = len(self.vertices)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= v):
            raise MeshError(f"face index out of range for {v} vertices")
        f = self.faces
        if len(f) and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise MeshError("degenerate face with repeated vertex index")
        if self.colors is not None:
            if len(self.colors) != v:
                raise MeshError("per-vertex colors must match vertex count")
            if self.colors.min() < -1e-9 or self.colors.max() > 1 + 1e-9:
                raise MeshError("vertex colors must lie in [0, 1]")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def copy(self) -> "Mesh":
        return Mesh(self.vertices.copy(), self.faces.copy(),
                    None if self.colors is None else self.colors.copy())

    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted pairs, shape (E, 2)."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [0, 2]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self) -> int:
        return self.num_vertices - len(self.edges()) + self.num_faces

    def edge_face_counts(self) -> dict:
        counts = defaultdict(int)
        for a, b, c in self.faces:
            counts[(min(a, b), max(a, b))] += 1
            counts[(min(b, c), max(b, c))] += 1
            counts[(min(a, c), max(a, c))] += 1
        return counts

    def is_closed_manifold(self) -> bool:
        counts = self.edge_face_counts()
        return bool(counts) and all(v == 2 for v in counts.values())

    def face_normals(self, normalized: bool = True) -> np.ndarray:
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        if normalized:
            norms = np.linalg.norm(n, axis=1, keepdims=True)
            n = n / np.maximum(norms, 1e-300)
        return n

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(normalized=False), axis=1)

    def volume(self) -> float:
        """Signed volume; positive for outward CCW orientation."""
        v = self.vertices
        f = self.faces
        return float(np.einsum("ij,ij->i", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]])).sum() / 6.0)


# ---------------------------------------------------------------------------
# OBJ / PLY IO


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_obj(path, mesh: Mesh):
    lines = []
    if mesh.colors is None:
        for v in mesh.vertices:
            lines.append(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
    else:
        for v, c in zip(mesh.vertices, mesh.colors):
            lines.append(
                f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])} {_fmt(c[0])} {_fmt(c[1])} {_fmt(c[2])}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> Mesh:
    verts, colors, faces = [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "v":
                    if len(parts) not in (4, 7):
                        raise ValueError(f"vertex needs 3 or 6 floats, got {len(parts) - 1}")
                    verts.append([float(x) for x in parts[1:4]])
                    if len(parts) == 7:
                        colors.append([float(x) for x in parts[4:7]])
                elif tag == "f":
                    if len(parts) != 4:
                        raise ValueError(f"face needs exactly 3 vertices, got {len(parts) - 1}")
                    faces.append([int(p.split("/")[0]) - 1 for p in parts[1:]])
            except ValueError as e:
                raise MeshError(f"{path}:{lineno}: {e}") from None
    if colors and len(colors) != len(verts):
        raise MeshError(f"{path}: {len(colors)} colored of {len(verts)} vertices")
    try:
        return Mesh(verts, faces, colors or None)
    except MeshError as e:
        raise MeshError(f"{path}: {e}") from None


def write_ply(path, mesh: Mesh):
    has_color = mesh.colors is not None
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {mesh.num_vertices}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if has_color:
        lines += ["property double red", "property double green", "property double blue"]
    lines += [f"element face {mesh.num_faces}", "property list uchar int vertex_indices", "end_header"]
    for i, v in enumerate(mesh.vertices):
        row = f"{_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}"
        if has_color:
            c = mesh.colors[i]
            row += f" {_fmt(c[0])} {_fmt(c[1])} {_fmt(c[2])}"
        lines.append(row)
    for f in mesh.faces:
        lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> Mesh:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0].strip() != "ply":
        raise MeshError(f"{path}:1: not a PLY file")
    n_vert = n_face = 0
    vertex_props = []
    current = None
    body_start = None
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise MeshError(f"{path}:{i}: only ascii PLY supported")
        elif parts[0] == "element":
            current = parts[1]
            if current == "vertex":
                n_vert = int(parts[2])
            elif current == "face":
                n_face = int(parts[2])
        elif parts[0] == "property" and current == "vertex" and parts[1] != "list":
            vertex_props.append((parts[2], parts[1]))
        elif parts[0] == "end_header":
            body_start = i
            break
    if body_start is None:
        raise MeshError(f"{path}: missing end_header")
    names = [p[0] for p in vertex_props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise MeshError(f"{path}: vertex property '{axis}' missing")
    color_names = None
    for candidate in (("red", "green", "blue"), ("r", "g", "b")):
        if all(c in names for c in candidate):
            color_names = candidate
            break
    verts = np.zeros((n_vert, 3))
    colors = np.zeros((n_vert, 3)) if color_names else None
    rows = lines[body_start:]
    if len(rows) < n_vert + n_face:
        raise MeshError(f"{path}: truncated body")
    for k in range(n_vert):
        vals = rows[k].split()
        if len(vals) < len(names):
            raise MeshError(f"{path}:{body_start + k + 1}: short vertex row")
        rec = dict(zip(names, vals))
        verts[k] = [float(rec["x"]), float(rec["y"]), float(rec["z"])]
        if color_names:
            raw = [float(rec[c]) for c in color_names]
            types = {n: t for n, t in vertex_props}
            if types[color_names[0]] in ("uchar", "uint8"):
                raw = [x / 255.0 for x in raw]
            colors[k] = raw
    faces = np.zeros((n_face, 3), dtype=np.int64)
    for k in range(n_face):
        vals = rows[n_vert + k].split()
        if int(vals[0]) != 3:
            raise MeshError(f"{path}:{body_start + n_vert + k + 1}: only triangles supported")
        faces[k] = [int(x) for x in vals[1:4]]
    return Mesh(verts, faces, colors)


def mesh_io(path, mode: str, mesh: Mesh | None = None, format: str | None = None):
    """Unified reader/writer; format inferred from the suffix when omitted."""
    fmt = format or Path(path).suffix.lstrip(".").lower()
    if fmt not in ("obj", "ply"):
        raise MeshError(f"unsupported mesh format '{fmt}'")
    if mode == "read":
        return read_obj(path) if fmt == "obj" else read_ply(path)
    if mode == "write":
        if mesh is None:
            raise MeshError("write mode needs a mesh")
        (write_obj if fmt == "obj" else write_ply)(path, mesh)
        return mesh
    raise MeshError(f"unknown mode '{mode}'")


# ---------------------------------------------------------------------------
# icosphere

_ICO_VERTS = np.array([
    (-1, GOLDEN, 0), (1, GOLDEN, 0), (-1, -GOLDEN, 0), (1, -GOLDEN, 0),
    (0, -1, GOLDEN), (0, 1, GOLDEN), (0, -1, -GOLDEN), (0, 1, -GOLDEN),
    (GOLDEN, 0, -1), (GOLDEN, 0, 1), (-GOLDEN, 0, -1), (-GOLDEN, 0, 1),
])
_ICO_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
])


def icosphere(level: int) -> Mesh:
    """Recursive 4-way subdivision of the icosahedron, reprojected to the
    unit sphere. V = 10 * 4^level + 2, F = 20 * 4^level."""
    if level < 0:
        raise MeshError("subdivision level must be >= 0")
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = [tuple(f) for f in _ICO_FACES]
    for _ in range(level):
        midpoint = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in midpoint:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return Mesh(np.array(verts), np.array(faces))


def cube_mesh(side: float = 1.0, center=(0.0, 0.0, 0.0)) -> Mesh:
    """Axis-aligned cube as 12 outward-oriented triangles."""
    h = side / 2.0
    c = np.asarray(center, dtype=np.float64)
    corners = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)]) + c
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),  # x- and x+
        (0, 4, 5, 1), (2, 3, 7, 6),  # y- and y+
        (0, 2, 6, 4), (1, 5, 7, 3),  # z- and z+
    ]
    faces = []
    for a, b, cc, d in quads:
        faces += [(a, b, cc), (a, cc, d)]
    m = Mesh(corners, faces)
    if m.volume() < 0:
        m = Mesh(corners, [(f[0], f[2], f[1]) for f in faces])
    return m


# ---------------------------------------------------------------------------
# sampling and distances


def sample_surface(mesh_or_vertices, n: int, rng: Rng, faces=None):
    """Area-weighted surface samples; returns (points, face_idx, bary).

    Barycentric weights are uniform within each face; the same (rng state)
    always yields the same sample set.
    """
    if isinstance(mesh_or_vertices, Mesh):
        verts, faces = mesh_or_vertices.vertices, mesh_or_vertices.faces
    else:
        verts = np.asarray(mesh_or_vertices)
        faces = np.asarray(faces)
    if n < 1:
        raise MeshError("need at least one sample")
    if len(faces) == 0:
        raise MeshError("mesh has no faces to sample")
    cross = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]],
                     verts[faces[:, 2]] - verts[faces[:, 0]])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    total = areas.sum()
    if total <= 0:
        raise MeshError("zero total surface area")
    face_idx = rng.choice(len(faces), size=n, p=areas / total)
    r1 = np.sqrt(rng.uniform((n,)))
    r2 = rng.uniform((n,))
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    tri = verts[faces[face_idx]]
    points = np.einsum("nk,nkd->nd", bary, tri)
    return points, face_idx, bary


def sample_points_from_faces(mesh: Mesh, n: int, seed: int) -> np.ndarray:
    pts, _, _ = sample_surface(mesh, n, Rng(seed).child("surface"))
    return pts


def points_to_triangles_distance(points, verts, faces, chunk: int = 256) -> np.ndarray:
    """Exact min distance from each point to a triangle soup (Ericson)."""
    points = np.asarray(points, dtype=np.float64)
    a = verts[faces[:, 0]]
    ab = verts[faces[:, 1]] - a
    ac = verts[faces[:, 2]] - a
    out = np.empty(len(points))
    for lo in range(0, len(points), chunk):
        p = points[lo:lo + chunk][:, None, :]  # (P,1,3)
        ap = p - a[None, :, :]
        d1 = np.einsum("fd,pfd->pf", ab, ap)
        d2 = np.einsum("fd,pfd->pf", ac, ap)
        d3 = np.einsum("fd,fd->f", ab, ab)[None, :]
        d5 = np.einsum("fd,fd->f", ac, ac)[None, :]
        dot_abac = np.einsum("fd,fd->f", ab, ac)[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            # unclamped barycentric solution of the 2x2 normal equations
            denom = d3 * d5 - dot_abac * dot_abac
            v = np.nan_to_num((d5 * d1 - dot_abac * d2) / denom)
            w = np.nan_to_num((d3 * d2 - dot_abac * d1) / denom)
            v_edge_ab = np.clip(np.nan_to_num(d1 / d3), 0.0, 1.0)
            w_edge_ac = np.clip(np.nan_to_num(d2 / d5), 0.0, 1.0)
            bc_len = d5 - 2 * dot_abac + d3
            t_edge_bc = np.clip(np.nan_to_num((d2 - d1 + d3 - dot_abac) / bc_len), 0.0, 1.0)
        inside = (v >= 0) & (w >= 0) & (v + w <= 1)
        # candidate closest points: interior solution and the three edges
        cand = []
        for vv, ww in ((np.where(inside, v, 0.0), np.where(inside, w, 0.0)),
                       (v_edge_ab, np.zeros_like(v_edge_ab)),
                       (np.zeros_like(w_edge_ac), w_edge_ac),
                       (1.0 - t_edge_bc, t_edge_bc)):
            q = a[None, :, :] + vv[..., None] * ab[None, :, :] + ww[..., None] * ac[None, :, :]
            cand.append(np.einsum("pfd,pfd->pf", p - q, p - q))
        d2min = np.where(inside, cand[0], np.minimum.reduce(cand[1:]))
        out[lo:lo + chunk] = np.sqrt(d2min.min(axis=1))
    return out


def hausdorff_to_unit_sphere(mesh: Mesh, n_samples: int = 10000, seed: int = 0) -> float:
    """Sampled two-sided Hausdorff distance between a mesh and the unit sphere."""
    rng = Rng(seed).child("hausdorff")
    pts, _, _ = sample_surface(mesh, n_samples, rng)
    mesh_to_sphere = np.abs(np.linalg.norm(pts, axis=1) - 1.0).max()
    dirs = rng.normal((n_samples, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    sphere_to_mesh = points_to_triangles_distance(dirs, mesh.vertices, mesh.faces).max()
    return float(max(mesh_to_sphere, sphere_to_mesh))


# ---------------------------------------------------------------------------
# toy hand template


def _ray_exit_ellipsoid(dirs, center, semi):
    """Largest t with (t*d - c) inside the ellipsoid, per unit direction."""
    # solve |(t d - c) / s|^2 = 1 for t, take the + root
    d = dirs / semi
    c = center / semi
    a = np.einsum("nd,nd->n", d, d)
    b = -2.0 * d @ c
    cc = c @ c - 1.0
    disc = b * b - 4 * a * cc
    t = np.full(len(dirs), -np.inf)
    ok = disc >= 0
    t[ok] = (-b[ok] + np.sqrt(disc[ok])) / (2 * a[ok])
    return t


def _segment_distance(points, p0, p1):
    seg = p1 - p0
    t = np.clip((points - p0) @ seg / (seg @ seg), 0.0, 1.0)
    closest = p0 + t[:, None] * seg
    return np.linalg.norm(points - closest, axis=1)


def _ray_exit_capsule(dirs, p0, p1, radius, t_max=4.0, iters=60):
    """Largest ray parameter still inside the capsule, by bisection.

    Distance to a segment is convex along the ray, so the exit point is
    the unique root beyond the minimizing parameter.
    """
    n = len(dirs)
    ts = np.linspace(0.0, t_max, 96)
    dists = np.stack([_segment_distance(ts[k] * dirs, p0, p1) for k in range(len(ts))], axis=1)
    inside_any = (dists <= radius).any(axis=1)
    k_min = dists.argmin(axis=1)
    lo = ts[k_min]
    hi = np.full(n, t_max)
    out = np.full(n, -np.inf)
    idx = np.where(inside_any)[0]
    lo = lo[idx]
    hi = hi[idx]
    sub_dirs = dirs[idx]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = _segment_distance(mid[:, None] * sub_dirs, p0, p1) <= radius
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    out[idx] = 0.5 * (lo + hi)
    return out


_FINGER_SPECS = [
    # (base, tip, radius): thumb then index..pinky, unit-scale hand
    ((-0.28, 0.05, 0.0), (-0.88, 0.48, 0.08), 0.14),
    ((-0.30, 0.52, 0.0), (-0.40, 1.22, 0.04), 0.115),
    ((-0.10, 0.56, 0.0), (-0.12, 1.34, 0.04), 0.12),
    ((0.10, 0.54, 0.0), (0.15, 1.26, 0.04), 0.115),
    ((0.29, 0.47, 0.0), (0.42, 1.04, 0.03), 0.10),
]
_PALM_CENTER = np.array([0.0, 0.12, 0.0])
_PALM_SEMI = np.array([0.52, 0.62, 0.20])
_WRIST = np.array([0.0, -0.38, 0.0])


def hand_joint_positions() -> np.ndarray:
    """Canonical 21 joints: wrist then 5 proximal-to-distal chains of 4."""
    joints = [_WRIST]
    for base, tip, _ in _FINGER_SPECS:
        base = np.asarray(base)
        tip = np.asarray(tip)
        for frac in (0.0, 0.4, 0.68, 0.92):
            joints.append(base + frac * (tip - base))
    return np.array(joints)


def toy_hand_mesh(seed: int = 0) -> Mesh:
    """Hand-like closed genus-0 mesh: palm ellipsoid plus five capsule
    fingers, coarsely unioned by radial ray casting onto an icosphere,
    then decimated to exactly 778 vertices."""
    from .qecd import qecd_simplify

    base = icosphere(4)
    dirs = base.vertices
    radius = _ray_exit_ellipsoid(dirs, _PALM_CENTER, _PALM_SEMI)
    for base_pt, tip, rad in _FINGER_SPECS:
        radius = np.maximum(radius, _ray_exit_capsule(dirs, np.asarray(base_pt), np.asarray(tip), rad))
    rng = Rng(seed).child("hand_bumps")
    # mild seeded asymmetry so the template is not perfectly smooth
    bump = 1.0 + 0.02 * np.sin(dirs @ rng.normal((3,), std=2.0) + rng.uniform())
    verts = dirs * (radius * bump)[:, None]
    relaxed = laplacian_smooth(Mesh(verts, base.faces.copy()), iterations=1, strength=0.4)
    return qecd_simplify(relaxed, 778)


def laplacian_smooth(mesh: Mesh, iterations: int = 1, strength: float = 0.5) -> Mesh:
    """Uniform Laplacian relaxation; topology unchanged."""
    neighbors = defaultdict(set)
    for a, b, c in mesh.faces:
        neighbors[a] |= {b, c}
        neighbors[b] |= {a, c}
        neighbors[c] |= {a, b}
    verts = mesh.vertices.copy()
    idx = [np.fromiter(neighbors[i], dtype=int) for i in range(len(verts))]
    for _ in range(iterations):
        centroids = np.stack([verts[nb].mean(axis=0) if len(nb) else verts[i]
                              for i, nb in enumerate(idx)])
        verts += strength * (centroids - verts)
    return Mesh(verts, mesh.faces.copy(), mesh.colors)
