"""Graph topologies and the spectral operators used by graph convolutions.

Covers skeleton graphs (hand joint tree, box corner wireframe, their
block-diagonal composites), mesh graphs derived from triangle faces, and
the normalized / scaled Laplacians plus the Chebyshev feature basis that
spectral graph convolutions consume. Everything is dense float64: the
largest graph in this artifact has 2556 nodes.
"""

from __future__ import annotations

import json

import numpy as np

from .rng import Rng
from .tensor import Tensor, matmul, sub

# Hand joint ordering: wrist(0), then thumb, index, middle, ring, pinky
# chains of 4 joints each, proximal to distal.
HAND_JOINTS = 21
HAND_EDGES = tuple(
    (0, 1 + 4 * f) for f in range(5)
) + tuple(
    (1 + 4 * f + k, 2 + 4 * f + k) for f in range(5) for k in range(3)
)

# Rectangular cuboid wireframe: corners indexed by bits (x, y, z).
BOX_CORNERS = 8
BOX_EDGES = tuple(
    (i, j)
    for i in range(8)
    for j in range(i + 1, 8)
    if bin(i ^ j).count("1") == 1
)


class GraphError(Exception):
    pass


class PowerIterationError(GraphError):
    def __init__(self, residual):
        super().__init__(f"power iteration did not converge, residual {residual:.3e}")
        self.residual = residual


class GraphTopology:
    """Node count plus undirected edge set, with cached spectral operators."""

    def __init__(self, num_nodes: int, edges):
        if num_nodes <= 0:
            raise GraphError("num_nodes must be positive")
        canon = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise GraphError(f"self-loop at node {i}")
            if not (0 <= i < num_nodes and 0 <= j < num_nodes):
                raise GraphError(f"edge ({i},{j}) out of range for {num_nodes} nodes")
            canon.add((min(i, j), max(i, j)))
        self.num_nodes = int(num_nodes)
        self.edges = frozenset(canon)
        self._adjacency = None
        self._laplacian = None
        self._scaled_laplacian = None
        self._scaled_laplacian_t = None

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> np.ndarray:
        if self._adjacency is None:
            a = np.zeros((self.num_nodes, self.num_nodes))
            for i, j in self.edges:
                a[i, j] = 1.0
                a[j, i] = 1.0
            self._adjacency = a
        return self._adjacency

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1)

    def laplacian(self) -> np.ndarray:
        """Symmetric normalized Laplacian; rows of isolated nodes are zero."""
        if self._laplacian is None:
            a = self.adjacency()
            deg = a.sum(axis=1)
            inv_sqrt = np.zeros_like(deg)
            nz = deg > 0
            inv_sqrt[nz] = deg[nz] ** -0.5
            lap = -inv_sqrt[:, None] * a * inv_sqrt[None, :]
            lap[nz, nz] += 1.0
            self._laplacian = lap
        return self._laplacian

    def scaled_laplacian(self) -> np.ndarray:
        if self._scaled_laplacian is None:
            self._scaled_laplacian = scaled_laplacian(self)
        return self._scaled_laplacian

    def scaled_laplacian_tensor(self) -> Tensor:
        if self._scaled_laplacian_t is None:
            self._scaled_laplacian_t = Tensor(self.scaled_laplacian())
        return self._scaled_laplacian_t

    def offset(self, k: int) -> "GraphTopology":
        """Same topology with node indices shifted by k (helper for unions)."""
        return GraphTopology(self.num_nodes + k, [(i + k, j + k) for i, j in self.edges])

    def to_json(self) -> dict:
        return {"num_nodes": self.num_nodes, "edges": sorted(map(list, self.edges))}

    @classmethod
    def from_json(cls, obj: dict) -> "GraphTopology":
        return cls(obj["num_nodes"], obj["edges"])


def load_topology(path) -> GraphTopology:
    """Load a custom topology from a JSON edge-list file."""
    with open(path) as fh:
        return GraphTopology.from_json(json.load(fh))


def block_diagonal(parts) -> GraphTopology:
    """Union of graphs on disjoint node ranges, no cross edges."""
    edges = []
    offset = 0
    for g in parts:
        edges.extend((i + offset, j + offset) for i, j in g.edges)
        offset += g.num_nodes
    return GraphTopology(offset, edges)


class SkeletonTemplate:
    """A named keypoint graph: per-part node counts plus edge list."""

    def __init__(self, layout: str, parts, edges):
        self.layout = layout
        self.parts = list(parts)  # (name, node count) pairs in node order
        self.topology = GraphTopology(sum(n for _, n in parts), edges)

    @property
    def num_joints(self) -> int:
        return self.topology.num_nodes

    def part_slices(self) -> dict:
        out = {}
        start = 0
        for name, n in self.parts:
            out[name] = slice(start, start + n)
            start += n
        return out


def hand_skeleton() -> GraphTopology:
    return GraphTopology(HAND_JOINTS, HAND_EDGES)


def box_skeleton() -> GraphTopology:
    return GraphTopology(BOX_CORNERS, BOX_EDGES)


def build_skeleton(layout: str, hands: int = 1) -> SkeletonTemplate:
    """hand21 / box8 primitives, or their composite with 1 or 2 hands.

    The composite is block-diagonal: hand(s) first, object corners last,
    with no cross-part edges.
    """
    if layout == "hand21":
        return SkeletonTemplate("hand21", [("hand", HAND_JOINTS)], HAND_EDGES)
    if layout == "box8":
        return SkeletonTemplate("box8", [("object", BOX_CORNERS)], BOX_EDGES)
    if layout == "composite":
        if hands not in (1, 2):
            raise GraphError(f"hands must be 1 or 2, got {hands}")
        hand_names = ["hand"] if hands == 1 else ["left_hand", "right_hand"]
        parts = [(n, HAND_JOINTS) for n in hand_names] + [("object", BOX_CORNERS)]
        graph = block_diagonal([hand_skeleton()] * hands + [box_skeleton()])
        return SkeletonTemplate("composite", parts, graph.edges)
    raise GraphError(f"unknown skeleton layout '{layout}'")


def adjacency_from_faces(faces, num_vertices: int) -> GraphTopology:
    """Mesh graph: the union of the three undirected edges of every face."""
    faces = np.asarray(faces, dtype=int)
    edges = set()
    for f in faces.reshape(-1, 3):
        a, b, c = int(f[0]), int(f[1]), int(f[2])
        if a == b or b == c or a == c:
            raise GraphError(f"degenerate face {f.tolist()}")
        if max(a, b, c) >= num_vertices:
            raise GraphError(f"face {f.tolist()} exceeds vertex count {num_vertices}")
        edges.add((min(a, b), max(a, b)))
        edges.add((min(b, c), max(b, c)))
        edges.add((min(a, c), max(a, c)))
    return GraphTopology(num_vertices, edges)


def largest_laplacian_eigenvalue(lap: np.ndarray, tol: float = 1e-12,
                                 max_iters: int | None = None) -> float:
    """Block power iteration on a PSD matrix; raises on non-convergence.

    A small orthonormal block with per-step Ritz extraction resolves the
    clustered top eigenvalues that stall single-vector iteration, and
    converges well past the 1e-10 contract so downstream spectrum
    guarantees (scaled Laplacian within [-1, 1] + 1e-9) hold.
    """
    n = lap.shape[0]
    if max_iters is None:
        max_iters = max(10 * n, 100)
    block = min(n, 8)
    rng = Rng(0xC0FFEE ^ n)
    v = np.asarray(rng.normal((n, block)))
    v, _ = np.linalg.qr(v)
    lam = 0.0
    stable = 0
    for _ in range(max_iters):
        w = lap @ v
        if np.linalg.norm(w) < 1e-15:  # only the zero matrix ends here
            return 0.0
        v, _ = np.linalg.qr(w)
        ritz = v.T @ (lap @ v)
        lam_new = float(np.linalg.eigvalsh(0.5 * (ritz + ritz.T)).max())
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            stable += 1
            if stable >= 3:
                return lam_new
        else:
            stable = 0
        lam = lam_new
    ritz = v.T @ (lap @ v)
    evals, evecs = np.linalg.eigh(0.5 * (ritz + ritz.T))
    top = v @ evecs[:, -1]
    residual = float(np.linalg.norm(lap @ top - lam * top))
    if residual <= 1e-10 * max(1.0, abs(lam)):
        return lam
    raise PowerIterationError(residual)


def scaled_laplacian(graph: GraphTopology) -> np.ndarray:
    """(2 / lambda_max) L - I, spectrum in [-1, 1].

    Edgeless graphs have L = 0; lambda_max falls back to 2 by convention
    so the result is -I and Chebyshev terms stay bounded.
    """
    lap = graph.laplacian()
    if graph.num_edges == 0:
        lam = 2.0
    else:
        lam = largest_laplacian_eigenvalue(lap)
        if lam < 1e-12:
            lam = 2.0
        lam *= 1.0 + 1e-10  # estimate never undershoots the true maximum
    scaled = (2.0 / lam) * lap
    scaled[np.diag_indices_from(scaled)] -= 1.0
    return 0.5 * (scaled + scaled.T)  # exact symmetry against drift


def cheb_basis_apply(scaled_lap, x, order: int):
    """[T_0(L)X, ..., T_{K-1}(L)X] by the three-term recursion.

    Differentiable in X; the Laplacian is a constant operand. X may carry
    leading batch dimensions.
    """
    if order < 1:
        raise GraphError(f"Chebyshev order must be >= 1, got {order}")
    lap = scaled_lap if isinstance(scaled_lap, Tensor) else Tensor(scaled_lap)
    xt = x if isinstance(x, Tensor) else Tensor(x)
    if xt.shape[-2] != lap.shape[0]:
        raise GraphError(
            f"feature rows {xt.shape[-2]} != graph nodes {lap.shape[0]}")
    terms = [xt]
    if order > 1:
        terms.append(matmul(lap, xt))
    for _ in range(2, order):
        terms.append(sub(2.0 * matmul(lap, terms[-1]), terms[-2]))
    return terms
