"""Field-aligned path tracing: the 4-nodes-per-vertex graph, shortest-path
loops and border-to-border seams, path smoothing, and stratified distances.

Graph nodes are (vertex, direction class k in {0..3}) encoded as 4*vertex + k.
Tracing edges follow a direction class along mesh edges with a drift-penalty
weight; stratum edges connect the same class across any mesh edge and carry
plain lengths (used only for path-to-path distances).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from flatpattern.crossfield import CrossField
from flatpattern.mesh import SurfacePoint, TriMesh, save_obj

DRIFT_EPS = 0.01  # epsilon_w in the edge weight
MATCH_THRESHOLD = np.pi / 4
LABEL_NONE, LABEL_ENTRANCE, LABEL_EXIT = 0, 1, 2


@dataclass
class TracePath:
    """Traced seam: vertex chain with per-step direction classes."""

    vertices: np.ndarray  # ordered vertex ids; closed paths do not repeat the first
    classes: np.ndarray  # direction class k at each vertex
    closed: bool
    length: float
    mandatory: bool = False
    samples: list = field(default_factory=list)  # SurfacePoints, filled by smoothing

    def __len__(self):
        return len(self.vertices)

    def edge_pairs(self):
        v = self.vertices
        n = len(v)
        last = n if self.closed else n - 1
        return [(int(v[i]), int(v[(i + 1) % n])) for i in range(last)]

    def edge_key_set(self) -> frozenset:
        return frozenset((min(a, b), max(a, b)) for a, b in self.edge_pairs())

    def node_ids(self) -> np.ndarray:
        return 4 * self.vertices + self.classes

    def recompute_length(self, mesh: TriMesh) -> float:
        pos = mesh.vertices[self.vertices]
        seg = pos[1:] - pos[:-1]
        total = float(np.linalg.norm(seg, axis=1).sum())
        if self.closed:
            total += float(np.linalg.norm(pos[0] - pos[-1]))
        self.length = total
        return total


@dataclass
class TraceGraph:
    """Tracing structure over a mesh + cross-field."""

    mesh: TriMesh
    vertex_dirs: np.ndarray  # (V, 4, 3)
    labels: np.ndarray  # (V, 4) int8 entrance/exit/none
    trace_csr: csr_matrix  # 4V x 4V drift-weighted, boundary rows emptied
    boundary_out: dict  # node -> list[(node, weight)] outgoing edges at boundary
    strat_csr: csr_matrix  # 4V x 4V same-class stratum graph, length weights
    _exit_field: Optional[tuple] = None  # cached reverse multi-source run

    @property
    def n_nodes(self) -> int:
        return 4 * len(self.mesh.vertices)

    def node(self, vertex: int, k: int) -> int:
        return 4 * int(vertex) + int(k) % 4

    def node_vertex(self, node: int) -> int:
        return int(node) // 4

    def node_class(self, node: int) -> int:
        return int(node) % 4

    def antipode(self, node: int) -> int:
        return 4 * (node // 4) + (node % 4 + 2) % 4

    def entrance_nodes(self) -> np.ndarray:
        return np.nonzero(self.labels.ravel() == LABEL_ENTRANCE)[0]

    def exit_nodes(self) -> np.ndarray:
        return np.nonzero(self.labels.ravel() == LABEL_EXIT)[0]


def vertex_field_directions(mesh: TriMesh, fieldobj: CrossField):
    """Interpolate the face field to vertices (pi/2-invariant complex mean)."""
    V = len(mesh.vertices)
    # vertex frames: area-weighted normals
    nrm = np.zeros((V, 3))
    w = mesh.face_areas
    for k in range(3):
        np.add.at(nrm, mesh.faces[:, k], mesh.face_normals * w[:, None])
    ln = np.linalg.norm(nrm, axis=1)
    nrm = nrm / np.maximum(ln, 1e-300)[:, None]

    # vertex tangent u: first incident face's u projected onto the vertex plane
    uvec = np.zeros((V, 3))
    seen = np.zeros(V, dtype=bool)
    for f in range(len(mesh.faces)):
        for k in range(3):
            v = mesh.faces[f, k]
            if not seen[v]:
                seen[v] = True
                t = mesh.face_frames[f, 0]
                t = t - (t @ nrm[v]) * nrm[v]
                n2 = np.linalg.norm(t)
                uvec[v] = t / n2 if n2 > 1e-12 else mesh.face_frames[f, 1]
    vvec = np.cross(nrm, uvec)

    z = np.zeros(V, dtype=np.complex128)
    d3 = fieldobj.direction(mesh, k=0)
    for k in range(3):
        vids = mesh.faces[:, k]
        d = d3 - np.einsum("ij,ij->i", d3, nrm[vids])[:, None] * nrm[vids]
        a = np.arctan2(np.einsum("ij,ij->i", d, vvec[vids]), np.einsum("ij,ij->i", d, uvec[vids]))
        np.add.at(z, vids, np.exp(4j * a))
    theta = np.angle(z) / 4.0
    theta[np.abs(z) < 1e-12] = 0.0

    dirs = np.zeros((V, 4, 3))
    for k in range(4):
        a = theta + k * np.pi / 2
        dirs[:, k] = np.cos(a)[:, None] * uvec + np.sin(a)[:, None] * vvec
    return dirs, nrm


def build_graph(mesh: TriMesh, fieldobj: CrossField) -> TraceGraph:
    """Tracing graph with drift weights and entrance/exit boundary labels."""
    V = len(mesh.vertices)
    dirs, nrm = vertex_field_directions(mesh, fieldobj)

    # directed mesh edges both ways
    e = mesh.edges
    heads = np.concatenate([e[:, 0], e[:, 1]])
    tails = np.concatenate([e[:, 1], e[:, 0]])
    vec = mesh.vertices[tails] - mesh.vertices[heads]
    elen = np.linalg.norm(vec, axis=1)
    evec = vec / np.maximum(elen, 1e-300)[:, None]

    # best class at head and tail for the edge direction
    dot_h = np.einsum("ikj,ij->ik", dirs[heads], evec)
    dot_t = np.einsum("ikj,ij->ik", dirs[tails], evec)
    k_h = np.argmax(dot_h, axis=1)
    k_t = np.argmax(dot_t, axis=1)

    mean_dir = dirs[heads, k_h] + dirs[tails, k_t]
    mn = np.linalg.norm(mean_dir, axis=1)
    mean_dir = np.where(mn[:, None] > 1e-9, mean_dir / np.maximum(mn, 1e-300)[:, None], dirs[heads, k_h])
    cos_drift = np.clip(np.einsum("ij,ij->i", evec, mean_dir), -1.0, 1.0)
    weights = elen * (DRIFT_EPS + 1.0 - cos_drift)

    src = 4 * heads + k_h
    dst = 4 * tails + k_t

    bmask = mesh.is_boundary_vertex()
    keep = ~bmask[heads]  # boundary nodes have no outgoing edges in the csr
    trace_csr = csr_matrix((weights[keep], (src[keep], dst[keep])), shape=(4 * V, 4 * V))

    boundary_out: dict = {}
    for i in np.nonzero(bmask[heads])[0]:
        boundary_out.setdefault(int(src[i]), []).append((int(dst[i]), float(weights[i])))

    # stratum graph: same class across any mesh edge, symmetric, length weights
    off = np.argmax(np.einsum("ikj,ij->ik", dirs[tails],
                              dirs[heads, 0] - np.einsum("ij,ij->i", dirs[heads, 0], nrm[tails])[:, None] * nrm[tails]),
                    axis=1)
    s_src = []
    s_dst = []
    s_w = []
    for k in range(4):
        s_src.append(4 * heads + k)
        s_dst.append(4 * tails + (off + k) % 4)
        s_w.append(elen)
    strat_csr = csr_matrix(
        (np.concatenate(s_w), (np.concatenate(s_src), np.concatenate(s_dst))), shape=(4 * V, 4 * V)
    )

    labels = np.zeros((V, 4), dtype=np.int8)
    for v in mesh.boundary_vertices():
        inc = np.nonzero((mesh.faces == v).any(axis=1))[0]
        inward = mesh.face_centroids()[inc].mean(axis=0) - mesh.vertices[v]
        inward -= (inward @ nrm[v]) * nrm[v]
        ln = np.linalg.norm(inward)
        if ln < 1e-12:
            continue
        inward /= ln
        d = dirs[v] @ inward
        k_in = int(np.argmax(d))
        k_out = int(np.argmin(d))
        if d[k_in] >= np.cos(MATCH_THRESHOLD) - 1e-6:
            labels[v, k_in] = LABEL_ENTRANCE
        if -d[k_out] >= np.cos(MATCH_THRESHOLD) - 1e-6:
            labels[v, k_out] = LABEL_EXIT

    return TraceGraph(
        mesh=mesh, vertex_dirs=dirs, labels=labels, trace_csr=trace_csr,
        boundary_out=boundary_out, strat_csr=strat_csr,
    )


# ------------------------------------------------------------------- tracing

def _walk_predecessors(pred: np.ndarray, start: int) -> list:
    out = [int(start)]
    cur = int(start)
    while pred[cur] >= 0:
        cur = int(pred[cur])
        out.append(cur)
    return out


def _nodes_to_path(graph: TraceGraph, nodes: Sequence[int], closed: bool, mandatory=False) -> TracePath:
    nodes = np.asarray(nodes, dtype=np.int64)
    verts = nodes // 4
    classes = nodes % 4
    p = TracePath(vertices=verts, classes=classes, closed=closed, length=0.0, mandatory=mandatory)
    p.recompute_length(graph.mesh)
    return p


def trace_loop(graph: TraceGraph, source: int) -> Optional[TracePath]:
    """Minimal-weight field-aligned cycle through an interior source node."""
    v = graph.node_vertex(source)
    if graph.mesh.is_boundary_vertex()[v]:
        raise ValueError("loop source must be an interior node")
    dist, pred = dijkstra(graph.trace_csr, indices=source, return_predecessors=True)
    # close the cycle through any in-edge (m -> source)
    col = graph.trace_csr.tocsc()[:, source]
    best, best_m = np.inf, -1
    for m, w in zip(col.indices, col.data):
        if m == source:
            continue
        if dist[m] + w < best:
            best, best_m = dist[m] + w, int(m)
    if not np.isfinite(best):
        return None
    chain = _walk_predecessors(pred, best_m)[::-1]  # source ... best_m
    path = _nodes_to_path(graph, chain, closed=True)
    if self_tangential(path):
        return None
    return path


def trace_border_to_border(graph: TraceGraph, source: int) -> Optional[TracePath]:
    """Minimal-weight path from an entrance node to any exit node."""
    v = graph.node_vertex(source)
    k = graph.node_class(source)
    if graph.labels[v, k] != LABEL_ENTRANCE:
        raise ValueError("source must be labeled entrance")
    dist, pred, exits = _exit_distance_field(graph)
    best, best_m = np.inf, -1
    for m, w in graph.boundary_out.get(int(source), []):
        if graph.node_vertex(m) == v:
            continue
        if w + dist[m] < best:
            best, best_m = w + dist[m], int(m)
    if not np.isfinite(best):
        return None
    nodes = [int(source)] + _walk_predecessors(pred, best_m)
    path = _nodes_to_path(graph, nodes, closed=False)
    if self_tangential(path):
        return None
    return path


def _exit_distance_field(graph: TraceGraph):
    """Multi-source reverse Dijkstra from all exit nodes (cached)."""
    if graph._exit_field is None:
        exits = graph.exit_nodes()
        if len(exits) == 0:
            n = graph.n_nodes
            graph._exit_field = (np.full(n, np.inf), np.full(n, -9999, dtype=np.int32), exits)
        else:
            rev = graph.trace_csr.T.tocsr()
            dist, pred, _src = dijkstra(rev, indices=exits, return_predecessors=True, min_only=True)
            graph._exit_field = (dist, pred, exits)
    return graph._exit_field


def self_tangential(path: TracePath) -> bool:
    """True when the path passes some vertex twice through non-orthogonal classes."""
    seen: dict = {}
    n = len(path.vertices)
    for i in range(n):
        v = int(path.vertices[i])
        k = int(path.classes[i])
        if v in seen:
            for j, k2 in seen[v]:
                if abs(i - j) <= 1 or (path.closed and abs(i - j) == n - 1):
                    continue
                if (k - k2) % 2 == 0:
                    return True
            seen[v].append((i, k))
        else:
            seen[v] = [(i, k)]
    return False


def path_direction_at(path: TracePath, i: int, mesh: TriMesh) -> np.ndarray:
    """Unit tangent of the path at sample i. Two-step chords at the ends keep
    the estimate stable against single staircase edges."""
    pos = mesh.vertices[path.vertices]
    n = len(pos)
    if path.closed:
        t = pos[(i + 1) % n] - pos[i - 1]
    elif i == 0:
        t = pos[min(2, n - 1)] - pos[0]
    elif i == n - 1:
        t = pos[-1] - pos[max(n - 3, 0)]
    else:
        t = pos[i + 1] - pos[i - 1]
    ln = np.linalg.norm(t)
    if ln < 1e-12 and n > 1:
        t = pos[min(i + 1, n - 1)] - pos[max(i - 1, 0)]
        ln = max(np.linalg.norm(t), 1e-300)
    return t / ln


# crossings closer than 30 degrees to parallel count as tangential; staircase
# discretization makes true orthogonal crossings measure as low as ~35 degrees
TANGENTIAL_COS = np.cos(np.pi / 6)


def tangential_intersection(a: TracePath, b: TracePath, mesh: TriMesh) -> bool:
    """True when the paths pass a shared vertex through non-orthogonal
    directions (their tangent lines nearly parallel)."""
    at: dict = {}
    for i, v in enumerate(a.vertices):
        at.setdefault(int(v), []).append(i)
    for j, v in enumerate(b.vertices):
        idxs = at.get(int(v))
        if idxs is None:
            continue
        db = path_direction_at(b, j, mesh)
        for i in idxs:
            da = path_direction_at(a, i, mesh)
            if abs(float(da @ db)) > TANGENTIAL_COS:
                return True
    return False


# ----------------------------------------------------------------- smoothing

def smooth_reproject(
    path: TracePath,
    session_mesh: TriMesh,
    pristine_mesh: TriMesh,
    iterations: int = 10,
    pinned: Optional[set] = None,
) -> TracePath:
    """Endpoint-pinned Laplacian smoothing of the path's vertex positions with
    reprojection onto the pristine surface. Relocates the session mesh's
    vertices in place (the path stays a vertex chain, patches stay face sets).
    """
    pinned = pinned or set()
    verts = path.vertices
    n = len(verts)
    if n < 3:
        path.samples = [_vertex_surface_point(session_mesh, int(v)) for v in verts]
        return path

    pos = session_mesh.vertices  # mutated in place
    movable = np.ones(n, dtype=bool)
    if not path.closed:
        movable[0] = movable[-1] = False
    bmask = session_mesh.is_boundary_vertex()
    for i, v in enumerate(verts):
        if int(v) in pinned or bmask[v]:
            movable[i] = False

    incident = _incident_faces(session_mesh, verts)
    tree = _CentroidLookup(pristine_mesh)

    for _ in range(iterations):
        cur = pos[verts]
        prev_i = np.roll(np.arange(n), 1)
        next_i = np.roll(np.arange(n), -1)
        target = 0.5 * (cur[prev_i] + cur[next_i])
        for i in range(n):
            if not movable[i]:
                continue
            v = int(verts[i])
            goal = 0.5 * (cur[i] + target[i])
            proj = tree.project(goal)
            step = proj - pos[v]
            # back off if incident faces would degenerate or flip
            old = pos[v].copy()
            scale = 1.0
            for _try in range(5):
                pos[v] = old + scale * step
                if _faces_ok(session_mesh, incident[i], old_pos=None):
                    break
                scale *= 0.5
            else:
                pos[v] = old
    session_mesh._build()

    path.samples = [_vertex_surface_point(session_mesh, int(v)) for v in verts]
    path.recompute_length(session_mesh)
    return path


def _vertex_surface_point(mesh: TriMesh, v: int) -> SurfacePoint:
    f = int(np.nonzero((mesh.faces == v).any(axis=1))[0][0])
    bary = [0.0, 0.0, 0.0]
    bary[int(np.where(mesh.faces[f] == v)[0][0])] = 1.0
    return SurfacePoint(f, tuple(bary))


def _incident_faces(mesh: TriMesh, verts: np.ndarray) -> list:
    out = []
    for v in verts:
        out.append(np.nonzero((mesh.faces == int(v)).any(axis=1))[0])
    return out


def _faces_ok(mesh: TriMesh, fids: np.ndarray, old_pos) -> bool:
    tri = mesh.vertices[mesh.faces[fids]]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    areas = 0.5 * np.linalg.norm(n, axis=1)
    if (areas < 1e-10).any():
        return False
    ref = mesh.face_normals[fids]
    cosang = np.einsum("ij,ij->i", n / np.maximum(2 * areas, 1e-300)[:, None], ref)
    return bool((cosang > 0.1).all())


class _CentroidLookup:
    """Closest-point projection onto a fixed mesh via a centroid KD-tree."""

    def __init__(self, mesh: TriMesh, k: int = 12):
        from scipy.spatial import cKDTree

        self.mesh = mesh
        self.tree = cKDTree(mesh.face_centroids())
        self.k = min(k, len(mesh.faces))

    def project(self, p: np.ndarray) -> np.ndarray:
        _, idx = self.tree.query(p, k=self.k)
        idx = np.atleast_1d(idx)
        _, pos = self.mesh.closest_surface_point(p, face_hint=idx)
        return pos


def total_turning(path: TracePath, mesh: TriMesh) -> float:
    pos = mesh.vertices[path.vertices]
    if path.closed:
        pos = np.vstack([pos, pos[:1]])
    seg = pos[1:] - pos[:-1]
    ln = np.linalg.norm(seg, axis=1)
    seg = seg[ln > 1e-12]
    seg = seg / np.linalg.norm(seg, axis=1)[:, None]
    d = np.einsum("ij,ij->i", seg[:-1], seg[1:])
    return float(np.arccos(np.clip(d, -1, 1)).sum())


# ------------------------------------------------------------ path distances

def path_distance(a: TracePath, b: TracePath, graph: TraceGraph) -> float:
    """Average stratified graph distance from a's nodes to path b.

    Distances propagate only through same-direction-class strata, so
    orthogonal crossings stay far while parallel paths are close. Unreachable
    strata are capped at twice the bbox diagonal.
    """
    dist = _stratum_field(graph, b)
    cap = 2.0 * graph.mesh.bbox_diagonal()
    nodes = a.node_ids()
    anti = 4 * (nodes // 4) + (nodes % 4 + 2) % 4
    d = np.minimum(dist[nodes], dist[anti])
    d = np.where(np.isfinite(d), d, cap)
    return float(d.mean())


def _stratum_field(graph: TraceGraph, b: TracePath) -> np.ndarray:
    key = ("strat", id(b), len(b.vertices))
    cache = getattr(b, "_strat_cache", None)
    if cache is not None and cache[0] == key:
        return cache[1]
    nodes = b.node_ids()
    anti = 4 * (nodes // 4) + (nodes % 4 + 2) % 4
    seeds = np.unique(np.concatenate([nodes, anti]))
    dist = dijkstra(graph.strat_csr, indices=seeds, min_only=True, directed=False)
    b._strat_cache = (key, dist)
    return dist


# ---------------------------------------------------------------------- debug

def dump_paths_obj(mesh: TriMesh, paths: Sequence[TracePath], out_path: str):
    verts = []
    lines = []
    for p in paths:
        start = len(verts)
        for v in p.vertices:
            verts.append(mesh.vertices[int(v)])
        idx = list(range(start, start + len(p.vertices)))
        if p.closed:
            idx.append(start)
        lines.append(idx)
    save_obj(out_path, np.array(verts), np.zeros((0, 3), dtype=int), lines)
