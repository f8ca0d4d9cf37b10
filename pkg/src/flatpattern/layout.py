"""Patch layout construction: greedy path insertion until goals hold, reverse
removal of redundant segments, dart creation by partial seam merging, and
symmetry-plane seam reduction.

The layout owns a mutable session mesh (path smoothing relocates vertices) and
a strict insertion order; patches are always the connected face components of
the current cut-edge set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from flatpattern.crossfield import CrossField
from flatpattern.mesh import SurfacePoint, SymmetryPlane, TriMesh, mirror_weld
from flatpattern.textile import (
    DartCorrespondence,
    GrainSpec,
    SeamPair,
    TopologyError,
    UVChart,
    Weights,
    flatten_patch,
    injectivity_check,
    measure,
)
from flatpattern.tracing import (
    LABEL_ENTRANCE,
    TraceGraph,
    TracePath,
    build_graph,
    path_distance,
    smooth_reproject,
    tangential_intersection,
    trace_border_to_border,
    trace_loop,
)

MAX_REFINE_DEPTH = 5
DART_SUBPATHS = 4


class LayoutError(RuntimeError):
    def __init__(self, message: str, failing: Optional[list] = None):
        super().__init__(message)
        self.failing = failing or []


@dataclass
class LayoutGoals:
    max_corners: int = 8  # C
    max_stretch: float = 0.05  # s_max
    max_dart_fraction: float = 0.5
    min_dart_angle: float = 0.1

    def __post_init__(self):
        if self.max_corners < 4:
            raise ValueError("max_corners must be >= 4")
        if self.max_stretch <= 0:
            raise ValueError("max_stretch must be > 0")

    def key(self):
        return (self.max_corners, self.max_stretch, self.max_dart_fraction, self.min_dart_angle)


@dataclass
class PathSegment:
    seg_id: int
    parent_path: int  # index into layout.paths; -1 for mesh boundary chains
    order: int  # insertion order of the parent (boundary = -1)
    vertices: np.ndarray  # parent vertex chain
    closed: bool = False
    mandatory: bool = False
    on_boundary: bool = False
    on_plane: bool = False
    removed: bool = False
    merged_edges: Optional[np.ndarray] = None  # per-edge True = glued (dart merge)

    def n_edges(self) -> int:
        return len(self.vertices) if self.closed else len(self.vertices) - 1

    def edge_pairs(self) -> list:
        v = self.vertices
        n = len(v)
        cnt = self.n_edges()
        return [(int(v[i]), int(v[(i + 1) % n])) for i in range(cnt)]

    def edge_keys(self) -> list:
        return [(min(a, b), max(a, b)) for a, b in self.edge_pairs()]

    def cut_edge_keys(self) -> list:
        keys = self.edge_keys()
        if self.merged_edges is None:
            return keys
        return [k for k, merged in zip(keys, self.merged_edges) if not merged]

    def fully_merged(self) -> bool:
        return self.merged_edges is not None and bool(self.merged_edges.all())


@dataclass
class Dart:
    segment_id: int
    host_patch: int
    tip_vertex: int  # parent mesh vertex
    side_vertices: np.ndarray  # open remainder chain, tip first
    opening_angle: float = 0.0
    length: float = 0.0


@dataclass
class Patch:
    patch_id: int
    faces: np.ndarray
    status: str = "unchecked"  # "pass" | "fail(<reason>)"
    corners: int = 0
    max_stretch: float = 0.0

    def passes(self) -> bool:
        return self.status == "pass"


class PatchLayout:
    """Partition of the session mesh into patches bounded by traced segments."""

    def __init__(self, mesh: TriMesh, pristine: Optional[TriMesh] = None,
                 plane: Optional[SymmetryPlane] = None):
        self.mesh = mesh
        self.pristine = pristine or mesh
        self.plane = plane
        self.paths: list = []  # TracePath in insertion order
        self.path_flags: list = []  # dict per path: mandatory, on_plane
        self.segments: list = []
        self.darts: list = []
        self.patches: list = []
        self._edge_id: dict = {}
        for eid, (a, b) in enumerate(mesh.edges):
            self._edge_id[(int(min(a, b)), int(max(a, b)))] = eid
        # face containing the directed edge (a, b): consistently on its left
        self._dir_face: dict = {}
        for f in range(len(mesh.faces)):
            for k in range(3):
                a, b = int(mesh.faces[f, k]), int(mesh.faces[f, (k + 1) % 3])
                self._dir_face[(a, b)] = f
        self._check_cache: dict = {}

    # ------------------------------------------------------------- structure

    def add_path(self, path: TracePath, mandatory: bool = False, on_plane: bool = False):
        self.paths.append(path)
        self.path_flags.append({"mandatory": mandatory or path.mandatory, "on_plane": on_plane})

    def junction_vertices(self) -> set:
        """Vertices where paths meet paths, themselves, or the mesh boundary."""
        count: dict = {}
        for p in self.paths:
            for v in p.vertices:
                count[int(v)] = count.get(int(v), 0) + 1
        out = set()
        bmask = self.mesh.is_boundary_vertex()
        for p in self.paths:
            if not p.closed:
                out.add(int(p.vertices[0]))
                out.add(int(p.vertices[-1]))
        for v, c in count.items():
            if c > 1 or bmask[v]:
                out.add(v)
        return out

    def rebuild(self):
        self._rebuild_segments()
        self._rebuild_patches()

    def _rebuild_segments(self):
        old_merged: dict = {}
        for seg in self.segments:
            if seg.merged_edges is not None:
                for k, m in zip(seg.edge_keys(), seg.merged_edges):
                    if m:
                        old_merged[k] = True
            if seg.removed:
                for k in seg.edge_keys():
                    old_merged[k] = "removed"

        junctions = self.junction_vertices()
        segs: list = []

        def split_chain(chain, closed, parent, order, mandatory, on_plane):
            pts = [i for i, v in enumerate(chain) if int(v) in junctions]
            if closed and not pts:
                segs.append(PathSegment(
                    seg_id=len(segs), parent_path=parent, order=order,
                    vertices=np.asarray(chain), closed=True,
                    mandatory=mandatory, on_plane=on_plane,
                ))
                return
            if closed:
                # rotate so the chain starts at a junction, then treat as open
                chain = np.concatenate([chain[pts[0]:], chain[:pts[0] + 1]])
                pts = [i for i, v in enumerate(chain) if int(v) in junctions]
                closed = False
            if not pts or pts[0] != 0:
                pts = [0] + pts
            if pts[-1] != len(chain) - 1:
                pts = pts + [len(chain) - 1]
            for a, b in zip(pts, pts[1:]):
                if b <= a:
                    continue
                segs.append(PathSegment(
                    seg_id=len(segs), parent_path=parent, order=order,
                    vertices=np.asarray(chain[a:b + 1]),
                    mandatory=mandatory, on_plane=on_plane,
                ))

        for pi, p in enumerate(self.paths):
            flags = self.path_flags[pi]
            split_chain(p.vertices, p.closed, pi, pi, flags["mandatory"], flags["on_plane"])

        # mesh boundary chains are segments too (never removable)
        for loop in self.mesh.boundary_loops():
            split_chain(np.asarray(loop), True, -1, -1, False, False)
            segs[-1].on_boundary = True
            for s in segs:
                if s.parent_path == -1:
                    s.on_boundary = True

        # restore merge/removal state through the rebuild
        for seg in segs:
            keys = seg.edge_keys()
            states = [old_merged.get(k) for k in keys]
            if all(s == "removed" for s in states) and states:
                seg.removed = True
            elif any(s is True for s in states):
                seg.merged_edges = np.array([s is True for s in states])
        self.segments = segs

    def _rebuild_patches(self):
        cut = self.cut_edge_set()
        F = len(self.mesh.faces)
        parent = np.arange(F)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for eid in range(len(self.mesh.edges)):
            if self.mesh.edge_counts[eid] != 2:
                continue
            a, b = self.mesh.edges[eid]
            if (int(min(a, b)), int(max(a, b))) in cut:
                continue
            f0, f1 = self.mesh.edge_faces[eid]
            r0, r1 = find(int(f0)), find(int(f1))
            if r0 != r1:
                parent[max(r0, r1)] = min(r0, r1)
        roots = np.array([find(i) for i in range(F)])
        uniq = np.unique(roots)
        self.patches = []
        for pid, r in enumerate(uniq):
            self.patches.append(Patch(patch_id=pid, faces=np.nonzero(roots == r)[0]))

    def cut_edge_set(self) -> set:
        cut = set()
        for seg in self.segments:
            if seg.removed or seg.on_boundary:
                continue
            cut.update(seg.cut_edge_keys())
        return cut

    def active_segments(self) -> list:
        return [s for s in self.segments if not s.removed and not s.on_boundary]

    def face_patch_map(self) -> np.ndarray:
        out = np.full(len(self.mesh.faces), -1, dtype=np.int64)
        for p in self.patches:
            out[p.faces] = p.patch_id
        return out

    # ------------------------------------------------------------ dart helpers

    def dart_chains(self) -> list:
        """(segment, remainder chain) for partially merged segments; the chain
        starts at the merge boundary (the dart tip)."""
        out = []
        for seg in self.active_segments():
            if seg.merged_edges is None or seg.fully_merged() or not seg.merged_edges.any():
                continue
            keys = seg.merged_edges
            open_idx = np.nonzero(~keys)[0]
            a, b = int(open_idx[0]), int(open_idx[-1]) + 1
            if keys[:a].any() or a == 0:
                chain = seg.vertices[a:b + 1]
                if a > 0:
                    tip_first = chain
                else:
                    tip_first = chain[::-1]  # merged at the far end
            else:
                tip_first = seg.vertices[a:b + 1][::-1]
            out.append((seg, np.asarray(tip_first)))
        return out


# ----------------------------------------------------------- chart assembly

def edge_side_faces(layout: PatchLayout, key) -> tuple:
    eid = layout._edge_id.get(key)
    if eid is None:
        return (-1, -1)
    f0, f1 = layout.mesh.edge_faces[eid]
    return int(f0), int(f1)


def build_patch_chart(layout: PatchLayout, patch: Patch, pose_vertices=None) -> UVChart:
    cut = layout.cut_edge_set()
    return UVChart(layout.mesh, patch.faces, cut_edges=frozenset(cut), pose_vertices=pose_vertices)


def _chain_side_sequence(layout, chart: UVChart, chain: np.ndarray, side: str):
    """UV ids of a cut chain taken consistently on one side.

    side 'left' uses the face containing each directed chain edge (a, b);
    'right' the face containing (b, a). Consistent mesh orientation keeps
    each side on one geometric side of the whole chain.
    """
    ids = []
    for i in range(len(chain) - 1):
        a, b = int(chain[i]), int(chain[i + 1])
        key = (a, b) if side == "left" else (b, a)
        f_side = layout._dir_face.get(key)
        if f_side is None:
            return None
        try:
            ids.append(chart.side_uv_id(a, f_side))
            if i == len(chain) - 2:
                ids.append(chart.side_uv_id(b, f_side))
        except IndexError:
            return None
    return np.asarray(ids, dtype=np.int64)


def segment_seams_and_darts(layout: PatchLayout, charts: dict):
    """SeamPairs and DartCorrespondences for all active segments.

    charts: patch_id -> (chart_index, UVChart). A segment between two patches
    yields a cross-chart pair; a segment inside one patch yields a same-chart
    pair; a partially-merged segment yields a dart.
    """
    fmap = layout.face_patch_map()
    seams = []
    darts = []
    dart_seg_ids = {seg.seg_id for seg, _ in layout.dart_chains()}
    for seg in layout.active_segments():
        if seg.fully_merged():
            continue
        if seg.seg_id in dart_seg_ids:
            continue
        keys = seg.cut_edge_keys()
        if not keys:
            continue
        chain = seg.vertices
        if seg.closed:
            chain = np.concatenate([chain, chain[:1]])
        f_left = layout._dir_face.get((int(chain[0]), int(chain[1])))
        f_right = layout._dir_face.get((int(chain[1]), int(chain[0])))
        if f_left is None or f_right is None:
            continue
        pa, pb = int(fmap[f_left]), int(fmap[f_right])
        if pa not in charts or pb not in charts:
            continue
        ia, cha = charts[pa]
        ib, chb = charts[pb]
        P = _chain_side_sequence(layout, cha, chain, "left")
        Q = _chain_side_sequence(layout, chb, chain, "right")
        if P is None or Q is None or (ia == ib and np.array_equal(P, Q)):
            continue
        seams.append(SeamPair(ia, P, ib, Q))

    for seg, tip_chain in layout.dart_chains():
        sides = dart_side_uv_ids(layout, charts, tip_chain)
        if sides is None:
            continue
        idx, tip_uv, P_ids, Q_ids = sides
        if P_ids:
            darts.append(DartCorrespondence(idx, np.array(P_ids), np.array(Q_ids), tip_uv=tip_uv))
    return seams, darts


def dart_side_uv_ids(layout: PatchLayout, charts: dict, tip_chain: np.ndarray):
    """(chart index, tip uv, P ids, Q ids) for a dart remainder chain; sides
    are taken consistently left/right of the directed chain."""
    fmap = layout.face_patch_map()
    f_left = layout._dir_face.get((int(tip_chain[0]), int(tip_chain[1])))
    f_right = layout._dir_face.get((int(tip_chain[1]), int(tip_chain[0])))
    if f_left is None or f_right is None:
        return None
    pid = int(fmap[f_left])
    if pid not in charts or int(fmap[f_right]) != pid:
        return None
    idx, ch = charts[pid]
    tip = int(tip_chain[0])
    tip_ids = ch.mesh_vertex_uv_ids(tip)
    if len(tip_ids) != 1:
        return None  # tip must be single in UV
    P_ids = []
    Q_ids = []
    for i in range(1, len(tip_chain)):
        a, v = int(tip_chain[i - 1]), int(tip_chain[i])
        fl = layout._dir_face.get((a, v))
        fr = layout._dir_face.get((v, a))
        if fl is None or fr is None:
            continue
        try:
            pu = ch.side_uv_id(v, fl)
            qu = ch.side_uv_id(v, fr)
        except IndexError:
            continue
        if pu != qu:
            P_ids.append(pu)
            Q_ids.append(qu)
    return idx, tip_ids[0], P_ids, Q_ids


# ------------------------------------------------------------------- corners

def count_corners(layout: PatchLayout, patch: Patch, chart: UVChart) -> int:
    """Boundary corners by the interior-angle rule; dart slits are skipped."""
    dart_edges = set()
    for seg, tip_chain in layout.dart_chains():
        for i in range(len(tip_chain) - 1):
            a, b = int(tip_chain[i]), int(tip_chain[i + 1])
            dart_edges.add((min(a, b), max(a, b)))

    # per-uv-vertex interior angle: sum of incident chart triangle angles
    tri3 = chart.pose_tris[0]
    ang = np.zeros(chart.n_uv)
    for k in range(3):
        u = tri3[:, (k + 1) % 3] - tri3[:, k]
        w = tri3[:, (k + 2) % 3] - tri3[:, k]
        c = np.einsum("ij,ij->i", u, w) / np.maximum(
            np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1), 1e-300
        )
        np.add.at(ang, chart.corner_uv[:, k], np.arccos(np.clip(c, -1, 1)))

    corners = 0
    for loop in chart.boundary_loops():
        n = len(loop)
        for i in range(n):
            prev_uv = loop[i - 1]
            v_uv = loop[i]
            next_uv = loop[(i + 1) % n]
            va = int(chart.uv_to_mesh[prev_uv])
            vb = int(chart.uv_to_mesh[v_uv])
            vc = int(chart.uv_to_mesh[next_uv])
            e1 = (min(va, vb), max(va, vb))
            e2 = (min(vb, vc), max(vb, vc))
            if e1 in dart_edges or e2 in dart_edges:
                continue
            if abs(ang[v_uv] - np.pi) > np.pi / 4:
                corners += 1
    return corners


# ----------------------------------------------------------------- patch check

def check_patch(layout: PatchLayout, patch: Patch, goals: LayoutGoals,
                weights: Optional[Weights] = None, grain: Optional[GrainSpec] = None,
                pose_vertices=None, iterations: int = 20) -> Patch:
    """Flatten the patch alone and grade it: corners, thread stretch, injectivity."""
    cut = layout.cut_edge_set()
    cut_in = frozenset(k for k in cut if _edge_interior_to(layout, k, patch))
    key = (frozenset(patch.faces.tolist()), cut_in, goals.key())
    cached = layout._check_cache.get(key)
    if cached is not None:
        patch.status, patch.corners, patch.max_stretch = cached
        return patch

    chart = UVChart(layout.mesh, patch.faces, cut_edges=frozenset(cut), pose_vertices=pose_vertices)
    if not chart.is_disk():
        patch.status = "fail(non-injective: not a disk)"
        layout._check_cache[key] = (patch.status, 0, 0.0)
        return patch

    patch.corners = count_corners(layout, patch, chart)
    charts = {patch.patch_id: (0, chart)}
    seams, darts = segment_seams_and_darts(layout, charts)
    seams = [s for s in seams if s.chart_a == 0 and s.chart_b == 0]
    try:
        chartF, _rep = flatten_patch(
            layout.mesh, patch.faces, cut_edges=frozenset(cut), weights=weights,
            grain=grain, pose_vertices=pose_vertices, seams=seams, darts=darts,
            max_iterations=iterations,
        )
    except (TopologyError, RuntimeError):
        patch.status = "fail(non-injective: flatten failed)"
        layout._check_cache[key] = (patch.status, patch.corners, 0.0)
        return patch

    br = measure(chartF, weights)
    patch.max_stretch = br.max_stretch
    ok, flips, overlaps = injectivity_check(chartF)
    if patch.corners > goals.max_corners:
        patch.status = f"fail(corners: {patch.corners} > {goals.max_corners})"
    elif patch.max_stretch > goals.max_stretch:
        patch.status = f"fail(stretch: {patch.max_stretch:.4f} > {goals.max_stretch})"
    elif not ok:
        patch.status = f"fail(non-injective: {len(flips)} flips, {len(overlaps)} overlaps)"
    else:
        patch.status = "pass"
    layout._check_cache[key] = (patch.status, patch.corners, patch.max_stretch)
    return patch


def _edge_interior_to(layout: PatchLayout, key, patch: Patch) -> bool:
    f0, f1 = edge_side_faces(layout, key)
    fs = set(int(f) for f in patch.faces)
    return f0 in fs and f1 in fs


def check_all(layout: PatchLayout, goals: LayoutGoals, **kw) -> list:
    failing = []
    for p in layout.patches:
        check_patch(layout, p, goals, **kw)
        if not p.passes():
            failing.append(p)
    return failing


# ------------------------------------------------------------- candidates

def sample_candidates(graph: TraceGraph, mesh: TriMesh, fieldobj: CrossField,
                      sketches: Sequence = (), interior_sources: Optional[int] = None,
                      boundary_stride: int = 4, rng: Optional[np.random.Generator] = None) -> list:
    """Deduplicated loop + border-to-border candidates; sketches become
    mandatory candidates placed first."""
    rng = rng or np.random.default_rng(0)
    out: list = []
    seen: set = set()

    for stroke in sketches:
        p = sketch_to_path(graph, mesh, stroke)
        p.mandatory = True
        k = p.edge_key_set()
        if k not in seen:
            seen.add(k)
            out.append(p)

    bmask = mesh.is_boundary_vertex()
    interior = np.nonzero(~bmask)[0]
    if interior_sources is None:
        interior_sources = max(50, len(mesh.vertices) // 30)
    sources = _farthest_point_sample(mesh, interior, min(interior_sources, len(interior)), rng)
    for v in sources:
        for k in (0, 1):
            p = trace_loop(graph, graph.node(int(v), k))
            if p is None:
                continue
            key = p.edge_key_set()
            if key not in seen and len(key) > 2:
                seen.add(key)
                out.append(p)

    entrances = graph.entrance_nodes()
    for src in entrances[::max(1, boundary_stride)]:
        p = trace_border_to_border(graph, int(src))
        if p is None:
            continue
        key = p.edge_key_set()
        if key not in seen and len(key) > 1:
            seen.add(key)
            out.append(p)
    return out


def _farthest_point_sample(mesh: TriMesh, pool: np.ndarray, count: int,
                           rng: np.random.Generator) -> np.ndarray:
    if len(pool) == 0 or count <= 0:
        return np.zeros(0, dtype=np.int64)
    pts = mesh.vertices[pool]
    picked = [int(rng.integers(0, len(pool)))]
    d = np.linalg.norm(pts - pts[picked[0]], axis=1)
    while len(picked) < min(count, len(pool)):
        nxt = int(np.argmax(d))
        picked.append(nxt)
        d = np.minimum(d, np.linalg.norm(pts - pts[nxt], axis=1))
    return pool[np.array(picked)]


def sketch_to_path(graph: TraceGraph, mesh: TriMesh, stroke: Sequence[SurfacePoint]) -> TracePath:
    """Snap a stroke to graph nodes and trace through them, extending the ends
    to the boundary (or closing a loop on closed meshes)."""
    from scipy.sparse.csgraph import dijkstra as _dij

    waypoints = []
    positions = [sp.position(mesh) for sp in stroke]
    for i, sp in enumerate(stroke):
        fverts = mesh.faces[sp.face]
        local = mesh.vertices[fverts]
        v = int(fverts[np.argmax(np.asarray(sp.bary))])
        if i + 1 < len(positions):
            t = positions[i + 1] - positions[i]
        else:
            t = positions[i] - positions[i - 1]
        tn = np.linalg.norm(t)
        if tn < 1e-12:
            continue
        k = int(np.argmax(graph.vertex_dirs[v] @ (t / tn)))
        node = graph.node(v, k)
        if not waypoints or waypoints[-1] // 4 != v:
            waypoints.append(node)
    if len(waypoints) < 2:
        raise LayoutError("stroke too short to trace")

    full = (graph.trace_csr + _boundary_out_csr(graph)).tocsr()
    chain = [waypoints[0]]
    for a, b in zip(waypoints, waypoints[1:]):
        dist, pred = _dij(full, indices=a, return_predecessors=True)
        if not np.isfinite(dist[b]):
            raise LayoutError("sketch waypoints not connected in the tracing graph")
        seq = []
        cur = b
        while cur != a and cur >= 0:
            seq.append(int(cur))
            cur = int(pred[cur])
        chain.extend(reversed(seq))

    bmask = mesh.is_boundary_vertex()
    start_v, end_v = chain[0] // 4, chain[-1] // 4
    closed = False
    if not bmask[start_v] or not bmask[end_v]:
        if not bmask[end_v]:
            dist, pred = _dij(full, indices=chain[-1], return_predecessors=True)
            exits = graph.exit_nodes()
            if len(exits) and np.isfinite(dist[exits]).any():
                tgt = int(exits[np.argmin(np.where(np.isfinite(dist[exits]), dist[exits], np.inf))])
                seq = []
                cur = tgt
                while cur != chain[-1] and cur >= 0:
                    seq.append(int(cur))
                    cur = int(pred[cur])
                chain.extend(reversed(seq))
            else:
                # closed mesh: close the loop back to the start
                if np.isfinite(dist[chain[0]]):
                    seq = []
                    cur = chain[0]
                    while cur != chain[-1] and cur >= 0:
                        seq.append(int(cur))
                        cur = int(pred[cur])
                    chain.extend(reversed(seq[1:]))
                    closed = True
                else:
                    raise LayoutError("sketch cannot be extended to a valid seam")
        start_v, end_v = chain[0] // 4, chain[-1] // 4
        if not closed and not bmask[start_v]:
            rev = full.T.tocsr()
            dist, pred = _dij(rev, indices=chain[0], return_predecessors=True)
            ents = graph.entrance_nodes()
            if len(ents) and np.isfinite(dist[ents]).any():
                src = int(ents[np.argmin(np.where(np.isfinite(dist[ents]), dist[ents], np.inf))])
                seq = []
                cur = src
                while cur != chain[0] and cur >= 0:
                    seq.append(int(cur))
                    cur = int(pred[cur])
                chain = seq + chain  # seq follows rev predecessors: src ... start
            else:
                raise LayoutError("sketch cannot be extended to a valid seam")

    nodes = np.asarray(chain, dtype=np.int64)
    verts = nodes // 4
    if closed and verts[0] == verts[-1]:
        nodes = nodes[:-1]
        verts = verts[:-1]
    # drop consecutive duplicates
    keep = np.ones(len(verts), dtype=bool)
    keep[1:] = verts[1:] != verts[:-1]
    nodes = nodes[keep]
    p = TracePath(vertices=nodes // 4, classes=nodes % 4, closed=closed, length=0.0, mandatory=True)
    p.recompute_length(mesh)
    return p


def _boundary_out_csr(graph: TraceGraph):
    from scipy.sparse import csr_matrix

    rows, cols, vals = [], [], []
    for node, lst in graph.boundary_out.items():
        for dst, w in lst:
            rows.append(node)
            cols.append(dst)
            vals.append(w)
    return csr_matrix((vals, (rows, cols)), shape=(graph.n_nodes, graph.n_nodes))


# ------------------------------------------------------------------ insertion

def path_relevant_to(layout: PatchLayout, path: TracePath, patch: Patch) -> bool:
    """The path cuts through the patch: at least one edge interior to it."""
    fs = set(int(f) for f in patch.faces)
    for a, b in path.edge_pairs():
        f0, f1 = edge_side_faces(layout, (min(a, b), max(a, b)))
        if f0 in fs and f1 in fs:
            return True
    return False


def insert_until_goals(layout: PatchLayout, candidates: list, goals: LayoutGoals,
                       graph: TraceGraph, fieldobj: CrossField,
                       weights: Optional[Weights] = None, grain: Optional[GrainSpec] = None,
                       pose_vertices=None, rng: Optional[np.random.Generator] = None,
                       check_iterations: int = 20) -> PatchLayout:
    """Greedy insertion favoring the candidate farthest from inserted paths;
    recursion re-samples inside failing patches when the pool runs dry."""
    rng = rng or np.random.default_rng(0)
    pool = list(candidates)
    kw = dict(weights=weights, grain=grain, pose_vertices=pose_vertices,
              iterations=check_iterations)

    def smooth_and_add(path, mandatory=False):
        pinned = layout.junction_vertices()
        for q in layout.paths:
            pinned.update(int(v) for v in q.vertices)
        smooth_reproject(path, layout.mesh, layout.pristine, iterations=10, pinned=pinned)
        layout.add_path(path, mandatory=mandatory)
        layout._check_cache.clear()
        layout.rebuild()

    # mandatory sketch paths first
    for p in [c for c in pool if c.mandatory]:
        if any(tangential_intersection(p, q, layout.mesh) for q in layout.paths):
            raise LayoutError("sketch path intersects an existing path tangentially")
        smooth_and_add(p, mandatory=True)
    pool = [c for c in pool if not c.mandatory]

    depth = 0
    while True:
        layout.rebuild()
        failing = check_all(layout, goals, **{k: v for k, v in kw.items() if k != "iterations"},
                            iterations=check_iterations)
        if not failing:
            return layout

        usable = []
        for idx, cand in enumerate(pool):
            if any(tangential_intersection(cand, q, layout.mesh) for q in layout.paths):
                continue
            if not any(path_relevant_to(layout, cand, p) for p in failing):
                continue
            usable.append((idx, cand))

        if not usable:
            if depth >= MAX_REFINE_DEPTH:
                raise LayoutError(
                    "goals unsatisfiable with candidate pool exhausted",
                    failing=[f"patch {p.patch_id}: {p.status}" for p in failing],
                )
            depth += 1
            added = 0
            for p in failing:
                for cand in refine_candidates(layout, p, fieldobj, rng, graph):
                    if any(tangential_intersection(cand, q, layout.mesh) for q in layout.paths):
                        continue
                    pool.append(cand)
                    added += 1
            if added == 0:
                raise LayoutError(
                    "goals unsatisfiable: no refinement candidates",
                    failing=[f"patch {p.patch_id}: {p.status}" for p in failing],
                )
            continue

        if layout.paths:
            scored = []
            for idx, cand in usable:
                d = min(path_distance(cand, q, graph) for q in layout.paths)
                scored.append((-d, idx, cand))
            scored.sort(key=lambda t: (t[0], t[1]))
            _, idx, best = scored[0]
        else:
            idx, best = usable[0]
        pool = [c for i, c in enumerate(pool) if i != idx]
        smooth_and_add(best)


def refine_candidates(layout: PatchLayout, patch: Patch, fieldobj: CrossField,
                      rng: np.random.Generator, parent_graph: Optional[TraceGraph] = None) -> list:
    """Trace fresh candidates inside one failing patch (its boundary becomes
    the border for border-to-border paths)."""
    faces = patch.faces
    used = np.unique(layout.mesh.faces[faces])
    remap = -np.ones(len(layout.mesh.vertices), dtype=np.int64)
    remap[used] = np.arange(len(used))
    try:
        sub = TriMesh(layout.mesh.vertices[used], remap[layout.mesh.faces[faces]], validate=False)
    except Exception:
        return []
    subfield = CrossField(angles=fieldobj.angles[faces].copy(),
                          constrained=fieldobj.constrained[faces].copy())
    try:
        g = build_graph(sub, subfield)
    except Exception:
        return []
    cands = sample_candidates(g, sub, subfield, interior_sources=24, boundary_stride=3, rng=rng)
    out = []
    for c in cands:
        verts = used[c.vertices]
        if parent_graph is not None:
            # submesh class indices do not transfer: re-derive them from the
            # parent vertex directions and the actual step geometry
            classes = _classes_from_geometry(layout.mesh, parent_graph, verts, c.closed)
        else:
            classes = c.classes.copy()
        p = TracePath(vertices=verts, classes=classes, closed=c.closed,
                      length=c.length, mandatory=False)
        p.recompute_length(layout.mesh)
        out.append(p)
    return out


def _classes_from_geometry(mesh: TriMesh, graph: TraceGraph, verts: np.ndarray,
                           closed: bool) -> np.ndarray:
    n = len(verts)
    classes = np.zeros(n, dtype=np.int64)
    pos = mesh.vertices[verts]
    for i in range(n):
        if closed:
            t = pos[(i + 1) % n] - pos[i - 1]
        elif i == 0:
            t = pos[1] - pos[0]
        elif i == n - 1:
            t = pos[-1] - pos[-2]
        else:
            t = pos[i + 1] - pos[i - 1]
        tn = np.linalg.norm(t)
        if tn < 1e-12:
            t = pos[min(i + 1, n - 1)] - pos[max(i - 1, 0)]
            tn = max(np.linalg.norm(t), 1e-12)
        classes[i] = int(np.argmax(graph.vertex_dirs[int(verts[i])] @ (t / tn)))
    return classes


# -------------------------------------------------------------------- removal

def _forms_t_junction(layout: PatchLayout, seg: PathSegment) -> bool:
    if seg.closed:
        return False
    bmask = layout.mesh.is_boundary_vertex()
    ends: dict = {}
    for s in layout.active_segments():
        if s.closed:
            continue
        for v in (int(s.vertices[0]), int(s.vertices[-1])):
            ends.setdefault(v, []).append(s)
    for v in (int(seg.vertices[0]), int(seg.vertices[-1])):
        if bmask[v]:
            continue
        here = ends.get(v, [])
        others = [s for s in here if s.seg_id != seg.seg_id]
        if len(here) == 3 and len(others) == 2:
            if others[0].parent_path == others[1].parent_path != seg.parent_path:
                return True
    return False


def _fused_patch_faces(layout: PatchLayout, seg: PathSegment) -> np.ndarray:
    fmap = layout.face_patch_map()
    pids = set()
    for key in seg.cut_edge_keys():
        f0, f1 = edge_side_faces(layout, key)
        if f0 >= 0:
            pids.add(int(fmap[f0]))
        if f1 >= 0:
            pids.add(int(fmap[f1]))
    faces = np.concatenate([layout.patches[p].faces for p in sorted(pids)]) if pids else np.zeros(0, dtype=np.int64)
    return np.unique(faces)


def remove_redundant(layout: PatchLayout, goals: LayoutGoals,
                     weights: Optional[Weights] = None, grain: Optional[GrainSpec] = None,
                     pose_vertices=None, check_iterations: int = 20,
                     only_on_plane: bool = False) -> PatchLayout:
    """Reverse-insertion-order removal of segments whose fused patch still
    passes; T-junction stems are left for the dart step."""
    kw = dict(weights=weights, grain=grain, pose_vertices=pose_vertices)
    order = sorted(layout.active_segments(), key=lambda s: (-s.order, -s.seg_id))
    for seg in order:
        if seg.removed or seg.on_boundary or seg.mandatory:
            continue
        if only_on_plane and not seg.on_plane:
            continue
        if seg.merged_edges is not None:
            continue
        if _forms_t_junction(layout, seg):
            continue
        fused = _fused_patch_faces(layout, seg)
        if len(fused) == 0:
            continue
        seg.removed = True
        layout._rebuild_patches()
        target = _patch_containing(layout, fused)
        ok = False
        if target is not None:
            check_patch(layout, target, goals, iterations=check_iterations, **kw)
            ok = target.passes()
        if not ok:
            seg.removed = False
            layout._rebuild_patches()
    layout.rebuild()
    return layout


def _patch_containing(layout: PatchLayout, faces: np.ndarray) -> Optional[Patch]:
    if len(faces) == 0:
        return None
    fmap = layout.face_patch_map()
    pids = np.unique(fmap[faces])
    if len(pids) != 1:
        return None
    return layout.patches[int(pids[0])]


# ---------------------------------------------------------------------- darts

def segment_spanned_curvature(layout: PatchLayout, seg: PathSegment, rings: int = 2) -> float:
    """Signed sum of angle defects over vertices within `rings` of the segment."""
    mesh = layout.pristine
    defects = mesh.angle_defects()
    bmask = mesh.is_boundary_vertex()
    adj = mesh.vertex_adjacency()
    current = set(int(v) for v in seg.vertices)
    region = set(current)
    for _ in range(rings):
        nxt = set()
        for v in current:
            nxt.update(int(w) for w in adj.indices[adj.indptr[v]:adj.indptr[v + 1]])
        current = nxt - region
        region |= nxt
    return float(sum(defects[v] for v in region if not bmask[v]))


def create_darts(layout: PatchLayout, goals: LayoutGoals, curvature=None,
                 weights: Optional[Weights] = None, grain: Optional[GrainSpec] = None,
                 pose_vertices=None, check_iterations: int = 20,
                 only_on_plane: bool = False) -> PatchLayout:
    """Partial seam merging in increasing spanned-curvature order (saddles
    last); each merge must keep the host patch passing and injective."""
    kw = dict(weights=weights, grain=grain, pose_vertices=pose_vertices)

    def eligible():
        segs = [s for s in layout.active_segments()
                if not s.mandatory and s.merged_edges is None and not s.closed]
        if only_on_plane:
            segs = [s for s in segs if s.on_plane]
        return segs

    # stub seams first: segments only a few edges long make patterns hard to
    # sew, so try merging them away entirely before the curvature ordering
    stub_len = 4.0 * layout.mesh.mean_edge_length()
    stubs = []
    for s in eligible():
        ln = float(np.linalg.norm(np.diff(layout.mesh.vertices[s.vertices], axis=0), axis=1).sum())
        if ln < stub_len:
            stubs.append((ln, s.seg_id, s))
    for _, _, seg in sorted(stubs, key=lambda t: (t[0], t[1])):
        if seg.removed or seg.merged_edges is not None:
            continue
        _try_merge_segment(layout, seg, goals, check_iterations, kw, full_only=True)

    scored = []
    for s in eligible():
        K = segment_spanned_curvature(layout, s)
        scored.append((1 if K < -1e-9 else 0, abs(K), s.seg_id, s))
    scored.sort(key=lambda t: (t[0], t[1], t[2]))

    for _, _, _, seg in scored:
        if seg.removed or seg.merged_edges is not None:
            continue
        _try_merge_segment(layout, seg, goals, check_iterations, kw)
    layout.rebuild()
    _annotate_darts(layout)
    return layout


def _try_merge_segment(layout: PatchLayout, seg: PathSegment, goals: LayoutGoals,
                       iterations: int, kw: dict, full_only: bool = False):
    n_edges = seg.n_edges()
    if n_edges == 0:
        return

    def attempt(mask: np.ndarray) -> bool:
        before = seg.merged_edges
        seg.merged_edges = mask
        layout._rebuild_patches()
        fused = _fused_faces_for_mask(layout, seg)
        target = _patch_containing(layout, fused)
        ok = False
        if target is not None:
            check_patch(layout, target, goals, iterations=iterations, **kw)
            ok = target.passes()
            if ok and mask.any() and not mask.all():
                ok = _dart_constraints_ok(layout, seg, target, goals, kw)
        if not ok:
            seg.merged_edges = before
            layout._rebuild_patches()
        return ok

    # full merge removes the seam entirely
    if attempt(np.ones(n_edges, dtype=bool)) or full_only:
        return

    # split into subpaths and merge cumulatively from the lower-curvature end
    n_sub = min(DART_SUBPATHS, n_edges)
    bounds = np.linspace(0, n_edges, n_sub + 1).astype(int)
    sub_curv = []
    for i in range(n_sub):
        sub = PathSegment(seg_id=-1, parent_path=seg.parent_path, order=seg.order,
                          vertices=seg.vertices[bounds[i]:bounds[i + 1] + 1])
        sub_curv.append(abs(segment_spanned_curvature(layout, sub, rings=1)))
    from_start = sub_curv[0] <= sub_curv[-1]

    for k in range(n_sub - 1, 0, -1):
        mask = np.zeros(n_edges, dtype=bool)
        if from_start:
            mask[:bounds[k]] = True
        else:
            mask[bounds[n_sub - k]:] = True
        if not mask.any():
            continue
        if attempt(mask):
            return


def _fused_faces_for_mask(layout: PatchLayout, seg: PathSegment) -> np.ndarray:
    fmap = layout.face_patch_map()
    pids = set()
    for key in seg.edge_keys():
        f0, f1 = edge_side_faces(layout, key)
        if f0 >= 0:
            pids.add(int(fmap[f0]))
        if f1 >= 0:
            pids.add(int(fmap[f1]))
    faces = np.concatenate([layout.patches[p].faces for p in sorted(pids)]) if pids else np.zeros(0, dtype=np.int64)
    return np.unique(faces)


def _dart_constraints_ok(layout: PatchLayout, seg: PathSegment, patch: Patch,
                         goals: LayoutGoals, kw: dict) -> bool:
    chains = [c for s, c in layout.dart_chains() if s.seg_id == seg.seg_id]
    if not chains:
        return True
    chain = chains[0]
    length = float(np.linalg.norm(np.diff(layout.mesh.vertices[chain], axis=0), axis=1).sum())
    chart = build_patch_chart(layout, patch, pose_vertices=kw.get("pose_vertices"))
    try:
        from flatpattern.textile import lscm_init

        lscm_init(chart)
    except TopologyError:
        return False
    ext = chart.uv.max(axis=0) - chart.uv.min(axis=0)
    extent = float(np.hypot(ext[0], ext[1]))
    if length > goals.max_dart_fraction * extent:
        return False
    tip = int(chain[0])
    tip_ids = chart.mesh_vertex_uv_ids(tip)
    if len(tip_ids) != 1:
        return False
    opening = _dart_opening_angle(layout, chart, chain)
    if opening is not None and opening < goals.min_dart_angle:
        return False
    return True


def _dart_opening_angle(layout: PatchLayout, chart: UVChart, chain: np.ndarray) -> Optional[float]:
    if len(chain) < 2:
        return None
    tip_ids = chart.mesh_vertex_uv_ids(int(chain[0]))
    nxt = chart.mesh_vertex_uv_ids(int(chain[1]))
    if len(tip_ids) != 1 or len(nxt) != 2:
        return None
    t = chart.uv[tip_ids[0]]
    a = chart.uv[nxt[0]] - t
    b = chart.uv[nxt[1]] - t
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return None
    return float(np.arccos(np.clip(a @ b / (na * nb), -1, 1)))


def _annotate_darts(layout: PatchLayout):
    layout.darts = []
    fmap = layout.face_patch_map()
    for seg, chain in layout.dart_chains():
        key = (min(int(chain[0]), int(chain[1])), max(int(chain[0]), int(chain[1])))
        f0, _f1 = edge_side_faces(layout, key)
        host = int(fmap[f0]) if f0 >= 0 else -1
        length = float(np.linalg.norm(np.diff(layout.mesh.vertices[chain], axis=0), axis=1).sum())
        layout.darts.append(Dart(
            segment_id=seg.seg_id, host_patch=host, tip_vertex=int(chain[0]),
            side_vertices=chain.copy(), length=length,
        ))


# ------------------------------------------------------------------- symmetry

def mirror_merge(layout: PatchLayout, plane: SymmetryPlane, seam_vertices: np.ndarray,
                 tol: Optional[float] = None) -> PatchLayout:
    """Copy the half-mesh layout onto the welded full mesh; the symmetry-plane
    boundary becomes on-plane seam segments, reflection-symmetric by build."""
    half = layout.mesh
    full, orig_map, mirror_map = mirror_weld(half, plane, seam_vertices)
    out = PatchLayout(full, pristine=full, plane=plane)

    for p, flags in zip(layout.paths, layout.path_flags):
        v1 = orig_map[p.vertices]
        p1 = TracePath(vertices=v1, classes=p.classes.copy(), closed=p.closed,
                       length=p.length, mandatory=p.mandatory)
        p1.recompute_length(full)
        out.add_path(p1, mandatory=flags["mandatory"], on_plane=flags["on_plane"])
        v2 = mirror_map[p.vertices]
        if np.array_equal(np.sort(v1), np.sort(v2)):
            continue  # the path lies on the plane: its mirror is itself
        p2 = TracePath(vertices=v2, classes=p.classes.copy(), closed=p.closed,
                       length=p.length, mandatory=p.mandatory)
        p2.recompute_length(full)
        out.add_path(p2, mandatory=flags["mandatory"], on_plane=flags["on_plane"])

    # former half boundary on the plane -> interior seam chains on the full mesh
    if tol is None:
        tol = 1e-6 * full.bbox_diagonal()
    seam_set = set(int(orig_map[v]) for v in seam_vertices)
    for loop in half.boundary_loops():
        runs = _plane_runs([int(orig_map[v]) for v in loop], seam_set)
        for run in runs:
            if len(run) < 2:
                continue
            p = TracePath(vertices=np.asarray(run), classes=np.zeros(len(run), dtype=np.int64),
                          closed=False, length=0.0)
            p.recompute_length(full)
            out.add_path(p, on_plane=True)

    # carry dart merge state through vertex maps
    out.rebuild()
    merged_keys = {}
    for seg in layout.segments:
        if seg.merged_edges is None:
            continue
        for k, m in zip(seg.edge_keys(), seg.merged_edges):
            if m:
                a, b = int(orig_map[k[0]]), int(orig_map[k[1]])
                merged_keys[(min(a, b), max(a, b))] = True
                a, b = int(mirror_map[k[0]]), int(mirror_map[k[1]])
                merged_keys[(min(a, b), max(a, b))] = True
    if merged_keys:
        for seg in out.segments:
            keys = seg.edge_keys()
            if any(k in merged_keys for k in keys):
                seg.merged_edges = np.array([k in merged_keys for k in keys])
        out.rebuild()
    _annotate_darts(out)
    return out


def _plane_runs(loop: list, seam_set: set) -> list:
    """Maximal runs of consecutive on-plane vertices along a cyclic loop."""
    n = len(loop)
    on = [v in seam_set for v in loop]
    if all(on):
        return [loop + [loop[0]]]
    runs = []
    i = 0
    while i < n:
        if on[i] and (not on[i - 1]):
            j = i
            run = []
            while on[j % n]:
                run.append(loop[j % n])
                j += 1
            runs.append(run)
            i = j
        else:
            i += 1
    return [r for r in runs if len(r) >= 2]


def reduce_symmetry_seam(layout: PatchLayout, plane: SymmetryPlane, goals: LayoutGoals,
                         weights: Optional[Weights] = None, grain: Optional[GrainSpec] = None,
                         pose_vertices=None, check_iterations: int = 20) -> PatchLayout:
    """Removal + dart passes restricted to segments on the symmetry plane."""
    remove_redundant(layout, goals, weights=weights, grain=grain,
                     pose_vertices=pose_vertices, check_iterations=check_iterations,
                     only_on_plane=True)
    create_darts(layout, goals, weights=weights, grain=grain,
                 pose_vertices=pose_vertices, check_iterations=check_iterations,
                 only_on_plane=True)
    return layout


# -------------------------------------------------------------- serialization

LAYOUT_SCHEMA_VERSION = 1


def layout_to_json(layout: PatchLayout) -> dict:
    paths = []
    for p, flags in zip(layout.paths, layout.path_flags):
        paths.append({
            "vertices": [int(v) for v in p.vertices],
            "classes": [int(k) for k in p.classes],
            "closed": bool(p.closed),
            "mandatory": bool(flags["mandatory"]),
            "on_plane": bool(flags["on_plane"]),
            "samples": [s.to_json() for s in p.samples],
        })
    segments = []
    for s in layout.segments:
        segments.append({
            "seg_id": s.seg_id,
            "parent_path": s.parent_path,
            "order": s.order,
            "vertices": [int(v) for v in s.vertices],
            "closed": bool(s.closed),
            "removed": bool(s.removed),
            "on_boundary": bool(s.on_boundary),
            "on_plane": bool(s.on_plane),
            "mandatory": bool(s.mandatory),
            "merged_edges": None if s.merged_edges is None else [bool(m) for m in s.merged_edges],
        })
    return {
        "version": LAYOUT_SCHEMA_VERSION,
        "vertices": [[float(x) for x in v] for v in layout.mesh.vertices],
        "faces": [[int(i) for i in f] for f in layout.mesh.faces],
        "paths": paths,
        "segments": segments,
        "patches": [[int(f) for f in p.faces] for p in layout.patches],
        "patch_status": [p.status for p in layout.patches],
        "darts": [{
            "segment_id": d.segment_id, "host_patch": d.host_patch,
            "tip_vertex": d.tip_vertex, "side_vertices": [int(v) for v in d.side_vertices],
            "opening_angle": d.opening_angle, "length": d.length,
        } for d in layout.darts],
        "plane": None if layout.plane is None else {
            "point": [float(x) for x in layout.plane.point],
            "normal": [float(x) for x in layout.plane.normal],
        },
    }


def layout_from_json(doc: dict) -> PatchLayout:
    if doc.get("version") != LAYOUT_SCHEMA_VERSION:
        raise ValueError(f"unsupported layout version {doc.get('version')}")
    mesh = TriMesh(np.asarray(doc["vertices"]), np.asarray(doc["faces"]), validate=False)
    plane = None
    if doc.get("plane"):
        plane = SymmetryPlane(np.asarray(doc["plane"]["point"]), np.asarray(doc["plane"]["normal"]))
    layout = PatchLayout(mesh, plane=plane)
    for p in doc["paths"]:
        tp = TracePath(
            vertices=np.asarray(p["vertices"], dtype=np.int64),
            classes=np.asarray(p["classes"], dtype=np.int64),
            closed=p["closed"], length=0.0, mandatory=p["mandatory"],
        )
        tp.samples = [SurfacePoint.from_json(s) for s in p.get("samples", [])]
        tp.recompute_length(mesh)
        layout.add_path(tp, mandatory=p["mandatory"], on_plane=p["on_plane"])
    layout.rebuild()
    merged = {}
    for s in doc["segments"]:
        if s.get("merged_edges"):
            verts = s["vertices"]
            for i, m in enumerate(s["merged_edges"]):
                if m:
                    a, b = int(verts[i]), int(verts[(i + 1) % len(verts)])
                    merged[(min(a, b), max(a, b))] = True
    if merged:
        for seg in layout.segments:
            keys = seg.edge_keys()
            if any(k in merged for k in keys):
                seg.merged_edges = np.array([k in merged for k in keys])
        layout.rebuild()
    _annotate_darts(layout)
    return layout
