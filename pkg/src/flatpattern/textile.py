"""Anisotropic textile flattening with a local-global solver.

Energy terms follow the woven-fabric model: separate warp/weft stretch
penalties built from barycentric grain frames, ARAP rigidity with per-triangle
Procrustes rotations, seam reflection symmetry with best-fit reflections, and
dart symmetry about a tip-constrained axis. The global step is one sparse
least-squares solve in the UV coordinates; with several poses only the
right-hand side changes per pose and is averaged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix, identity
from scipy.sparse.csgraph import dijkstra
from scipy.sparse.linalg import splu

from flatpattern.mesh import TriMesh

DEGENERATE_UV_AREA = 1e-12
CONVERGENCE_TOL = 1e-7
MAX_ITERATIONS = 20


class SolverError(RuntimeError):
    pass


class TopologyError(ValueError):
    pass


@dataclass
class Weights:
    stretch: float = 5.0
    rigid: float = 1.0
    dart: float = 5.0
    seam: float = 5.0

    def __post_init__(self):
        for name in ("stretch", "rigid", "dart", "seam"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be >= 0")


@dataclass
class GrainSpec:
    """Desired 3D warp axis; charts are rotated so V matches its projection."""

    axis3d: np.ndarray
    enabled: bool = True

    def __post_init__(self):
        a = np.asarray(self.axis3d, dtype=np.float64).reshape(3)
        n = np.linalg.norm(a)
        if n < 1e-12:
            raise ValueError("grain axis must be nonzero")
        self.axis3d = a / n


@dataclass
class SeamPair:
    """Matched duplicated-vertex sequences across a seam (possibly one chart)."""

    chart_a: int
    uv_a: np.ndarray
    chart_b: int
    uv_b: np.ndarray

    def __post_init__(self):
        self.uv_a = np.asarray(self.uv_a, dtype=np.int64)
        self.uv_b = np.asarray(self.uv_b, dtype=np.int64)
        if len(self.uv_a) != len(self.uv_b):
            raise ValueError("seam sides must have equal vertex counts")


@dataclass
class DartCorrespondence:
    """Dart sides within one chart; the tip vertex is not duplicated."""

    chart: int
    uv_p: np.ndarray
    uv_q: np.ndarray
    tip_uv: int

    def __post_init__(self):
        self.uv_p = np.asarray(self.uv_p, dtype=np.int64)
        self.uv_q = np.asarray(self.uv_q, dtype=np.int64)
        if len(self.uv_p) != len(self.uv_q):
            raise ValueError("dart sides must have equal vertex counts")


@dataclass
class EnergyBreakdown:
    stretch_u: float
    stretch_v: float
    rigid: float
    seam: float
    dart: float
    stretch_dev: np.ndarray  # per-triangle thread-stretch deviation (s_max quantity)
    rigid_density: np.ndarray  # per-triangle ARAP energy / 3D area
    s_u: np.ndarray
    s_v: np.ndarray

    @property
    def total(self) -> float:
        return self.stretch_u + self.stretch_v + self.rigid + self.seam + self.dart

    @property
    def max_stretch(self) -> float:
        return float(self.stretch_dev.max()) if len(self.stretch_dev) else 0.0


# --------------------------------------------------------------------- charts

class UVChart:
    """Cut-open patch with UV coordinates and per-pose reference shapes.

    Corners of patch faces are merged into UV vertices unless separated by a
    cut edge, which duplicates seam/dart vertices automatically.
    """

    def __init__(self, mesh: TriMesh, faces, cut_edges=frozenset(), pose_vertices: Optional[Sequence] = None):
        self.mesh = mesh
        self.faces = np.asarray(faces, dtype=np.int64)
        self.cut_edges = frozenset(cut_edges)
        tris = mesh.faces[self.faces]  # (T, 3) parent vertex ids

        self.corner_uv = self._merge_corners(tris)
        self.n_uv = int(self.corner_uv.max()) + 1
        self.uv_to_mesh = np.zeros(self.n_uv, dtype=np.int64)
        self.uv_to_mesh[self.corner_uv.ravel()] = tris.ravel()
        self.uv = np.zeros((self.n_uv, 2))

        pose_arrays = [mesh.vertices] if pose_vertices is None else list(pose_vertices)
        self.pose_tris = [np.asarray(pv, dtype=np.float64)[tris] for pv in pose_arrays]
        self.ref_shapes = [_reference_shapes(pt) for pt in self.pose_tris]
        self.degenerate_flags = np.zeros(len(self.faces), dtype=bool)
        self._boundary_loops: Optional[list] = None

    def _merge_corners(self, tris: np.ndarray) -> np.ndarray:
        T = len(tris)
        parent = np.arange(3 * T)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        def union(i, j):
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)

        # interior chart edges that are not cut merge their endpoint corners
        edge_map: dict = {}
        for t in range(T):
            for k in range(3):
                a, b = int(tris[t, k]), int(tris[t, (k + 1) % 3])
                key = (min(a, b), max(a, b))
                edge_map.setdefault(key, []).append((t, k))
        for key, users in edge_map.items():
            if len(users) != 2 or key in self.cut_edges:
                continue
            (t0, k0), (t1, k1) = users
            for v in key:
                c0 = 3 * t0 + int(np.where(tris[t0] == v)[0][0])
                c1 = 3 * t1 + int(np.where(tris[t1] == v)[0][0])
                union(c0, c1)
        roots = np.array([find(i) for i in range(3 * T)])
        _, comp = np.unique(roots, return_inverse=True)
        self._edge_map = edge_map
        return comp.reshape(T, 3)

    # ------------------------------------------------------------ topology

    def is_disk(self) -> bool:
        E = sum(1 for _ in self._uv_edges())
        chi = self.n_uv - E + len(self.faces)
        return chi == 1 and len(self.boundary_loops()) == 1

    def _uv_edges(self):
        seen = set()
        for t in range(len(self.faces)):
            for k in range(3):
                a = int(self.corner_uv[t, k])
                b = int(self.corner_uv[t, (k + 1) % 3])
                key = (min(a, b), max(a, b))
                if key not in seen:
                    seen.add(key)
                    yield key

    def boundary_loops(self) -> list:
        """UV-vertex loops along the cut boundary, ordered by face orientation."""
        if self._boundary_loops is not None:
            return self._boundary_loops
        count: dict = {}
        nxt: dict = {}
        for t in range(len(self.faces)):
            for k in range(3):
                a = int(self.corner_uv[t, k])
                b = int(self.corner_uv[t, (k + 1) % 3])
                key = (min(a, b), max(a, b))
                count[key] = count.get(key, 0) + 1
        for t in range(len(self.faces)):
            for k in range(3):
                a = int(self.corner_uv[t, k])
                b = int(self.corner_uv[t, (k + 1) % 3])
                if count[(min(a, b), max(a, b))] == 1:
                    nxt[a] = b
        loops = []
        visited = set()
        for start in sorted(nxt):
            if start in visited:
                continue
            loop = [start]
            visited.add(start)
            cur = nxt.get(start)
            guard = 0
            while cur is not None and cur != start and guard <= len(nxt):
                loop.append(cur)
                visited.add(cur)
                cur = nxt.get(cur)
                guard += 1
            loops.append(loop)
        self._boundary_loops = loops
        return loops

    def boundary_uv_vertices(self) -> np.ndarray:
        out = []
        for loop in self.boundary_loops():
            out.extend(loop)
        return np.unique(np.array(out, dtype=np.int64))

    def uv_positions(self, ids) -> np.ndarray:
        return self.uv[np.asarray(ids, dtype=np.int64)]

    def mesh_vertex_uv_ids(self, mesh_vertex: int) -> list:
        """All UV copies of a parent mesh vertex in this chart."""
        return sorted(set(
            int(self.corner_uv[t, k])
            for t in range(len(self.faces))
            for k in range(3)
            if self.mesh.faces[self.faces[t], k] == mesh_vertex
        ))

    def side_uv_id(self, mesh_vertex: int, side_face: int) -> int:
        """UV copy of a parent vertex adjacent to the given parent face."""
        t = int(np.nonzero(self.faces == side_face)[0][0])
        k = int(np.where(self.mesh.faces[side_face] == mesh_vertex)[0][0])
        return int(self.corner_uv[t, k])

    def uv_areas(self) -> np.ndarray:
        a = self.uv[self.corner_uv[:, 0]]
        b = self.uv[self.corner_uv[:, 1]]
        c = self.uv[self.corner_uv[:, 2]]
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    def area3d(self) -> np.ndarray:
        return self.mesh.face_areas[self.faces]

    def copy(self) -> "UVChart":
        import copy as _copy

        c = _copy.copy(self)
        c.uv = self.uv.copy()
        return c


def _reference_shapes(tri3: np.ndarray) -> np.ndarray:
    """2D isometric embedding of each 3D triangle: A'=(0,0), B'=(|e0|,0)."""
    e0 = tri3[:, 1] - tri3[:, 0]
    e1 = tri3[:, 2] - tri3[:, 0]
    L = np.linalg.norm(e0, axis=1)
    x = np.einsum("ij,ij->i", e0, e1) / np.maximum(L, 1e-300)
    y = np.linalg.norm(np.cross(e0, e1), axis=1) / np.maximum(L, 1e-300)
    T = len(tri3)
    out = np.zeros((T, 3, 2))
    out[:, 1, 0] = L
    out[:, 2, 0] = x
    out[:, 2, 1] = y
    return out


# ----------------------------------------------------------------- procrustes

def best_fit_rotation(P: np.ndarray, Q: np.ndarray):
    """Orthogonal det=+1 transform (R, t) minimizing sum |R p + t - q|^2."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    pc, qc = P.mean(axis=0), Q.mean(axis=0)
    H = (Q - qc).T @ (P - pc)  # sum q_hat p_hat^T
    th = np.arctan2(H[1, 0] - H[0, 1], H[0, 0] + H[1, 1])
    c, s = np.cos(th), np.sin(th)
    R = np.array([[c, -s], [s, c]])
    return R, qc - R @ pc


def best_fit_reflection(P: np.ndarray, Q: np.ndarray):
    """Orthogonal det=-1 transform (M, t) minimizing sum |M p + t - q|^2.

    Same procrustean fit as the rotation, with the determinant sign switched.
    Coincident point sets are degenerate; any reflection through the centroid
    is returned in that case.
    """
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if len(P) != len(Q) or len(P) < 2:
        raise ValueError("need matching point lists with at least 2 points")
    pc, qc = P.mean(axis=0), Q.mean(axis=0)
    H = (Q - qc).T @ (P - pc)
    th = np.arctan2(H[0, 1] + H[1, 0], H[0, 0] - H[1, 1])
    c, s = np.cos(th), np.sin(th)
    M = np.array([[c, s], [s, -c]])
    return M, qc - M @ pc


def _batched_rotations(cov: np.ndarray) -> np.ndarray:
    """Closed-form 2x2 Procrustes rotations for stacked covariances H."""
    th = np.arctan2(cov[:, 1, 0] - cov[:, 0, 1], cov[:, 0, 0] + cov[:, 1, 1])
    c, s = np.cos(th), np.sin(th)
    R = np.empty_like(cov)
    R[:, 0, 0] = c
    R[:, 0, 1] = -s
    R[:, 1, 0] = s
    R[:, 1, 1] = c
    return R


# ----------------------------------------------------------------- LSCM init

def lscm_init(chart: UVChart, pin_pair: Optional[tuple] = None) -> UVChart:
    """Least-squares conformal map with two pinned boundary vertices.

    Pins default to the two boundary vertices at maximal mutual graph
    distance (double sweep), placed at (0,0) and (d,0) where d is their
    geodesic distance along chart edges.
    """
    if not chart.is_disk():
        raise TopologyError("LSCM needs a disk patch (after cuts)")
    n = chart.n_uv
    if pin_pair is None:
        pin_pair = _farthest_boundary_pair(chart)
    p0, p1, dpin = pin_pair

    ref = chart.ref_shapes[0]
    T = len(chart.faces)
    # gradients of barycentric hats in the reference shape
    grad = _bary_gradients(ref)  # (T, 3, 2)
    area = 0.5 * np.abs(
        (ref[:, 1, 0] - ref[:, 0, 0]) * (ref[:, 2, 1] - ref[:, 0, 1])
        - (ref[:, 1, 1] - ref[:, 0, 1]) * (ref[:, 2, 0] - ref[:, 0, 0])
    )
    w = np.sqrt(np.maximum(area, 1e-300))

    rows = []
    cols = []
    vals = []
    # residuals per triangle: (du/dx - dv/dy) and (du/dy + dv/dx), u vars at
    # column id, v vars at n + id
    for t in range(T):
        ids = chart.corner_uv[t]
        g = grad[t]
        r0 = 2 * t
        r1 = 2 * t + 1
        for k in range(3):
            rows += [r0, r0, r1, r1]
            cols += [ids[k], n + ids[k], ids[k], n + ids[k]]
            vals += [w[t] * g[k, 0], -w[t] * g[k, 1], w[t] * g[k, 1], w[t] * g[k, 0]]
    A = coo_matrix((vals, (rows, cols)), shape=(2 * T, 2 * n)).tocsc()

    pin_cols = np.array([p0, n + p0, p1, n + p1])
    pin_vals = np.array([0.0, 0.0, dpin, 0.0])
    b = -A[:, pin_cols] @ pin_vals
    free = np.setdiff1d(np.arange(2 * n), pin_cols)
    Af = A[:, free].tocsc()
    AtA = (Af.T @ Af).tocsc() + 1e-14 * identity(len(free), format="csc")
    x = splu(AtA).solve(np.asarray(Af.T @ b).ravel())

    full = np.zeros(2 * n)
    full[pin_cols] = pin_vals
    full[free] = x
    chart.uv = np.stack([full[:n], full[n:]], axis=1)

    # enforce the mesh orientation (LSCM may return the mirror image)
    if chart.uv_areas().sum() < 0:
        chart.uv[:, 0] *= -1.0
    return chart


def _bary_gradients(ref: np.ndarray) -> np.ndarray:
    """(T, 3, 2) gradients of the barycentric hat functions of 2D triangles."""
    a, b, c = ref[:, 0], ref[:, 1], ref[:, 2]
    area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    area2 = np.where(np.abs(area2) < 1e-300, 1e-300, area2)

    def perp(v):
        return np.stack([-v[:, 1], v[:, 0]], axis=1)

    g = np.empty((len(ref), 3, 2))
    g[:, 0] = perp(c - b) / area2[:, None]
    g[:, 1] = perp(a - c) / area2[:, None]
    g[:, 2] = perp(b - a) / area2[:, None]
    return g


def _farthest_boundary_pair(chart: UVChart):
    bverts = chart.boundary_uv_vertices()
    if len(bverts) < 2:
        raise TopologyError("chart needs at least 2 boundary vertices")
    rows = []
    cols = []
    vals = []
    pos3 = chart.pose_tris[0]
    for t in range(len(chart.faces)):
        for k in range(3):
            a = int(chart.corner_uv[t, k])
            b = int(chart.corner_uv[t, (k + 1) % 3])
            ln = float(np.linalg.norm(pos3[t, (k + 1) % 3] - pos3[t, k]))
            rows.append(a)
            cols.append(b)
            vals.append(ln)
    g = coo_matrix((vals, (rows, cols)), shape=(chart.n_uv, chart.n_uv))
    d0 = dijkstra(g, directed=False, indices=bverts[0])
    p0 = int(bverts[np.argmax(np.where(np.isfinite(d0[bverts]), d0[bverts], -1))])
    d1 = dijkstra(g, directed=False, indices=p0)
    p1 = int(bverts[np.argmax(np.where(np.isfinite(d1[bverts]), d1[bverts], -1))])
    return p0, p1, float(d1[p1])


# ------------------------------------------------------------------ local step

class _LocalState:
    """Frozen local-step quantities for one chart."""

    __slots__ = ("cu", "cv", "su", "sv", "rot_targets", "valid", "uv_edges")

    def __init__(self, chart: UVChart):
        uvtri = chart.uv[chart.corner_uv]  # (T, 3, 2)
        a, b, c = uvtri[:, 0], uvtri[:, 1], uvtri[:, 2]
        area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        self.valid = np.abs(area2) * 0.5 > DEGENERATE_UV_AREA
        chart.degenerate_flags = ~self.valid
        area2s = np.where(self.valid, area2, 1.0)

        def perp(v):
            return np.stack([-v[:, 1], v[:, 0]], axis=1)

        ga = perp(c - b) / area2s[:, None]
        gb = perp(a - c) / area2s[:, None]
        gc = perp(b - a) / area2s[:, None]
        # barycentric steps of the unit grain frame: G_u - G and G_v - G
        self.cu = np.stack([ga[:, 0], gb[:, 0], gc[:, 0]], axis=1)  # (T, 3)
        self.cv = np.stack([ga[:, 1], gb[:, 1], gc[:, 1]], axis=1)

        # per-pose 3D images of the unit frame steps -> stretch targets
        self.su = []
        self.sv = []
        for pt in chart.pose_tris:
            j1 = np.einsum("tk,tkj->tj", self.cu, pt)
            j2 = np.einsum("tk,tkj->tj", self.cv, pt)
            self.su.append(np.linalg.norm(j1, axis=1))
            self.sv.append(np.linalg.norm(j2, axis=1))

        # ARAP rotations per pose: covariance of uv edges vs reference edges
        self.uv_edges = uvtri[:, [1, 2, 0]] - uvtri  # (T, 3, 2) AB, BC, CA
        self.rot_targets = []
        for ref in chart.ref_shapes:
            re = ref[:, [1, 2, 0]] - ref
            cov = np.einsum("tke,tkf->tef", self.uv_edges, re)
            R = _batched_rotations(cov)
            self.rot_targets.append(np.einsum("tef,tkf->tke", R, re))


def _fit_seam(chart_set, pair: SeamPair):
    P = chart_set.charts[pair.chart_a].uv[pair.uv_a]
    Q = chart_set.charts[pair.chart_b].uv[pair.uv_b]
    M, t = best_fit_reflection(P, Q)
    MP = P @ M.T + t
    MinvQ = (Q - t) @ M  # M orthogonal: M^-1 = M^T; reflection: M^T = M
    q_t = 0.5 * (MP + Q)
    p_t = 0.5 * (P + MinvQ)
    return p_t, q_t


def _fit_dart(chart_set, dart: DartCorrespondence):
    ch = chart_set.charts[dart.chart]
    P = ch.uv[dart.uv_p]
    Q = ch.uv[dart.uv_q]
    tip = ch.uv[dart.tip_uv]
    R = 0.5 * (P + Q) - tip
    # best-fit line through the tip: principal direction of the midpoints
    C = R.T @ R
    wv, ev = np.linalg.eigh(C)
    d = ev[:, int(np.argmax(wv))]
    if np.linalg.norm(d) < 1e-12:
        d = np.array([1.0, 0.0])
    refl = 2.0 * np.outer(d, d) - np.eye(2)
    Pbar = (P - tip) @ refl.T + tip
    Qbar = (Q - tip) @ refl.T + tip
    q_t = 0.5 * (Pbar + Q)
    p_t = 0.5 * (P + Qbar)
    return p_t, q_t


# ----------------------------------------------------------------- chart sets

class ChartSet:
    """Charts coupled by seam pairs and darts, solved jointly."""

    def __init__(self, charts: Sequence[UVChart], seams: Sequence[SeamPair] = (),
                 darts: Sequence[DartCorrespondence] = (), weights: Optional[Weights] = None,
                 grain: Optional[GrainSpec] = None):
        self.charts = list(charts)
        self.seams = list(seams)
        self.darts = list(darts)
        self.weights = weights or Weights()
        self.grain = grain
        self.offsets = []
        off = 0
        for c in self.charts:
            self.offsets.append(off)
            off += 2 * c.n_uv
        self.n_vars = off

    def gather(self) -> np.ndarray:
        x = np.zeros(self.n_vars)
        for c, off in zip(self.charts, self.offsets):
            x[off:off + c.n_uv] = c.uv[:, 0]
            x[off + c.n_uv:off + 2 * c.n_uv] = c.uv[:, 1]
        return x

    def scatter(self, x: np.ndarray):
        for c, off in zip(self.charts, self.offsets):
            c.uv[:, 0] = x[off:off + c.n_uv]
            c.uv[:, 1] = x[off + c.n_uv:off + 2 * c.n_uv]

    def ucol(self, chart_idx: int, uv_ids) -> np.ndarray:
        return self.offsets[chart_idx] + np.asarray(uv_ids, dtype=np.int64)

    def vcol(self, chart_idx: int, uv_ids) -> np.ndarray:
        c = self.charts[chart_idx]
        return self.offsets[chart_idx] + c.n_uv + np.asarray(uv_ids, dtype=np.int64)

    # ------------------------------------------------------------- energies

    def energies(self) -> EnergyBreakdown:
        w = self.weights
        eu = ev = er = 0.0
        dev_all = []
        dens_all = []
        su_all = []
        sv_all = []
        for ch in self.charts:
            st = _LocalState(ch)
            n_poses = len(ch.pose_tris)
            su = np.mean(st.su, axis=0)
            sv = np.mean(st.sv, axis=0)
            for p in range(n_poses):
                eu += w.stretch * float(((st.su[p] - 1.0) ** 2)[st.valid].sum()) / n_poses
                ev += w.stretch * float(((st.sv[p] - 1.0) ** 2)[st.valid].sum()) / n_poses
                diff = st.uv_edges - st.rot_targets[p]
                er += w.rigid * float((diff[st.valid] ** 2).sum()) / n_poses
            safe_su = np.maximum(su, 1e-12)
            safe_sv = np.maximum(sv, 1e-12)
            dev = np.maximum(np.abs(1.0 / safe_su - 1.0), np.abs(1.0 / safe_sv - 1.0))
            dev[~st.valid] = 0.0
            dev_all.append(dev)
            d0 = st.uv_edges - st.rot_targets[0]
            dens_all.append(w.rigid * (d0 ** 2).sum(axis=(1, 2)) / np.maximum(ch.area3d(), 1e-300))
            su_all.append(su)
            sv_all.append(sv)
        es = 0.0
        for pair in self.seams:
            p_t, q_t = _fit_seam(self, pair)
            P = self.charts[pair.chart_a].uv[pair.uv_a]
            Q = self.charts[pair.chart_b].uv[pair.uv_b]
            es += w.seam * float(((P - p_t) ** 2).sum() + ((Q - q_t) ** 2).sum())
        ed = 0.0
        for dart in self.darts:
            p_t, q_t = _fit_dart(self, dart)
            ch = self.charts[dart.chart]
            P = ch.uv[dart.uv_p]
            Q = ch.uv[dart.uv_q]
            ed += w.dart * float(((P - p_t) ** 2).sum() + ((Q - q_t) ** 2).sum())
        return EnergyBreakdown(
            stretch_u=eu, stretch_v=ev, rigid=er, seam=es, dart=ed,
            stretch_dev=np.concatenate(dev_all) if dev_all else np.zeros(0),
            rigid_density=np.concatenate(dens_all) if dens_all else np.zeros(0),
            s_u=np.concatenate(su_all) if su_all else np.zeros(0),
            s_v=np.concatenate(sv_all) if sv_all else np.zeros(0),
        )

    # ---------------------------------------------------------- global step

    def _assemble(self):
        w = self.weights
        blocks_r: list = []
        blocks_c: list = []
        blocks_v: list = []
        rhs_parts: list = []
        nrow = 0

        sw = np.sqrt(w.stretch)
        rw = np.sqrt(w.rigid)
        for ci, ch in enumerate(self.charts):
            st = _LocalState(ch)
            su = np.mean(st.su, axis=0)
            sv = np.mean(st.sv, axis=0)
            rot = np.mean(st.rot_targets, axis=0)
            tv = np.nonzero(st.valid)[0]
            nv = len(tv)
            if nv == 0:
                continue
            ucols = self.ucol(ci, ch.corner_uv[tv])  # (nv, 3)
            vcols = self.vcol(ci, ch.corner_uv[tv])

            # stretch: one u row and one v row per triangle, 3 coefficients each
            r = nrow + np.arange(2 * nv)
            blocks_r.append(np.repeat(r, 3))
            blocks_c.append(np.concatenate([ucols.ravel(), vcols.ravel()]))
            blocks_v.append(sw * np.concatenate([st.cu[tv].ravel(), st.cv[tv].ravel()]))
            rhs_parts.append(sw * np.concatenate([su[tv], sv[tv]]))
            nrow += 2 * nv

            # rigidity: 3 edges x (u, v) rows per triangle, 2 coefficients each
            k2 = np.array([1, 2, 0])
            e_head_u = ucols[:, k2]  # (nv, 3)
            e_tail_u = ucols
            e_head_v = vcols[:, k2]
            e_tail_v = vcols
            r = nrow + np.arange(6 * nv)
            blocks_r.append(np.repeat(r, 2))
            cc = np.empty((6 * nv, 2), dtype=np.int64)
            cc[0::2, 0] = e_head_u.ravel()
            cc[0::2, 1] = e_tail_u.ravel()
            cc[1::2, 0] = e_head_v.ravel()
            cc[1::2, 1] = e_tail_v.ravel()
            blocks_c.append(cc.ravel())
            vv = np.empty((6 * nv, 2))
            vv[:, 0] = rw
            vv[:, 1] = -rw
            blocks_v.append(vv.ravel())
            bb = np.empty((6 * nv,))
            bb[0::2] = rot[tv][:, :, 0].ravel()
            bb[1::2] = rot[tv][:, :, 1].ravel()
            rhs_parts.append(rw * bb)
            nrow += 6 * nv

        def point_target_rows(ucols, vcols, targets, weight):
            nonlocal nrow
            k = len(ucols)
            r = nrow + np.arange(2 * k)
            blocks_r.append(r)
            cc = np.empty(2 * k, dtype=np.int64)
            cc[0::2] = ucols
            cc[1::2] = vcols
            blocks_c.append(cc)
            blocks_v.append(np.full(2 * k, weight))
            rhs_parts.append(weight * targets.ravel())
            nrow += 2 * k

        if w.seam > 0:
            qw = np.sqrt(w.seam)
            for pair in self.seams:
                p_t, q_t = _fit_seam(self, pair)
                point_target_rows(self.ucol(pair.chart_a, pair.uv_a),
                                  self.vcol(pair.chart_a, pair.uv_a), p_t, qw)
                point_target_rows(self.ucol(pair.chart_b, pair.uv_b),
                                  self.vcol(pair.chart_b, pair.uv_b), q_t, qw)
        if w.dart > 0:
            dw = np.sqrt(w.dart)
            for dart in self.darts:
                if len(dart.uv_p) == 0:
                    continue
                p_t, q_t = _fit_dart(self, dart)
                point_target_rows(self.ucol(dart.chart, dart.uv_p),
                                  self.vcol(dart.chart, dart.uv_p), p_t, dw)
                point_target_rows(self.ucol(dart.chart, dart.uv_q),
                                  self.vcol(dart.chart, dart.uv_q), q_t, dw)

        A = coo_matrix(
            (np.concatenate(blocks_v), (np.concatenate(blocks_r), np.concatenate(blocks_c))),
            shape=(nrow, self.n_vars),
        ).tocsr()
        return A, np.concatenate(rhs_parts)

    def global_step(self) -> np.ndarray:
        A, b = self._assemble()
        x0 = self.gather()
        AtA = (A.T @ A).tocsc()
        diag_scale = max(float(AtA.diagonal().mean()), 1e-12)
        eps = 1e-10 * diag_scale
        reg = AtA + eps * identity(self.n_vars, format="csc")
        rhs = A.T @ b + eps * x0
        try:
            x = splu(reg).solve(rhs)
        except RuntimeError:
            reg = AtA + (1e-4 * diag_scale) * identity(self.n_vars, format="csc")
            try:
                x = splu(reg).solve(A.T @ b + (1e-4 * diag_scale) * x0)
            except RuntimeError as exc:
                raise SolverError(f"global solve failed: {exc}") from exc
        return x


# -------------------------------------------------------------------- grain

def grain_axes_2d(chart: UVChart, spec: GrainSpec):
    """Per-triangle 2D image of the desired 3D axis, and weights (3D areas)."""
    tri3 = chart.pose_tris[0]
    e1 = tri3[:, 1] - tri3[:, 0]
    e2 = tri3[:, 2] - tri3[:, 0]
    n = np.cross(e1, e2)
    nn = np.linalg.norm(n, axis=1)
    n = n / np.maximum(nn, 1e-300)[:, None]
    a = spec.axis3d[None, :] - np.einsum("ij,j->i", n, spec.axis3d)[:, None] * n
    an = np.linalg.norm(a, axis=1)
    ok = an > 1e-6
    # coordinates of a in the (e1, e2) frame: solve 2x2 Gram system
    g11 = np.einsum("ij,ij->i", e1, e1)
    g12 = np.einsum("ij,ij->i", e1, e2)
    g22 = np.einsum("ij,ij->i", e2, e2)
    b1 = np.einsum("ij,ij->i", a, e1)
    b2 = np.einsum("ij,ij->i", a, e2)
    det = np.maximum(g11 * g22 - g12 * g12, 1e-300)
    s = (b1 * g22 - b2 * g12) / det
    t = (g11 * b2 - g12 * b1) / det
    uvtri = chart.uv[chart.corner_uv]
    a2 = s[:, None] * (uvtri[:, 1] - uvtri[:, 0]) + t[:, None] * (uvtri[:, 2] - uvtri[:, 0])
    a2n = np.linalg.norm(a2, axis=1)
    ok &= a2n > 1e-12
    a2 = np.where(ok[:, None], a2 / np.maximum(a2n, 1e-300)[:, None], 0.0)
    return a2, np.where(ok, chart.area3d(), 0.0), ok


def best_fit_axis_angle(a2: np.ndarray, weights: np.ndarray) -> Optional[float]:
    """Area-weighted axis mean (angle-doubled, since grain has no sign)."""
    z = np.sum(weights * np.exp(2j * np.arctan2(a2[:, 1], a2[:, 0])))
    if abs(z) < 1e-12:
        return None
    return float(np.angle(z) / 2.0)


def align_grain(chart: UVChart, spec: GrainSpec) -> float:
    """Rigidly rotate the chart so the V axis matches the best-fit grain axis.

    Returns the applied rotation angle; no-op (0.0) when the axis is nearly
    perpendicular to the whole patch.
    """
    a2, wts, ok = grain_axes_2d(chart, spec)
    if not ok.any() or wts.sum() <= 0:
        return 0.0
    phi = best_fit_axis_angle(a2[ok], wts[ok])
    if phi is None:
        return 0.0
    delta = np.pi / 2 - phi
    # stay in (-pi/2, pi/2]: V direction is an axis
    delta = (delta + np.pi / 2) % np.pi - np.pi / 2
    ctr = chart.uv.mean(axis=0)
    c, s = np.cos(delta), np.sin(delta)
    R = np.array([[c, -s], [s, c]])
    chart.uv = (chart.uv - ctr) @ R.T + ctr
    return float(delta)


# ------------------------------------------------------------------ pipeline

@dataclass
class SolveReport:
    iterations: int
    energy: float
    energy_history: list
    converged: bool


def solve_scale(charts: Sequence[UVChart]) -> float:
    """Mean 3D edge length across charts: the canonical solver unit.

    The stretch residuals are dimensionless ratios while the rigid and
    seam/dart residuals are squared lengths, so the weight balance only means
    what it says at unit edge length; solves normalize to it internally.
    """
    total = 0.0
    count = 0
    for ch in charts:
        ref = ch.ref_shapes[0]
        e = ref[:, [1, 2, 0]] - ref
        total += float(np.linalg.norm(e, axis=2).sum())
        count += 3 * len(ref)
    return total / max(count, 1)


class _ScaledSolve:
    """Context: charts rescaled to unit mean edge length and back."""

    def __init__(self, charts: Sequence[UVChart]):
        self.charts = list(charts)
        self.lam = max(solve_scale(self.charts), 1e-300)

    def __enter__(self):
        s = 1.0 / self.lam
        for ch in self.charts:
            ch.uv *= s
            ch.pose_tris = [pt * s for pt in ch.pose_tris]
            ch.ref_shapes = [rs * s for rs in ch.ref_shapes]
        return self

    def __exit__(self, *exc):
        s = self.lam
        for ch in self.charts:
            ch.uv *= s
            ch.pose_tris = [pt * s for pt in ch.pose_tris]
            ch.ref_shapes = [rs * s for rs in ch.ref_shapes]
        return False


def optimize(chart_set: ChartSet, max_iterations: int = MAX_ITERATIONS,
             tol: float = CONVERGENCE_TOL, monotone_guard: bool = True,
             normalize_scale: bool = True) -> SolveReport:
    """Local-global iterations: refit local frames/rotations/reflections, then
    one sparse solve; optional backtracking keeps the true energy monotone."""
    if normalize_scale:
        with _ScaledSolve(chart_set.charts):
            return optimize(chart_set, max_iterations, tol, monotone_guard,
                            normalize_scale=False)
    grain_on = chart_set.grain is not None and chart_set.grain.enabled
    e_prev = chart_set.energies().total
    hist = [e_prev]
    # absolute floor: energies this far below the 100%-deformation scale are zero
    w = chart_set.weights
    e_scale = sum(
        w.stretch * 2 * len(ch.faces) + w.rigid * float((ch.ref_shapes[0] ** 2).sum())
        for ch in chart_set.charts
    )
    floor = 1e-16 * max(e_scale, 1e-30)
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        x0 = chart_set.gather()
        x = chart_set.global_step()
        chart_set.scatter(x)
        if monotone_guard and not grain_on:
            e_new = chart_set.energies().total
            back = 0
            while e_new > e_prev * (1 + 1e-12) + 1e-300 and back < 40:
                x = 0.5 * (x + x0)
                chart_set.scatter(x)
                e_new = chart_set.energies().total
                back += 1
        if grain_on:
            for ch in chart_set.charts:
                align_grain(ch, chart_set.grain)
        e_new = chart_set.energies().total
        hist.append(e_new)
        if e_new <= floor or abs(e_prev - e_new) <= tol * max(abs(e_prev), 1e-30):
            converged = True
            e_prev = e_new
            break
        e_prev = e_new
    return SolveReport(iterations=it, energy=e_prev, energy_history=hist, converged=converged)


def flatten_patch(
    mesh: TriMesh,
    faces,
    cut_edges=frozenset(),
    weights: Optional[Weights] = None,
    grain: Optional[GrainSpec] = None,
    pose_vertices: Optional[Sequence] = None,
    seams: Sequence[SeamPair] = (),
    darts: Sequence[DartCorrespondence] = (),
    max_iterations: int = MAX_ITERATIONS,
    tol: float = CONVERGENCE_TOL,
) -> tuple:
    """LSCM init plus textile local-global optimization for one patch.

    Seam pairs must reference chart 0 (both sides within this patch); pairs
    involving other charts belong to joint optimization.
    """
    chart = UVChart(mesh, faces, cut_edges, pose_vertices)
    lscm_init(chart)
    if grain is not None and grain.enabled:
        align_grain(chart, grain)
    cs = ChartSet([chart], seams=seams, darts=darts, weights=weights, grain=grain)
    report = optimize(cs, max_iterations=max_iterations, tol=tol)
    return chart, report


def joint_optimize(
    charts: Sequence[UVChart],
    seams: Sequence[SeamPair] = (),
    darts: Sequence[DartCorrespondence] = (),
    weights: Optional[Weights] = None,
    grain: Optional[GrainSpec] = None,
    max_iterations: int = MAX_ITERATIONS,
    tol: float = CONVERGENCE_TOL,
) -> tuple:
    """One coupled local-global run for all charts including cross-chart seams."""
    cs = ChartSet(list(charts), seams=seams, darts=darts, weights=weights, grain=grain)
    report = optimize(cs, max_iterations=max_iterations, tol=tol)
    return cs, report


# ----------------------------------------------------------------- measureing

def stretch_energy(chart: UVChart, weights: Optional[Weights] = None):
    """(E_stretch,u, E_stretch,v) at the current UV (local frames refit)."""
    w = weights or Weights()
    st = _LocalState(chart)
    n_poses = len(chart.pose_tris)
    eu = sum(w.stretch * float(((st.su[p] - 1.0) ** 2)[st.valid].sum()) for p in range(n_poses)) / n_poses
    ev = sum(w.stretch * float(((st.sv[p] - 1.0) ** 2)[st.valid].sum()) for p in range(n_poses)) / n_poses
    return eu, ev


def rigid_energy(chart: UVChart, weights: Optional[Weights] = None) -> float:
    w = weights or Weights()
    st = _LocalState(chart)
    n_poses = len(chart.pose_tris)
    out = 0.0
    for p in range(n_poses):
        diff = st.uv_edges - st.rot_targets[p]
        out += w.rigid * float((diff[st.valid] ** 2).sum())
    return out / n_poses


def seam_energy(chart_set: ChartSet) -> float:
    w = chart_set.weights
    out = 0.0
    for pair in chart_set.seams:
        p_t, q_t = _fit_seam(chart_set, pair)
        P = chart_set.charts[pair.chart_a].uv[pair.uv_a]
        Q = chart_set.charts[pair.chart_b].uv[pair.uv_b]
        out += w.seam * float(((P - p_t) ** 2).sum() + ((Q - q_t) ** 2).sum())
    return out


def dart_energy(chart_set: ChartSet) -> float:
    w = chart_set.weights
    out = 0.0
    for dart in chart_set.darts:
        if len(dart.uv_p) == 0:
            continue
        p_t, q_t = _fit_dart(chart_set, dart)
        ch = chart_set.charts[dart.chart]
        P = ch.uv[dart.uv_p]
        Q = ch.uv[dart.uv_q]
        out += w.dart * float(((P - p_t) ** 2).sum() + ((Q - q_t) ** 2).sum())
    return out


def measure(chart: UVChart, weights: Optional[Weights] = None) -> EnergyBreakdown:
    """Energy breakdown plus per-triangle stress quantities for one chart."""
    cs = ChartSet([chart], weights=weights or Weights())
    return cs.energies()


# --------------------------------------------------------------- injectivity

def injectivity_check(chart: UVChart, brute_force: bool = False):
    """(ok, flips, overlaps): flipped-triangle ids and overlapping pairs."""
    areas = chart.uv_areas()
    flips = np.nonzero(areas <= DEGENERATE_UV_AREA)[0].tolist()
    tris = chart.uv[chart.corner_uv]
    pairs = _all_pairs(len(tris)) if brute_force else _grid_pairs(tris)
    overlaps = []
    corner = chart.corner_uv
    for i, j in pairs:
        if len(set(corner[i].tolist()) & set(corner[j].tolist())):
            continue
        if _tri_overlap(tris[i], tris[j]):
            overlaps.append((int(i), int(j)))
    ok = not flips and not overlaps
    return ok, flips, overlaps


def _all_pairs(n):
    for i in range(n):
        for j in range(i + 1, n):
            yield i, j


def _grid_pairs(tris: np.ndarray):
    lo = tris.min(axis=1)
    hi = tris.max(axis=1)
    ext = hi - lo
    cell = max(float(np.median(ext[:, 0]) + np.median(ext[:, 1])), 1e-12)
    buckets: dict = {}
    for t in range(len(tris)):
        i0, j0 = np.floor(lo[t] / cell).astype(int)
        i1, j1 = np.floor(hi[t] / cell).astype(int)
        for ii in range(i0, i1 + 1):
            for jj in range(j0, j1 + 1):
                buckets.setdefault((ii, jj), []).append(t)
    seen = set()
    for members in buckets.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                i, j = members[a], members[b]
                key = (min(i, j), max(i, j))
                if key in seen:
                    continue
                seen.add(key)
                if (lo[i] <= hi[j]).all() and (lo[j] <= hi[i]).all():
                    yield key


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _seg_cross(p1, p2, p3, p4, eps=1e-12):
    d1 = _orient(p3, p4, p1)
    d2 = _orient(p3, p4, p2)
    d3 = _orient(p1, p2, p3)
    d4 = _orient(p1, p2, p4)
    return ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and (
        (d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)
    )


def _point_in_tri(p, tri, eps=1e-12):
    d0 = _orient(tri[0], tri[1], p)
    d1 = _orient(tri[1], tri[2], p)
    d2 = _orient(tri[2], tri[0], p)
    return (d0 > eps and d1 > eps and d2 > eps) or (d0 < -eps and d1 < -eps and d2 < -eps)


def _tri_overlap(t1, t2) -> bool:
    """Positive-area intersection of two UV triangles (shared-vertex pairs are
    excluded by the caller)."""
    scale = max(np.abs(t1).max(), np.abs(t2).max(), 1.0)
    eps = 1e-12 * scale * scale
    for i in range(3):
        for j in range(3):
            if _seg_cross(t1[i], t1[(i + 1) % 3], t2[j], t2[(j + 1) % 3], eps):
                return True
    for i in range(3):
        if _point_in_tri(t1[i], t2, eps) or _point_in_tri(t2[i], t1, eps):
            return True
    return False
