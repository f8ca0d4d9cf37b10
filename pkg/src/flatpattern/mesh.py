"""Triangle mesh core: loading, validation, symmetry splitting and per-face frames.

All lengths are millimetres. Meshes are immutable after construction except for
explicit vertex relocation through :meth:`TriMesh.with_vertices`, which returns
a new mesh sharing connectivity caches where safe.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

MIN_INTERIOR_ANGLE_DEG = 10.0
_AREA_EPS = 1e-12


class MeshError(ValueError):
    """Raised for unusable mesh input (parse errors, topology, quality)."""

    def __init__(self, message: str, report: Optional[dict] = None):
        super().__init__(message)
        self.report = report or {}


@dataclass(frozen=True)
class SymmetryPlane:
    """Mirror plane given by a point and a unit normal."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.point, dtype=np.float64).reshape(3)
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        nn = np.linalg.norm(n)
        if nn < 1e-12:
            raise ValueError("plane normal must be nonzero")
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "normal", n / nn)

    @staticmethod
    def default() -> "SymmetryPlane":
        # x = 0 unless the caller supplies one explicitly
        return SymmetryPlane(np.zeros(3), np.array([1.0, 0.0, 0.0]))

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return (pts - self.point) @ self.normal

    def reflect(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d = self.signed_distance(pts)
        out = pts - 2.0 * d[:, None] * self.normal
        return out.reshape(np.shape(points))


@dataclass(frozen=True)
class SurfacePoint:
    """Point on the surface: face index plus barycentric coordinates."""

    face: int
    bary: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.bary)
        if len(b) != 3:
            raise ValueError("bary must have 3 components")
        if min(b) < -1e-9 or abs(sum(b) - 1.0) > 1e-6:
            raise ValueError(f"invalid barycentric coordinates {b}")
        object.__setattr__(self, "bary", b)
        object.__setattr__(self, "face", int(self.face))

    def position(self, mesh: "TriMesh") -> np.ndarray:
        tri = mesh.vertices[mesh.faces[self.face]]
        return np.asarray(self.bary) @ tri

    def to_json(self) -> dict:
        return {"face": self.face, "bary": list(self.bary)}

    @staticmethod
    def from_json(obj: dict) -> "SurfacePoint":
        return SurfacePoint(int(obj["face"]), tuple(obj["bary"]))


def _corner_components(n_vertices: int, faces: np.ndarray, open_edge_mask) -> np.ndarray:
    """Group face corners into wedges: corners of the same vertex are merged
    when the shared face edge is crossable (``open_edge_mask`` true).

    Returns an array (F, 3) of wedge ids. With no cuts this detects
    non-manifold vertices (vertex with >1 wedge that is not explained by
    boundary); with cuts it is the chart vertex-duplication rule.
    """
    F = len(faces)
    parent = np.arange(3 * F)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    edge_faces, edge_keys = _edge_incidence(faces)
    for eid, fcs in enumerate(edge_faces):
        if len(fcs) != 2 or not open_edge_mask(eid):
            continue
        (f0, k0), (f1, k1) = fcs
        a, b = edge_keys[eid]
        # corner local index of vertex v in face f
        for v in (a, b):
            c0 = 3 * f0 + int(np.where(faces[f0] == v)[0][0])
            c1 = 3 * f1 + int(np.where(faces[f1] == v)[0][0])
            union(c0, c1)

    roots = np.array([find(i) for i in range(3 * F)])
    _, comp = np.unique(roots, return_inverse=True)
    return comp.reshape(F, 3)


def _edge_incidence(faces: np.ndarray):
    """Map each undirected edge to the (face, local-edge) pairs using it.

    Returns (edge_faces, edge_keys): edge_faces[i] is a list of (face, k)
    where local edge k joins corners k and (k+1)%3; edge_keys[i] = (a, b)
    with a < b.
    """
    F = len(faces)
    ii = np.repeat(np.arange(F), 3)
    kk = np.tile(np.arange(3), F)
    a = faces[ii, kk]
    b = faces[ii, (kk + 1) % 3]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    keys = lo.astype(np.int64) * (faces.max() + 1) + hi
    order = np.argsort(keys, kind="stable")
    edge_faces = []
    edge_keys = []
    i = 0
    keys_sorted = keys[order]
    while i < len(order):
        j = i
        while j < len(order) and keys_sorted[j] == keys_sorted[i]:
            j += 1
        members = [(int(ii[order[t]]), int(kk[order[t]])) for t in range(i, j)]
        edge_faces.append(members)
        e0 = order[i]
        edge_keys.append((int(lo[e0]), int(hi[e0])))
        i = j
    return edge_faces, edge_keys


class TriMesh:
    """Validated triangle mesh with per-face tangent frames and areas."""

    def __init__(self, vertices, faces, validate: bool = True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise MeshError("face index out of range")
        self._build()
        if validate:
            self.validate()

    # ------------------------------------------------------------------ build

    def _build(self):
        V, F = len(self.vertices), len(self.faces)
        tri = self.vertices[self.faces]
        e0 = tri[:, 1] - tri[:, 0]
        e1 = tri[:, 2] - tri[:, 0]
        n = np.cross(e0, e1)
        n2 = np.linalg.norm(n, axis=1)
        self.face_areas = 0.5 * n2
        safe = np.maximum(n2, 1e-300)
        self.face_normals = n / safe[:, None]
        u = e0 / np.maximum(np.linalg.norm(e0, axis=1), 1e-300)[:, None]
        v = np.cross(self.face_normals, u)
        self.face_frames = np.stack([u, v], axis=1)  # (F, 2, 3)

        # undirected edge table
        ii = np.repeat(np.arange(F), 3)
        kk = np.tile(np.arange(3), F)
        a = self.faces[ii, kk]
        b = self.faces[ii, (kk + 1) % 3]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        enc = lo.astype(np.int64) * max(V, 1) + hi
        uniq, inv, counts = np.unique(enc, return_inverse=True, return_counts=True)
        self.edges = np.stack([uniq // max(V, 1), uniq % max(V, 1)], axis=1)  # (E, 2)
        self.edge_counts = counts
        self.face_edge_ids = inv.reshape(F, 3)  # edge id of local edge k

        # for interior edges, the two adjacent faces
        E = len(self.edges)
        ef = np.full((E, 2), -1, dtype=np.int64)
        order = np.argsort(inv, kind="stable")
        pos = np.zeros(E, dtype=np.int64)
        for idx in order:
            e = inv[idx]
            if pos[e] < 2:
                ef[e, pos[e]] = ii[idx]
                pos[e] += 1
        self.edge_faces = ef
        self._directed = (a, b, ii)
        self._boundary_loops: Optional[list] = None
        self._vertex_adj: Optional[coo_matrix] = None

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        """Same connectivity, new positions (no re-validation)."""
        m = TriMesh.__new__(TriMesh)
        m.vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        m.faces = self.faces
        m._build()
        return m

    # ------------------------------------------------------------- validation

    def validate(self):
        report: dict = {}
        V, F = len(self.vertices), len(self.faces)
        if F == 0:
            raise MeshError("empty mesh")

        degenerate = np.nonzero(self.face_areas < _AREA_EPS)[0]
        if len(degenerate):
            report["degenerate_faces"] = degenerate.tolist()
            raise MeshError(f"{len(degenerate)} zero-area face(s)", report)

        bad_edges = np.nonzero(self.edge_counts > 2)[0]
        if len(bad_edges):
            report["nonmanifold_edges"] = self.edges[bad_edges].tolist()
            raise MeshError("non-manifold edges", report)

        # consistent orientation: no directed edge may repeat
        a, b, _ = self._directed
        enc = a.astype(np.int64) * V + b
        if len(np.unique(enc)) != len(enc):
            raise MeshError("inconsistent face orientation (repeated directed edge)")

        # vertex-manifold: one wedge per vertex once boundary edges are accounted for
        comp = _corner_components(V, self.faces, lambda eid: True)
        wedge_count = np.zeros(V, dtype=np.int64)
        seen = {}
        for f in range(F):
            for k in range(3):
                key = (self.faces[f, k], comp[f, k])
                if key not in seen:
                    seen[key] = True
                    wedge_count[self.faces[f, k]] += 1
        pinched = np.nonzero(wedge_count > 1)[0]
        if len(pinched):
            report["nonmanifold_vertices"] = pinched.tolist()
            raise MeshError("non-manifold vertices", report)

        angles = self.face_angles()
        min_angle = np.degrees(angles.min())
        if min_angle <= MIN_INTERIOR_ANGLE_DEG:
            bad = np.nonzero(np.degrees(angles.min(axis=1)) <= MIN_INTERIOR_ANGLE_DEG)[0]
            report["thin_faces"] = bad.tolist()
            raise MeshError(
                f"minimum interior angle {min_angle:.2f} deg <= {MIN_INTERIOR_ANGLE_DEG} deg",
                report,
            )

        n_comp, _ = connected_components(self.vertex_adjacency(), directed=False)
        if n_comp != 1:
            raise MeshError(f"mesh has {n_comp} connected components")

        # Euler consistency: genus must come out a non-negative integer
        chi = self.euler_characteristic()
        bl = len(self.boundary_loops())
        if (2 - bl - chi) % 2 != 0 or (2 - bl - chi) < 0:
            raise MeshError(f"inconsistent topology: chi={chi}, boundary loops={bl}")

    # -------------------------------------------------------------- geometry

    def face_angles(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        out = np.empty((len(self.faces), 3))
        for k in range(3):
            u = tri[:, (k + 1) % 3] - tri[:, k]
            w = tri[:, (k + 2) % 3] - tri[:, k]
            cu = np.linalg.norm(u, axis=1)
            cw = np.linalg.norm(w, axis=1)
            c = np.einsum("ij,ij->i", u, w) / np.maximum(cu * cw, 1e-300)
            out[:, k] = np.arccos(np.clip(c, -1.0, 1.0))
        return out

    def bbox_diagonal(self) -> float:
        ext = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(ext))

    def total_area(self) -> float:
        return float(self.face_areas.sum())

    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]]
        return np.linalg.norm(d, axis=1)

    def mean_edge_length(self) -> float:
        return float(self.edge_lengths().mean())

    def vertex_adjacency(self) -> coo_matrix:
        if self._vertex_adj is None:
            e = self.edges
            V = len(self.vertices)
            data = np.ones(len(e))
            self._vertex_adj = coo_matrix(
                (np.concatenate([data, data]),
                 (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
                shape=(V, V),
            ).tocsr()
        return self._vertex_adj

    def boundary_edge_ids(self) -> np.ndarray:
        return np.nonzero(self.edge_counts == 1)[0]

    def boundary_vertices(self) -> np.ndarray:
        be = self.edges[self.boundary_edge_ids()]
        return np.unique(be)

    def is_boundary_vertex(self) -> np.ndarray:
        mask = np.zeros(len(self.vertices), dtype=bool)
        mask[self.boundary_vertices()] = True
        return mask

    def boundary_loops(self) -> list:
        """Boundary loops as ordered vertex lists, following face orientation."""
        if self._boundary_loops is not None:
            return self._boundary_loops
        a, b, _ = self._directed
        V = len(self.vertices)
        enc_dir = set((int(x), int(y)) for x, y in zip(a, b))
        nxt = {}
        for eid in self.boundary_edge_ids():
            x, y = int(self.edges[eid, 0]), int(self.edges[eid, 1])
            # boundary directed edge is the one NOT present in a face
            if (x, y) in enc_dir and (y, x) not in enc_dir:
                nxt[y] = x  # walk opposite to face orientation: consistent loops
            elif (y, x) in enc_dir and (x, y) not in enc_dir:
                nxt[x] = y
        loops = []
        visited = set()
        for start in sorted(nxt):
            if start in visited:
                continue
            loop = [start]
            visited.add(start)
            cur = nxt[start]
            while cur != start:
                loop.append(cur)
                visited.add(cur)
                cur = nxt[cur]
            loops.append(loop)
        self._boundary_loops = loops
        return loops

    def euler_characteristic(self) -> int:
        return len(self.vertices) - len(self.edges) + len(self.faces)

    def genus(self) -> int:
        chi = self.euler_characteristic()
        return (2 - len(self.boundary_loops()) - chi) // 2

    def face_adjacency_pairs(self) -> np.ndarray:
        """(K, 2) array of adjacent face index pairs (interior edges only)."""
        interior = self.edge_counts == 2
        return self.edge_faces[interior]

    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    def angle_defects(self) -> np.ndarray:
        """Discrete Gaussian curvature: 2*pi - angle sum interior, pi - sum on boundary."""
        V = len(self.vertices)
        s = np.zeros(V)
        np.add.at(s, self.faces.ravel(), self.face_angles().ravel())
        defect = 2.0 * np.pi - s
        bmask = self.is_boundary_vertex()
        defect[bmask] = np.pi - s[bmask]
        return defect

    def closest_surface_point(self, point: np.ndarray, face_hint: Optional[Iterable[int]] = None):
        """Closest point on the mesh as (SurfacePoint, position)."""
        fids = np.fromiter(face_hint, dtype=np.int64) if face_hint is not None else np.arange(len(self.faces))
        tri = self.vertices[self.faces[fids]]
        p, b = _closest_point_triangles(np.asarray(point, dtype=np.float64), tri)
        d = np.linalg.norm(p - point, axis=1)
        k = int(np.argmin(d))
        return SurfacePoint(int(fids[k]), tuple(b[k])), p[k]


def _closest_point_triangles(p: np.ndarray, tri: np.ndarray):
    """Closest points of p on each triangle; returns positions and barycentrics."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    n = len(tri)
    bary = np.zeros((n, 3))
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = np.maximum(va + vb + vc, 1e-300)
    v = vb / denom
    w = vc / denom
    bary[:, 0] = 1.0 - v - w
    bary[:, 1] = v
    bary[:, 2] = w

    # clamp to the triangle: regions of the Voronoi diagram of the triangle
    reg_a = (d1 <= 0) & (d2 <= 0)
    reg_b = (d3 >= 0) & (d4 <= d3)
    reg_c = (d6 >= 0) & (d5 <= d6)
    t_ab = np.clip(d1 / np.where(d1 - d3 == 0, 1e-300, d1 - d3), 0, 1)
    reg_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    t_ac = np.clip(d2 / np.where(d2 - d6 == 0, 1e-300, d2 - d6), 0, 1)
    reg_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    t_bc = np.clip((d4 - d3) / np.where((d4 - d3) + (d5 - d6) == 0, 1e-300, (d4 - d3) + (d5 - d6)), 0, 1)
    reg_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)

    bary[reg_bc] = np.stack([np.zeros_like(t_bc), 1 - t_bc, t_bc], axis=1)[reg_bc]
    bary[reg_ac] = np.stack([1 - t_ac, np.zeros_like(t_ac), t_ac], axis=1)[reg_ac]
    bary[reg_ab] = np.stack([1 - t_ab, t_ab, np.zeros_like(t_ab)], axis=1)[reg_ab]
    bary[reg_c] = np.array([0.0, 0.0, 1.0])
    bary[reg_b] = np.array([0.0, 1.0, 0.0])
    bary[reg_a] = np.array([1.0, 0.0, 0.0])
    bary = np.clip(bary, 0.0, 1.0)
    bary /= bary.sum(axis=1, keepdims=True)
    pos = np.einsum("ik,ikj->ij", bary, tri)
    return pos, bary


@dataclass
class PoseSet:
    """Rest mesh plus extra vertex arrays sharing its connectivity."""

    rest: TriMesh
    poses: list  # list of (V, 3) arrays, rest excluded

    def __post_init__(self):
        for i, p in enumerate(self.poses):
            arr = np.asarray(p, dtype=np.float64)
            if arr.shape != self.rest.vertices.shape:
                raise MeshError(f"pose {i} has {arr.shape[0]} vertices, rest has {len(self.rest.vertices)}")
            self.poses[i] = arr

    def all_vertex_arrays(self) -> list:
        return [self.rest.vertices] + list(self.poses)

    def pose_meshes(self) -> list:
        return [self.rest] + [self.rest.with_vertices(p) for p in self.poses]


# ---------------------------------------------------------------------- OBJ IO

def load_obj(path: str) -> TriMesh:
    """Load a Wavefront OBJ (v/f records; vt/vn ignored) as a validated TriMesh."""
    vertices = []
    faces = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if tok[0] == "v":
                if len(tok) < 4:
                    raise MeshError(f"parse error at line {lineno}: {line!r}")
                try:
                    vertices.append([float(tok[1]), float(tok[2]), float(tok[3])])
                except ValueError as exc:
                    raise MeshError(f"parse error at line {lineno}: {exc}") from exc
            elif tok[0] == "f":
                idx = []
                for t in tok[1:]:
                    s = t.split("/")[0]
                    try:
                        i = int(s)
                    except ValueError as exc:
                        raise MeshError(f"parse error at line {lineno}: {exc}") from exc
                    if i < 0:
                        i = len(vertices) + 1 + i
                    idx.append(i - 1)
                if len(idx) != 3:
                    raise MeshError(f"non-triangle face at index {len(faces)}")
                faces.append(idx)
    if not faces:
        raise MeshError("no faces in OBJ")
    return TriMesh(np.array(vertices), np.array(faces))


def save_obj(path: str, vertices: np.ndarray, faces: np.ndarray, lines: Optional[Sequence] = None):
    """Write an OBJ; optional polylines are emitted as 'l' records."""
    with open(path, "w") as fh:
        for v in np.asarray(vertices, dtype=float):
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in np.asarray(faces, dtype=int):
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
        if lines:
            for poly in lines:
                fh.write("l " + " ".join(str(int(i) + 1) for i in poly) + "\n")


def load_pose_set(rest_path: str, pose_dir: str) -> PoseSet:
    """Rest OBJ plus a directory of pose OBJs sharing its face section."""
    rest = load_obj(rest_path)
    poses = []
    for name in sorted(os.listdir(pose_dir)):
        if not name.lower().endswith(".obj"):
            continue
        m = load_obj(os.path.join(pose_dir, name))
        if not np.array_equal(m.faces, rest.faces):
            raise MeshError(f"pose {name} connectivity differs from rest")
        if os.path.abspath(os.path.join(pose_dir, name)) == os.path.abspath(rest_path):
            continue
        poses.append(m.vertices)
    return PoseSet(rest, poses)


# ----------------------------------------------------------------- symmetry

def check_mirror_symmetry(mesh: TriMesh, plane: SymmetryPlane) -> float:
    """Max nearest-neighbor deviation of reflected vertices; 0 means symmetric."""
    refl = plane.reflect(mesh.vertices)
    tree = cKDTree(mesh.vertices)
    d, _ = tree.query(refl)
    return float(d.max())


def default_symmetry_tol(mesh: TriMesh) -> float:
    return 1e-3 * mesh.bbox_diagonal()


def split_by_plane(mesh: TriMesh, plane: SymmetryPlane, tol: Optional[float] = None):
    """Positive-side half of a mirror-symmetric mesh.

    Vertices within tol of the plane are snapped onto it and returned (half
    indexing) as seam vertices. Asymmetric input (reflected-vertex deviation
    beyond tol) is rejected.
    """
    half, seam, _used = split_by_plane_with_map(mesh, plane, tol)
    return half, seam


def split_by_plane_with_map(mesh: TriMesh, plane: SymmetryPlane, tol: Optional[float] = None):
    """split_by_plane plus the original vertex indices kept in the half."""
    if tol is None:
        tol = default_symmetry_tol(mesh)
    dev = check_mirror_symmetry(mesh, plane)
    if dev > tol:
        raise MeshError(f"asymmetric input: max reflected-vertex deviation {dev:.6g} > tol {tol:.6g}")

    verts = mesh.vertices.copy()
    d = plane.signed_distance(verts)
    on_plane = np.abs(d) <= tol
    verts[on_plane] -= d[on_plane, None] * plane.normal
    d[on_plane] = 0.0

    side = np.sign(d)
    fsides = side[mesh.faces]
    keep = np.all(fsides >= 0, axis=1) & np.any(fsides > 0, axis=1)
    straddle = np.any(fsides > 0, axis=1) & np.any(fsides < 0, axis=1)
    if straddle.any():
        raise MeshError(
            "faces straddle the symmetry plane; the plane must follow mesh edges",
            {"straddling_faces": np.nonzero(straddle)[0].tolist()},
        )

    used = np.unique(mesh.faces[keep])
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    half = TriMesh(verts[used], remap[mesh.faces[keep]])
    seam = np.nonzero(on_plane[used])[0]
    return half, seam, used


def mirror_weld(half: TriMesh, plane: SymmetryPlane, seam_vertices: np.ndarray):
    """Weld the half mesh with its reflection along the on-plane seam vertices.

    Returns (full mesh, orig_map, mirror_map): index maps from half vertices
    into the full mesh for the original and the mirrored copy.
    """
    Vh = len(half.vertices)
    seam_mask = np.zeros(Vh, dtype=bool)
    seam_mask[np.asarray(seam_vertices, dtype=np.int64)] = True

    orig_map = np.arange(Vh)
    mirror_map = np.empty(Vh, dtype=np.int64)
    mirror_map[seam_mask] = orig_map[seam_mask]
    off = np.cumsum(~seam_mask) - 1
    mirror_map[~seam_mask] = Vh + off[~seam_mask]

    refl = plane.reflect(half.vertices[~seam_mask])
    full_vertices = np.vstack([half.vertices, refl])
    mirrored_faces = mirror_map[half.faces][:, ::-1]  # reflection flips orientation
    full_faces = np.vstack([half.faces, mirrored_faces])
    full = TriMesh(full_vertices, full_faces, validate=False)
    return full, orig_map, mirror_map
