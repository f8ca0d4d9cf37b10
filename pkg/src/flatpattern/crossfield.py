"""Multi-scale curvature estimation and smooth 4-RoSy cross-field computation.

The field is stored as one representative angle per face in the face tangent
frame; every consumer treats angles modulo pi/2. Smoothing minimizes a
quadratic on the complex 4-angle representation e^{i 4 theta} with hard
constraints eliminated and anisotropy-weighted soft constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix, identity
from scipy.sparse.csgraph import dijkstra
from scipy.sparse.linalg import spsolve

from flatpattern.mesh import TriMesh, save_obj

ANISOTROPY_EPS = 1e-8
DEFAULT_RADIUS_FRACTION = 0.05
DEFAULT_SOFT_WEIGHT = 1.0
HARD_CONFLICT_TOL = np.pi / 8


class FieldError(ValueError):
    pass


@dataclass
class CurvatureSample:
    """Per-face principal curvature estimate with anisotropy confidence."""

    k1: float
    k2: float
    dir1: np.ndarray  # unit tangent, max-|curvature| direction
    anisotropy: float
    fallback: bool = False


@dataclass(frozen=True)
class AlignConstraint:
    """Directional alignment request for one face, hard or soft."""

    face: int
    direction: np.ndarray  # unit tangent vector
    kind: str = "hard"  # "hard" | "soft"
    weight: float = 0.0

    def __post_init__(self):
        if self.kind not in ("hard", "soft"):
            raise ValueError(f"bad constraint kind {self.kind!r}")
        if self.kind == "soft" and self.weight < 0:
            raise ValueError("soft constraint weight must be >= 0")
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise ValueError("constraint direction must be nonzero")
        object.__setattr__(self, "direction", d / n)
        object.__setattr__(self, "face", int(self.face))


@dataclass
class CrossField:
    """Per-face 4-RoSy field: angles in face frames, plus constraint flags."""

    angles: np.ndarray  # (F,) representative of {theta + k*pi/2}
    constrained: np.ndarray  # (F,) bool, hard-constrained faces
    singularities: list = field(default_factory=list)  # (vertex, index in quarters)

    def direction(self, mesh: TriMesh, faces=None, k: int = 0) -> np.ndarray:
        """3D unit direction of branch k on the given faces."""
        idx = np.arange(len(self.angles)) if faces is None else np.asarray(faces)
        th = self.angles[idx] + k * np.pi / 2
        fr = mesh.face_frames[idx]
        return np.cos(th)[:, None] * fr[:, 0] + np.sin(th)[:, None] * fr[:, 1]

    def rotated(self, face: int, quarter_turns: int) -> "CrossField":
        out = CrossField(self.angles.copy(), self.constrained.copy(), list(self.singularities))
        out.angles[face] += quarter_turns * np.pi / 2
        return out


def wrap_quarter(a):
    """Wrap angle(s) to (-pi/4, pi/4]."""
    out = np.mod(np.asarray(a) + np.pi / 4, np.pi / 2) - np.pi / 4
    return np.where(out == -np.pi / 4, np.pi / 4, out) if np.ndim(a) else float(
        out if out != -np.pi / 4 else np.pi / 4
    )


def tangent_angle(mesh: TriMesh, face: int, direction: np.ndarray) -> float:
    """Angle of a 3D direction in the face tangent frame (projected)."""
    u, v = mesh.face_frames[face]
    return float(np.arctan2(direction @ v, direction @ u))


def transport_angles(mesh: TriMesh) -> np.ndarray:
    """Per interior edge, frame rotation r such that an angle a in frame of
    edge_faces[e,0] corresponds to a + r in the frame of edge_faces[e,1]."""
    interior = np.nonzero(mesh.edge_counts == 2)[0]
    r = np.zeros(len(mesh.edges))
    e = mesh.vertices[mesh.edges[interior, 1]] - mesh.vertices[mesh.edges[interior, 0]]
    f0 = mesh.edge_faces[interior, 0]
    f1 = mesh.edge_faces[interior, 1]
    phi0 = np.arctan2(
        np.einsum("ij,ij->i", e, mesh.face_frames[f0, 1]),
        np.einsum("ij,ij->i", e, mesh.face_frames[f0, 0]),
    )
    phi1 = np.arctan2(
        np.einsum("ij,ij->i", e, mesh.face_frames[f1, 1]),
        np.einsum("ij,ij->i", e, mesh.face_frames[f1, 0]),
    )
    r[interior] = phi1 - phi0
    return r


# ------------------------------------------------------------------ curvature

def estimate_curvature(mesh: TriMesh, radius_fraction: float = DEFAULT_RADIUS_FRACTION):
    """Quadric-fit principal curvatures per face over a geodesic ball.

    The ball radius is radius_fraction * bbox diagonal, gathered by Dijkstra
    over mesh edges. Faces whose ball holds fewer than 6 vertices fall back
    to the one-ring and are flagged.
    """
    if not (0.0 < radius_fraction <= 0.5):
        raise FieldError(f"radius_fraction {radius_fraction} outside (0, 0.5]")
    radius = radius_fraction * mesh.bbox_diagonal()

    V = len(mesh.vertices)
    e = mesh.edges
    w = mesh.edge_lengths()
    graph = coo_matrix(
        (np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
        shape=(V, V),
    ).tocsr()
    # dense (V, V) distance table pruned at `radius`; fine for editing-size meshes
    dist = dijkstra(graph, directed=False, limit=radius)

    centroids = mesh.face_centroids()
    corner_off = np.linalg.norm(
        mesh.vertices[mesh.faces] - centroids[:, None, :], axis=2
    )  # (F, 3)

    one_ring = _face_one_rings(mesh)

    samples = []
    for f in range(len(mesh.faces)):
        du = np.full(V, np.inf)
        for k in range(3):
            du = np.minimum(du, dist[mesh.faces[f, k]] + corner_off[f, k])
        nbr = np.nonzero(du <= radius)[0]
        fallback = False
        if len(nbr) < 6:
            nbr = one_ring[f]
            fallback = True
        samples.append(_quadric_curvature(mesh, f, centroids[f], nbr, fallback))
    return samples


def _face_one_rings(mesh: TriMesh) -> list:
    adj = mesh.vertex_adjacency()
    rings = []
    for f in range(len(mesh.faces)):
        vs = set(mesh.faces[f].tolist())
        for v in mesh.faces[f]:
            vs.update(adj.indices[adj.indptr[v]:adj.indptr[v + 1]].tolist())
        rings.append(np.fromiter(vs, dtype=np.int64))
    return rings


def _quadric_curvature(mesh: TriMesh, f: int, origin: np.ndarray, nbr: np.ndarray, fallback: bool):
    u, v = mesh.face_frames[f]
    n = mesh.face_normals[f]
    rel = mesh.vertices[nbr] - origin
    x = rel @ u
    y = rel @ v
    z = rel @ n
    A = np.stack([x * x, x * y, y * y, x, y, np.ones_like(x)], axis=1)
    # mild ridge keeps tiny neighborhoods solvable
    AtA = A.T @ A + 1e-12 * np.eye(6)
    coef = np.linalg.solve(AtA, A.T @ z)
    a, b, c, d, e0, _ = coef

    E = 1.0 + d * d
    F = d * e0
    G = 1.0 + e0 * e0
    denom = np.sqrt(1.0 + d * d + e0 * e0)
    II = np.array([[2 * a, b], [b, 2 * c]]) / denom
    I = np.array([[E, F], [F, G]])
    # symmetric similarity transform keeps eigenvectors orthogonal in the chart
    w_I, U_I = np.linalg.eigh(I)
    I_inv_sqrt = U_I @ np.diag(1.0 / np.sqrt(np.maximum(w_I, 1e-12))) @ U_I.T
    S = I_inv_sqrt @ II @ I_inv_sqrt
    ks, dirs = np.linalg.eigh(S)
    dirs = I_inv_sqrt @ dirs
    order = np.argsort(-np.abs(ks))
    k1, k2 = float(ks[order[0]]), float(ks[order[1]])
    d1 = dirs[:, order[0]]
    d3 = d1[0] * u + d1[1] * v
    d3n = np.linalg.norm(d3)
    d3 = d3 / d3n if d3n > 1e-12 else u
    aniso = float(np.clip((abs(k1) - abs(k2)) / (abs(k1) + abs(k2) + ANISOTROPY_EPS), 0.0, 1.0))
    return CurvatureSample(k1=k1, k2=k2, dir1=d3, anisotropy=aniso, fallback=fallback)


# ----------------------------------------------------------------- cross field

def boundary_constraints(mesh: TriMesh) -> list:
    """Hard alignment to the boundary edge direction on every boundary face."""
    out = []
    for eid in mesh.boundary_edge_ids():
        f = int(mesh.edge_faces[eid, 0])
        d = mesh.vertices[mesh.edges[eid, 1]] - mesh.vertices[mesh.edges[eid, 0]]
        out.append(AlignConstraint(face=f, direction=d, kind="hard"))
    return out


def sketch_constraints(mesh: TriMesh, strokes: Sequence) -> list:
    """Hard constraints from sketch strokes: each crossed face gets the stroke
    tangent projected to the face plane."""
    out = []
    for stroke in strokes:
        pts = [sp.position(mesh) for sp in stroke]
        for i, sp in enumerate(stroke):
            if i + 1 < len(pts):
                t = pts[i + 1] - pts[i]
            else:
                t = pts[i] - pts[i - 1]
            f = sp.face
            n = mesh.face_normals[f]
            t = t - (t @ n) * n
            if np.linalg.norm(t) < 1e-12:
                continue
            out.append(AlignConstraint(face=f, direction=t, kind="hard"))
    return out


def compute_cross_field(
    mesh: TriMesh,
    curvature: Optional[Sequence[CurvatureSample]] = None,
    constraints: Sequence[AlignConstraint] = (),
    soft_weight: float = DEFAULT_SOFT_WEIGHT,
) -> CrossField:
    """Globally smooth 4-RoSy field with hard constraints eliminated and
    soft (anisotropy-weighted) alignment residuals."""
    F = len(mesh.faces)
    hard_val = np.full(F, np.nan + 0j, dtype=np.complex128)
    soft_rows: list = []

    by_face: dict = {}
    for c in constraints:
        by_face.setdefault(c.face, []).append(c)
    for f, cs in sorted(by_face.items()):
        hards = [c for c in cs if c.kind == "hard"]
        if hards:
            zs = []
            for c in hards:
                th = tangent_angle(mesh, f, c.direction)
                zs.append(np.exp(4j * th))
            mean = np.mean(zs)
            if abs(mean) < 1e-9:
                raise FieldError(f"conflicting hard constraints on face {f}")
            mean /= abs(mean)
            for z in zs:
                if abs(np.angle(z / mean)) / 4.0 > HARD_CONFLICT_TOL:
                    raise FieldError(f"conflicting hard constraints on face {f}")
            hard_val[f] = mean
        for c in cs:
            if c.kind == "soft" and c.weight > 0:
                th = tangent_angle(mesh, f, c.direction)
                soft_rows.append((f, np.exp(4j * th), c.weight))

    if curvature is not None:
        for f, s in enumerate(curvature):
            w = soft_weight * s.anisotropy
            if w > 0:
                th = tangent_angle(mesh, f, s.dir1)
                soft_rows.append((f, np.exp(4j * th), w))

    is_hard = np.isfinite(hard_val.real)
    free = np.nonzero(~is_hard)[0]
    col_of = -np.ones(F, dtype=np.int64)
    col_of[free] = np.arange(len(free))

    rows_i: list = []
    rows_j: list = []
    rows_v: list = []
    rhs: list = []
    nrow = 0

    r_edge = transport_angles(mesh)
    interior = np.nonzero(mesh.edge_counts == 2)[0]
    for eid in interior:
        f0, f1 = mesh.edge_faces[eid]
        t = np.exp(4j * r_edge[eid])
        # residual: c_f0 * t - c_f1 = 0; known (hard) parts move to the rhs
        b = 0.0 + 0j
        if is_hard[f0] and is_hard[f1]:
            continue
        if is_hard[f0]:
            b += hard_val[f0] * t
        else:
            rows_i.append(nrow); rows_j.append(col_of[f0]); rows_v.append(t)
        if is_hard[f1]:
            b -= hard_val[f1]
        else:
            rows_i.append(nrow); rows_j.append(col_of[f1]); rows_v.append(-1.0 + 0j)
        rhs.append(-b)
        nrow += 1

    for f, target, w in soft_rows:
        if is_hard[f]:
            continue
        sw = np.sqrt(w)
        rows_i.append(nrow); rows_j.append(col_of[f]); rows_v.append(sw + 0j)
        rhs.append(sw * target)
        nrow += 1

    angles = np.zeros(F)
    angles[is_hard] = np.angle(hard_val[is_hard]) / 4.0
    if len(free):
        if nrow == 0:
            c = np.ones(len(free), dtype=np.complex128)  # nothing constrains the field
        else:
            A = coo_matrix((rows_v, (rows_i, rows_j)), shape=(nrow, len(free)), dtype=np.complex128).tocsr()
            b = np.asarray(rhs, dtype=np.complex128)
            AtA = (A.getH() @ A).tocsc() + 1e-12 * identity(len(free), dtype=np.complex128, format="csc")
            c = spsolve(AtA, A.getH() @ b)
        mag = np.abs(c)
        c = np.where(mag > 1e-12, c / np.maximum(mag, 1e-300), 1.0 + 0j)
        angles[free] = np.angle(c) / 4.0

    fieldobj = CrossField(angles=angles, constrained=is_hard.copy())
    fieldobj.singularities = field_singularities(mesh, fieldobj)
    return fieldobj


def field_singularities(mesh: TriMesh, fieldobj: CrossField) -> list:
    """Interior singular vertices with quarter-unit indices (Poincare-Hopf)."""
    defects = mesh.angle_defects()
    bmask = mesh.is_boundary_vertex()
    r_edge = transport_angles(mesh)
    rings = vertex_face_cycles(mesh)
    out = []
    for v, ring in enumerate(rings):
        if bmask[v] or ring is None:
            continue
        total = 0.0
        for (f0, f1, eid, sign) in ring:
            r = r_edge[eid] * sign
            d = wrap_quarter(fieldobj.angles[f1] - fieldobj.angles[f0] - r)
            total += d
        # the one-ring walk runs clockwise w.r.t. face orientation, hence -total
        idx = int(round((defects[v] - total) / (np.pi / 2)))
        if idx != 0:
            out.append((v, idx))
    return out


def vertex_face_cycles(mesh: TriMesh):
    """For each vertex, ordered one-ring crossing list (f_from, f_to, edge id,
    transport sign); None for boundary/non-cyclic vertices."""
    F = len(mesh.faces)
    # map (face, opposite-local-edge) adjacency through edge ids
    rings: list = [None] * len(mesh.vertices)
    # vertex -> incident (face, local corner)
    incident: list = [[] for _ in range(len(mesh.vertices))]
    for f in range(F):
        for k in range(3):
            incident[mesh.faces[f, k]].append((f, k))
    for v, inc in enumerate(incident):
        if not inc:
            continue
        # walk around v crossing the edge (v, next vertex) each step
        steps = []
        f0, k0 = inc[0]
        f, k = f0, k0
        ok = True
        for _ in range(len(inc)):
            # edge from v to the next CCW vertex in face f: local edge k
            eid = mesh.face_edge_ids[f, k]
            fa, fb = mesh.edge_faces[eid]
            g = int(fb if fa == f else fa)
            if g < 0:
                ok = False
                break
            sign = 1.0 if mesh.edge_faces[eid, 0] == f else -1.0
            kg = int(np.where(mesh.faces[g] == v)[0][0])
            steps.append((f, g, int(eid), sign))
            f, k = g, kg
        if ok and f == f0 and len(steps) == len(inc):
            rings[v] = steps
    return rings


# ----------------------------------------------------------------- pose fusion

def combine_poses(mesh_rest: TriMesh, pose_meshes: Sequence[TriMesh], radius_fraction: float = DEFAULT_RADIUS_FRACTION):
    """Anisotropy-weighted pi/2-invariant average of per-pose curvature
    directions, transported to the rest pose. Returns (samples, constraints)."""
    for pm in pose_meshes:
        if pm.faces.shape != mesh_rest.faces.shape or not np.array_equal(pm.faces, mesh_rest.faces):
            raise FieldError("pose connectivity differs from rest")
    per_pose = [estimate_curvature(pm, radius_fraction) for pm in pose_meshes]
    F = len(mesh_rest.faces)
    samples = []
    for f in range(F):
        acc = 0.0 + 0j
        aniso = []
        k1s, k2s = [], []
        fallback = False
        for p, pm in enumerate(pose_meshes):
            s = per_pose[p][f]
            # the angle in the pose face frame carries over to the rest frame
            th = tangent_angle(pm, f, s.dir1)
            acc += s.anisotropy * np.exp(4j * th)
            aniso.append(s.anisotropy)
            k1s.append(abs(s.k1)); k2s.append(abs(s.k2))
            fallback |= s.fallback
        if abs(acc) > 1e-12:
            th_rest = np.angle(acc) / 4.0
        else:
            th_rest = tangent_angle(pose_meshes[0], f, per_pose[0][f].dir1)
        u, v = mesh_rest.face_frames[f]
        dir_rest = np.cos(th_rest) * u + np.sin(th_rest) * v
        samples.append(CurvatureSample(
            k1=float(np.mean(k1s)), k2=float(np.mean(k2s)),
            dir1=dir_rest, anisotropy=float(np.mean(aniso)), fallback=fallback,
        ))
    return samples, []


# ---------------------------------------------------------------------- debug

def dump_field_obj(mesh: TriMesh, fieldobj: CrossField, path: str, scale: float = 0.4):
    """Line-segment OBJ overlay of the field (both axes) for inspection."""
    cent = mesh.face_centroids()
    h = scale * mesh.mean_edge_length()
    verts = []
    lines = []
    for k in (0, 1):
        d = fieldobj.direction(mesh, k=k)
        a = cent - 0.5 * h * d
        b = cent + 0.5 * h * d
        for i in range(len(cent)):
            lines.append([len(verts), len(verts) + 1])
            verts.append(a[i])
            verts.append(b[i])
    save_obj(path, np.array(verts), np.zeros((0, 3), dtype=int), lines)
