"""Pattern assembly and export: chart packing into a fabric sheet, SVG/JSON
output, pipeline configuration, and the end-to-end run.

All output dimensions are millimetres. SVG output is deterministic (fixed
float formatting, stable ordering) so it can serve as a golden-test surface.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from flatpattern.crossfield import (
    boundary_constraints,
    combine_poses,
    compute_cross_field,
    estimate_curvature,
    sketch_constraints,
)
from flatpattern.layout import (
    LayoutError,
    LayoutGoals,
    PatchLayout,
    build_patch_chart,
    check_all,
    count_corners,
    create_darts,
    insert_until_goals,
    layout_to_json,
    mirror_merge,
    reduce_symmetry_seam,
    remove_redundant,
    sample_candidates,
    segment_seams_and_darts,
)
from flatpattern.mesh import (
    MeshError,
    PoseSet,
    SurfacePoint,
    SymmetryPlane,
    TriMesh,
    split_by_plane_with_map,
)
from flatpattern.textile import (
    ChartSet,
    DartCorrespondence,
    GrainSpec,
    SeamPair,
    UVChart,
    Weights,
    injectivity_check,
    joint_optimize,
    measure,
    optimize,
)
from flatpattern.tracing import build_graph


class PackError(ValueError):
    pass


@dataclass
class Config:
    """Pipeline parameters; JSON keys mirror the field names exactly."""

    max_corners: int = 8
    max_stretch: float = 0.05
    weight_stretch: float = 5.0
    weight_rigid: float = 1.0
    weight_dart: float = 5.0
    weight_seam: float = 5.0
    grain_axis: tuple = (0.0, 0.0, 1.0)
    grain_enabled: bool = True
    symmetry: bool = False
    symmetry_plane: Optional[dict] = None  # {"point": [...], "normal": [...]}
    interior_sources: Optional[int] = None
    boundary_stride: int = 4
    min_dart_angle: float = 0.1
    max_dart_fraction: float = 0.5
    curvature_radius_fraction: float = 0.05
    soft_weight: float = 1.0
    solver_max_iterations: int = 20
    solver_tol: float = 1e-7
    layout_check_iterations: int = 12
    # layout search keeps per-patch stretch below margin * max_stretch so the
    # final joint solve (seam coupling shifts distortion) stays within bounds
    layout_stretch_margin: float = 0.8
    smoothing_iterations: int = 10
    sheet_width: float = 1500.0
    margin: float = 10.0
    scale: float = 1.0
    seed: int = 0

    def goals(self) -> LayoutGoals:
        return LayoutGoals(
            max_corners=self.max_corners, max_stretch=self.max_stretch,
            max_dart_fraction=self.max_dart_fraction, min_dart_angle=self.min_dart_angle,
        )

    def layout_goals(self) -> LayoutGoals:
        return LayoutGoals(
            max_corners=self.max_corners,
            max_stretch=self.layout_stretch_margin * self.max_stretch,
            max_dart_fraction=self.max_dart_fraction, min_dart_angle=self.min_dart_angle,
        )

    def weights(self) -> Weights:
        return Weights(self.weight_stretch, self.weight_rigid, self.weight_dart, self.weight_seam)

    def grain(self) -> GrainSpec:
        return GrainSpec(np.asarray(self.grain_axis, dtype=float), enabled=self.grain_enabled)

    def plane(self) -> SymmetryPlane:
        if self.symmetry_plane is None:
            return SymmetryPlane.default()
        return SymmetryPlane(
            np.asarray(self.symmetry_plane["point"], dtype=float),
            np.asarray(self.symmetry_plane["normal"], dtype=float),
        )

    def to_json(self) -> dict:
        out = asdict(self)
        out["grain_axis"] = list(self.grain_axis)
        return out

    @staticmethod
    def from_json(doc: dict) -> "Config":
        known = {f.name for f in fields(Config)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(doc)
        if "grain_axis" in kw:
            kw["grain_axis"] = tuple(float(x) for x in kw["grain_axis"])
        return Config(**kw)


# ---------------------------------------------------------------------- pack

@dataclass
class PatternPiece:
    piece_id: int
    patch_id: int
    outline: list  # list of (N, 2) loops in sheet coordinates, outer first
    seam_labels: list  # (seam id, (x, y))
    dart_markers: list  # dict: tip, sides (polylines)
    grain_origin: np.ndarray
    grain_vector: np.ndarray
    bbox: np.ndarray  # (2, 2) min/max
    corners: int = 0
    max_stretch: float = 0.0


@dataclass
class Pattern:
    pieces: list
    sheet_size: tuple  # (width, height) mm
    utilization: float = 0.0


def pack(charts: Sequence[UVChart], sheet_width: float = 1500.0, margin: float = 10.0,
         piece_meta: Optional[list] = None) -> Pattern:
    """Shelf next-fit-decreasing-height packing; charts keep their rotation
    (the grain alignment is semantic) and are only translated."""
    items = []
    for i, ch in enumerate(charts):
        lo = ch.uv.min(axis=0)
        hi = ch.uv.max(axis=0)
        w, h = float(hi[0] - lo[0]), float(hi[1] - lo[1])
        if w + 2 * margin > sheet_width:
            raise PackError(f"chart {i} width {w:.1f}mm exceeds sheet width {sheet_width}mm")
        items.append((i, ch, lo, w, h))
    order = sorted(items, key=lambda t: (-t[4], t[0]))

    placements = {}
    x = margin
    y = margin
    shelf_h = 0.0
    for i, ch, lo, w, h in order:
        if x + w + margin > sheet_width:
            x = margin
            y += shelf_h + margin
            shelf_h = 0.0
        placements[i] = np.array([x, y]) - lo
        x += w + margin
        shelf_h = max(shelf_h, h)
    height = y + shelf_h + margin

    pieces = []
    area_used = 0.0
    for i, ch, lo, w, h in items:
        off = placements[i]
        meta = piece_meta[i] if piece_meta else {}
        outline = [np.asarray([ch.uv[v] + off for v in loop]) for loop in ch.boundary_loops()]
        centroid = ch.uv.mean(axis=0) + off
        pieces.append(PatternPiece(
            piece_id=i,
            patch_id=meta.get("patch_id", i),
            outline=outline,
            seam_labels=meta.get("seam_labels", []),
            dart_markers=meta.get("dart_markers", []),
            grain_origin=centroid,
            grain_vector=np.array([0.0, 1.0]),
            bbox=np.array([[ch.uv[:, 0].min(), ch.uv[:, 1].min()],
                           [ch.uv[:, 0].max(), ch.uv[:, 1].max()]]) + off,
            corners=meta.get("corners", 0),
            max_stretch=meta.get("max_stretch", 0.0),
        ))
        area_used += abs(float(ch.uv_areas().sum()))
        # shift labels/markers into sheet coordinates
        pieces[-1].seam_labels = [(sid, (np.asarray(p) + off)) for sid, p in pieces[-1].seam_labels]
        pieces[-1].dart_markers = [
            {"tip": np.asarray(d["tip"]) + off,
             "sides": [np.asarray(s) + off for s in d["sides"]]}
            for d in pieces[-1].dart_markers
        ]
    pat = Pattern(pieces=pieces, sheet_size=(sheet_width, height),
                  utilization=area_used / max(sheet_width * height, 1e-9))
    _assert_disjoint(pat, margin)
    return pat


def _assert_disjoint(pattern: Pattern, margin: float):
    for i, a in enumerate(pattern.pieces):
        for b in pattern.pieces[i + 1:]:
            sep = (
                a.bbox[1][0] + margin <= b.bbox[0][0] + 1e-6 or
                b.bbox[1][0] + margin <= a.bbox[0][0] + 1e-6 or
                a.bbox[1][1] + margin <= b.bbox[0][1] + 1e-6 or
                b.bbox[1][1] + margin <= a.bbox[0][1] + 1e-6
            )
            if not sep:
                raise PackError(f"pieces {a.piece_id} and {b.piece_id} overlap after packing")


# ----------------------------------------------------------------------- SVG

def _fmt(x: float) -> str:
    return f"{x:.3f}"


def export_svg(pattern: Pattern, path: Optional[str] = None) -> bytes:
    """Millimetre-unit SVG: one closed path per piece, seam-id labels, dart
    V-notches, and a grain arrow per piece. Deterministic byte output."""
    W, H = pattern.sheet_size
    out = []
    out.append('<?xml version="1.0" encoding="UTF-8"?>')
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(W)}mm" height="{_fmt(H)}mm" '
        f'viewBox="0 0 {_fmt(W)} {_fmt(H)}">'
    )
    out.append(f'<rect x="0" y="0" width="{_fmt(W)}" height="{_fmt(H)}" '
               'fill="none" stroke="black" stroke-width="0.5"/>')
    for piece in pattern.pieces:
        out.append(f'<g id="piece-{piece.piece_id}">')
        for loop in piece.outline:
            d = "M " + " L ".join(f"{_fmt(p[0])} {_fmt(p[1])}" for p in loop) + " Z"
            out.append(f'<path d="{d}" fill="none" stroke="black" stroke-width="0.4"/>')
        for sid, pos in piece.seam_labels:
            out.append(
                f'<text x="{_fmt(pos[0])}" y="{_fmt(pos[1])}" font-size="6" '
                f'text-anchor="middle">{sid}</text>'
            )
        for dm in piece.dart_markers:
            for side in dm["sides"]:
                d = "M " + " L ".join(f"{_fmt(p[0])} {_fmt(p[1])}" for p in side)
                out.append(f'<path d="{d}" fill="none" stroke="black" '
                           'stroke-width="0.3" stroke-dasharray="2,1"/>')
            tip = dm["tip"]
            out.append(f'<circle cx="{_fmt(tip[0])}" cy="{_fmt(tip[1])}" r="1.2" fill="black"/>')
        o = piece.grain_origin
        v = piece.grain_vector * 20.0
        tipp = o + v
        out.append(
            f'<path d="M {_fmt(o[0])} {_fmt(o[1])} L {_fmt(tipp[0])} {_fmt(tipp[1])}" '
            'stroke="black" stroke-width="0.6"/>'
        )
        left = tipp - 0.25 * v + np.array([-v[1], v[0]]) * 0.12
        right = tipp - 0.25 * v - np.array([-v[1], v[0]]) * 0.12
        out.append(
            f'<path d="M {_fmt(left[0])} {_fmt(left[1])} L {_fmt(tipp[0])} {_fmt(tipp[1])} '
            f'L {_fmt(right[0])} {_fmt(right[1])}" fill="none" stroke="black" stroke-width="0.6"/>'
        )
        out.append("</g>")
    out.append("</svg>")
    data = ("\n".join(out) + "\n").encode()
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(data)
    return data


# ------------------------------------------------------------------ pipeline

@dataclass
class PipelineResult:
    pattern: Pattern
    svg: bytes
    layout_json: dict
    report: dict


def run_pipeline(config: Config, mesh_or_poses, sketches: Sequence = ()) -> PipelineResult:
    """Full run: symmetrize, field, trace/layout, darts, symmetry reduction,
    joint flatten, pack, export."""
    t_start = time.time()
    timings = {}
    rng = np.random.default_rng(config.seed)

    if isinstance(mesh_or_poses, PoseSet):
        mesh = mesh_or_poses.rest
        pose_arrays_full = mesh_or_poses.all_vertex_arrays()
    else:
        mesh = mesh_or_poses
        pose_arrays_full = [mesh.vertices]
    if config.scale != 1.0:
        mesh = mesh.with_vertices(mesh.vertices * config.scale)
        pose_arrays_full = [p * config.scale for p in pose_arrays_full]

    goals = config.layout_goals()
    weights = config.weights()
    grain = config.grain()

    # ---- symmetrize
    t0 = time.time()
    plane = None
    seam_vertices = None
    work_mesh = mesh
    pose_arrays = pose_arrays_full
    if config.symmetry:
        plane = config.plane()
        work_mesh, seam_vertices, used = split_by_plane_with_map(mesh, plane)
        pose_arrays = [p[used] for p in pose_arrays_full]
        sketches = _map_sketches_to(work_mesh, mesh, sketches, plane)
    timings["symmetrize"] = time.time() - t0

    # ---- cross field
    t0 = time.time()
    try:
        pose_meshes = [work_mesh.with_vertices(p) for p in pose_arrays]
        if len(pose_meshes) > 1:
            curvature, extra = combine_poses(work_mesh, pose_meshes, config.curvature_radius_fraction)
        else:
            curvature = estimate_curvature(work_mesh, config.curvature_radius_fraction)
        cons = boundary_constraints(work_mesh) + sketch_constraints(work_mesh, sketches)
        fieldobj = compute_cross_field(work_mesh, curvature, cons, soft_weight=config.soft_weight)
    except Exception as exc:
        raise PipelineError("field", exc) from exc
    timings["field"] = time.time() - t0

    # ---- tracing and layout
    t0 = time.time()
    try:
        session = work_mesh.with_vertices(work_mesh.vertices.copy())
        graph = build_graph(work_mesh, fieldobj)
        layout = PatchLayout(session, pristine=work_mesh, plane=plane)
        layout.rebuild()
        cands = sample_candidates(
            graph, work_mesh, fieldobj, sketches=sketches,
            interior_sources=config.interior_sources,
            boundary_stride=config.boundary_stride, rng=rng,
        )
        lkw = dict(weights=weights, grain=grain if config.grain_enabled else None,
                   pose_vertices=pose_arrays if len(pose_arrays) > 1 else None)
        insert_until_goals(layout, cands, goals, graph, fieldobj, rng=rng,
                           check_iterations=config.layout_check_iterations, **lkw)
        remove_redundant(layout, goals, check_iterations=config.layout_check_iterations, **lkw)
        create_darts(layout, goals, check_iterations=config.layout_check_iterations, **lkw)
    except LayoutError:
        raise
    except Exception as exc:
        raise PipelineError("layout", exc) from exc
    timings["layout"] = time.time() - t0

    # ---- symmetry reduction on the full mesh
    t0 = time.time()
    pose_arrays_final = pose_arrays
    if config.symmetry:
        try:
            layout = mirror_merge(layout, plane, seam_vertices)
            pose_arrays_final = [_weld_pose(layout.mesh, p, plane, seam_vertices) for p in pose_arrays]
            reduce_symmetry_seam(layout, plane, goals, weights=weights,
                                 grain=grain if config.grain_enabled else None,
                                 pose_vertices=pose_arrays_final if len(pose_arrays_final) > 1 else None,
                                 check_iterations=config.layout_check_iterations)
        except Exception as exc:
            raise PipelineError("symmetry-reduction", exc) from exc
    timings["symmetry_reduction"] = time.time() - t0

    # ---- joint flatten
    t0 = time.time()
    try:
        charts, chart_meta, seams, darts = _assemble_charts(
            layout, pose_arrays_final if len(pose_arrays_final) > 1 else None,
            weights=weights, grain=grain if config.grain_enabled else None,
            max_iterations=config.solver_max_iterations, tol=config.solver_tol)
        _cs, solve_report = joint_optimize(
            charts, seams=seams, darts=darts, weights=weights,
            grain=grain if config.grain_enabled else None,
            max_iterations=config.solver_max_iterations, tol=config.solver_tol,
        )
    except Exception as exc:
        raise PipelineError("flatten", exc) from exc
    timings["flatten"] = time.time() - t0

    # ---- audit and pack
    t0 = time.time()
    piece_meta = []
    patch_reports = []
    for idx, ch in enumerate(charts):
        br = measure(ch, weights)
        ok, flips, overlaps = injectivity_check(ch)
        patch = layout.patches[chart_meta[idx]["patch_id"]]
        corners = count_corners(layout, patch, ch)
        meta = dict(chart_meta[idx])
        meta["corners"] = corners
        meta["max_stretch"] = br.max_stretch
        piece_meta.append(meta)
        patch_reports.append({
            "patch": int(patch.patch_id),
            "faces": int(len(patch.faces)),
            "corners": int(corners),
            "max_stretch": float(br.max_stretch),
            "injective": bool(ok),
            "flips": len(flips),
            "overlaps": len(overlaps),
            "energy": {
                "stretch_u": br.stretch_u, "stretch_v": br.stretch_v,
                "rigid": br.rigid, "seam": br.seam, "dart": br.dart,
            },
        })
    _attach_seam_labels(layout, charts, chart_meta, piece_meta, seams)
    pattern = pack(charts, sheet_width=config.sheet_width, margin=config.margin,
                   piece_meta=piece_meta)
    svg = export_svg(pattern)
    timings["pack_export"] = time.time() - t0

    seam_audit = _seam_audit(charts, seams)
    report = {
        "patches": patch_reports,
        "darts": len(layout.darts),
        "seams": seam_audit,
        "solver": {"iterations": solve_report.iterations, "energy": solve_report.energy,
                   "converged": solve_report.converged},
        "timings": timings,
        "total_time": time.time() - t_start,
        "config": config.to_json(),
        "n_pieces": len(charts),
    }
    ljson = layout_to_json(layout)
    ljson["charts"] = [_chart_json(ch, meta) for ch, meta in zip(charts, piece_meta)]
    return PipelineResult(pattern=pattern, svg=svg, layout_json=ljson, report=report)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _map_sketches_to(half: TriMesh, full: TriMesh, sketches: Sequence, plane: SymmetryPlane) -> list:
    """Re-locate full-mesh strokes on the half mesh (negative side reflected)."""
    out = []
    for stroke in sketches:
        pts = []
        for sp in stroke:
            p = sp.position(full)
            if plane.signed_distance(p)[0] < 0:
                p = plane.reflect(p)
            spv, _ = half.closest_surface_point(p)
            pts.append(spv)
        if len(pts) >= 2:
            out.append(pts)
    return out


def _weld_pose(full_mesh: TriMesh, pose_half: np.ndarray, plane: SymmetryPlane,
               seam_vertices: np.ndarray) -> np.ndarray:
    """Pose vertex array for the welded full mesh from the half-mesh pose."""
    Vh = len(pose_half)
    seam_mask = np.zeros(Vh, dtype=bool)
    seam_mask[np.asarray(seam_vertices, dtype=np.int64)] = True
    refl = plane.reflect(pose_half[~seam_mask])
    return np.vstack([pose_half, refl])


def _assemble_charts(layout: PatchLayout, pose_arrays, weights=None, grain=None,
                     max_iterations: int = 20, tol: float = 1e-7):
    from flatpattern.textile import lscm_init

    charts = []
    chart_meta = []
    chart_lookup = {}
    for patch in layout.patches:
        ch = build_patch_chart(layout, patch, pose_vertices=pose_arrays)
        lscm_init(ch)
        chart_lookup[patch.patch_id] = (len(charts), ch)
        chart_meta.append({"patch_id": patch.patch_id, "seam_labels": [], "dart_markers": []})
        charts.append(ch)
    seams, darts = segment_seams_and_darts(layout, chart_lookup)
    # flatten each patch alone first (cross-chart seams defer to the joint pass)
    for idx, ch in enumerate(charts):
        own_seams = [s for s in seams if s.chart_a == idx and s.chart_b == idx]
        own_darts = [d for d in darts if d.chart == idx]
        own_seams = [SeamPair(0, s.uv_a, 0, s.uv_b) for s in own_seams]
        own_darts = [DartCorrespondence(0, d.uv_p, d.uv_q, d.tip_uv) for d in own_darts]
        cs = ChartSet([ch], seams=own_seams, darts=own_darts, weights=weights, grain=grain)
        optimize(cs, max_iterations=max_iterations, tol=tol)
    return charts, chart_meta, seams, darts


def _attach_seam_labels(layout, charts, chart_meta, piece_meta, seams):
    for sid, pair in enumerate(seams):
        name = f"S{sid + 1}"
        for chart_idx, ids in ((pair.chart_a, pair.uv_a), (pair.chart_b, pair.uv_b)):
            ch = charts[chart_idx]
            mid = ch.uv[ids[len(ids) // 2]]
            piece_meta[chart_idx].setdefault("seam_labels", []).append((name, mid))
    # darts drawn from layout.darts through the owning chart
    from flatpattern.layout import dart_side_uv_ids

    patch_to_piece = {m["patch_id"]: i for i, m in enumerate(piece_meta)}
    chart_lookup = {m["patch_id"]: (i, charts[i]) for i, m in enumerate(piece_meta)}
    for dart in layout.darts:
        piece = patch_to_piece.get(dart.host_patch)
        if piece is None:
            continue
        ids = dart_side_uv_ids(layout, chart_lookup, dart.side_vertices)
        if ids is None:
            continue
        idx, tip_uv, P_ids, Q_ids = ids
        ch = charts[idx]
        tip = ch.uv[tip_uv]
        sides = [np.asarray([tip] + [ch.uv[i] for i in P_ids]),
                 np.asarray([tip] + [ch.uv[i] for i in Q_ids])]
        if P_ids:
            piece_meta[idx].setdefault("dart_markers", []).append({"tip": tip, "sides": sides})
            dart.opening_angle = _opening(tip, sides)
            dart.length = float(sum(
                np.linalg.norm(np.diff(s, axis=0), axis=1).sum() for s in sides
            ) / max(len(sides), 1))


def _opening(tip, sides) -> float:
    if len(sides) < 2 or len(sides[0]) < 2 or len(sides[1]) < 2:
        return 0.0
    a = sides[0][1] - tip
    b = sides[1][1] - tip
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.arccos(np.clip(a @ b / (na * nb), -1, 1)))


def _polyline_length(uv, ids) -> float:
    p = uv[np.asarray(ids, dtype=np.int64)]
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def _seam_audit(charts, seams) -> list:
    from flatpattern.textile import best_fit_reflection

    out = []
    for sid, pair in enumerate(seams):
        la = _polyline_length(charts[pair.chart_a].uv, pair.uv_a)
        lb = _polyline_length(charts[pair.chart_b].uv, pair.uv_b)
        P = charts[pair.chart_a].uv[pair.uv_a]
        Q = charts[pair.chart_b].uv[pair.uv_b]
        if len(P) >= 2:
            M, t = best_fit_reflection(P, Q)
            rms = float(np.sqrt(((P @ M.T + t - Q) ** 2).sum(axis=1).mean()))
        else:
            rms = 0.0
        mean_len = max(0.5 * (la + lb), 1e-12)
        out.append({
            "seam": f"S{sid + 1}",
            "length_a": la,
            "length_b": lb,
            "mismatch": abs(la - lb) / mean_len,
            "reflection_rms": rms / mean_len,
        })
    return out


def _chart_json(ch: UVChart, meta: dict) -> dict:
    br = measure(ch)
    return {
        "patch_id": int(meta["patch_id"]),
        "uv": [[float(x) for x in p] for p in ch.uv],
        "faces": [int(f) for f in ch.faces],
        "corner_uv": [[int(i) for i in c] for c in ch.corner_uv],
        "uv_to_mesh": [int(v) for v in ch.uv_to_mesh],
        "stretch_dev": [float(x) for x in br.stretch_dev],
        "max_stretch": float(meta.get("max_stretch", 0.0)),
        "corners": int(meta.get("corners", 0)),
    }


def result_to_files(result: PipelineResult, out_dir: str):
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "pattern.svg"), "wb") as fh:
        fh.write(result.svg)
    with open(os.path.join(out_dir, "layout.json"), "w") as fh:
        json.dump(result.layout_json, fh, sort_keys=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(result.report, fh, indent=2, sort_keys=True)
