"""Procedural meshes used across the test suite (toy garments and primitives)."""

from __future__ import annotations

import numpy as np

from flatpattern.mesh import TriMesh


def grid_sheet(nx=10, ny=10, w=10.0, h=10.0) -> TriMesh:
    """Flat rectangular sheet in the xy plane, (nx+1)*(ny+1) vertices."""
    xs = np.linspace(0.0, w, nx + 1)
    ys = np.linspace(0.0, h, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    faces = []
    for i in range(nx):
        for j in range(ny):
            a = i * (ny + 1) + j
            b = (i + 1) * (ny + 1) + j
            faces.append([a, b, b + 1])
            faces.append([a, b + 1, a + 1])
    return TriMesh(verts, np.array(faces))


def tube(radius=1.0, height=2.0, n_around=64, n_axial=16, cap=False) -> TriMesh:
    """Open cylinder tube along +z, two boundary rings."""
    verts = []
    for k in range(n_axial + 1):
        z = height * k / n_axial
        for i in range(n_around):
            a = 2.0 * np.pi * i / n_around
            verts.append([radius * np.cos(a), radius * np.sin(a), z])
    faces = []
    for k in range(n_axial):
        for i in range(n_around):
            a = k * n_around + i
            b = k * n_around + (i + 1) % n_around
            c = (k + 1) * n_around + i
            d = (k + 1) * n_around + (i + 1) % n_around
            faces.append([a, b, d])
            faces.append([a, d, c])
    return TriMesh(np.array(verts), np.array(faces))


def cut_tube(radius=1.0, height=2.0, n_around=64, n_axial=16) -> TriMesh:
    """Cylinder wall cut open along one axial line (disk topology)."""
    verts = []
    for k in range(n_axial + 1):
        z = height * k / n_axial
        for i in range(n_around + 1):
            a = 2.0 * np.pi * i / n_around
            verts.append([radius * np.cos(a), radius * np.sin(a), z])
    m = n_around + 1
    faces = []
    for k in range(n_axial):
        for i in range(n_around):
            a = k * m + i
            b = k * m + i + 1
            c = (k + 1) * m + i
            d = (k + 1) * m + i + 1
            faces.append([a, b, d])
            faces.append([a, d, c])
    return TriMesh(np.array(verts), np.array(faces))


def disk(radius=1.0, n_rings=8, n_around=32) -> TriMesh:
    """Flat disk in the xy plane with a center vertex."""
    verts = [[0.0, 0.0, 0.0]]
    for r in range(1, n_rings + 1):
        rr = radius * r / n_rings
        for i in range(n_around):
            a = 2.0 * np.pi * i / n_around
            verts.append([rr * np.cos(a), rr * np.sin(a), 0.0])
    faces = []
    for i in range(n_around):
        faces.append([0, 1 + i, 1 + (i + 1) % n_around])
    for r in range(1, n_rings):
        base0 = 1 + (r - 1) * n_around
        base1 = 1 + r * n_around
        for i in range(n_around):
            a = base0 + i
            b = base0 + (i + 1) % n_around
            c = base1 + i
            d = base1 + (i + 1) % n_around
            faces.append([a, d, b])
            faces.append([a, c, d])
    return TriMesh(np.array(verts), np.array(faces))


def annulus(r_in=1.0, r_out=2.0, n_rings=6, n_around=48) -> TriMesh:
    verts = []
    for r in range(n_rings + 1):
        rr = r_in + (r_out - r_in) * r / n_rings
        for i in range(n_around):
            a = 2.0 * np.pi * i / n_around
            verts.append([rr * np.cos(a), rr * np.sin(a), 0.0])
    faces = []
    for r in range(n_rings):
        for i in range(n_around):
            a = r * n_around + i
            b = r * n_around + (i + 1) % n_around
            c = (r + 1) * n_around + i
            d = (r + 1) * n_around + (i + 1) % n_around
            faces.append([a, d, b])
            faces.append([a, c, d])
    return TriMesh(np.array(verts), np.array(faces))


def uv_sphere(radius=1.0, n_lat=16, n_lon=24) -> TriMesh:
    """Closed sphere; poles are single vertices."""
    verts = [[0.0, 0.0, radius]]
    for k in range(1, n_lat):
        th = np.pi * k / n_lat
        for i in range(n_lon):
            ph = 2.0 * np.pi * i / n_lon
            verts.append([
                radius * np.sin(th) * np.cos(ph),
                radius * np.sin(th) * np.sin(ph),
                radius * np.cos(th),
            ])
    verts.append([0.0, 0.0, -radius])
    bot = len(verts) - 1
    faces = []
    for i in range(n_lon):
        faces.append([0, 1 + i, 1 + (i + 1) % n_lon])
    for k in range(n_lat - 2):
        b0 = 1 + k * n_lon
        b1 = 1 + (k + 1) * n_lon
        for i in range(n_lon):
            a = b0 + i
            b = b0 + (i + 1) % n_lon
            c = b1 + i
            d = b1 + (i + 1) % n_lon
            faces.append([a, c, d])
            faces.append([a, d, b])
    b0 = 1 + (n_lat - 2) * n_lon
    for i in range(n_lon):
        faces.append([b0 + i, bot, b0 + (i + 1) % n_lon])
    return TriMesh(np.array(verts), np.array(faces))


def spherical_cap(theta_max=0.2, radius=1.0, n_rings=10, n_around=32) -> TriMesh:
    """Cap of a sphere around +z up to polar angle theta_max."""
    verts = [[0.0, 0.0, radius]]
    for r in range(1, n_rings + 1):
        th = theta_max * r / n_rings
        for i in range(n_around):
            ph = 2.0 * np.pi * i / n_around
            verts.append([
                radius * np.sin(th) * np.cos(ph),
                radius * np.sin(th) * np.sin(ph),
                radius * np.cos(th),
            ])
    faces = []
    for i in range(n_around):
        faces.append([0, 1 + i, 1 + (i + 1) % n_around])
    for r in range(1, n_rings):
        b0 = 1 + (r - 1) * n_around
        b1 = 1 + r * n_around
        for i in range(n_around):
            a = b0 + i
            b = b0 + (i + 1) % n_around
            c = b1 + i
            d = b1 + (i + 1) % n_around
            faces.append([a, d, b])
            faces.append([a, c, d])
    return TriMesh(np.array(verts), np.array(faces))


def hemisphere(radius=1.0, n_rings=10, n_around=32) -> TriMesh:
    return spherical_cap(theta_max=np.pi / 2, radius=radius, n_rings=n_rings, n_around=n_around)


def sphere_patch(th0=0.5, th1=2.2, ph0=0.0, ph1=np.pi, n_th=40, n_ph=38, radius=1.0) -> TriMesh:
    """Pole-free doubly-curved disk patch: half of a spherical zone."""
    ths = np.linspace(th0, th1, n_th + 1)
    phs = np.linspace(ph0, ph1, n_ph + 1)
    verts = []
    for th in ths:
        for ph in phs:
            verts.append([radius * np.sin(th) * np.cos(ph),
                          radius * np.sin(th) * np.sin(ph),
                          radius * np.cos(th)])
    faces = []
    m = n_ph + 1
    for i in range(n_th):
        for j in range(n_ph):
            a = i * m + j
            b = (i + 1) * m + j
            faces.append([a, b, b + 1])
            faces.append([a, b + 1, a + 1])
    return TriMesh(np.array(verts), np.array(faces))


def cone_skirt(r_top=0.6, r_bot=1.4, height=1.2, n_around=48, n_axial=10) -> TriMesh:
    """Truncated cone (skirt) open at both rings, axis +z, top at z=height."""
    verts = []
    for k in range(n_axial + 1):
        t = k / n_axial
        r = r_bot + (r_top - r_bot) * t
        z = height * t
        for i in range(n_around):
            a = 2.0 * np.pi * i / n_around
            verts.append([r * np.cos(a), r * np.sin(a), z])
    faces = []
    for k in range(n_axial):
        for i in range(n_around):
            a = k * n_around + i
            b = k * n_around + (i + 1) % n_around
            c = (k + 1) * n_around + i
            d = (k + 1) * n_around + (i + 1) % n_around
            faces.append([a, b, d])
            faces.append([a, d, c])
    return TriMesh(np.array(verts), np.array(faces))


def cone_with_apex(half_angle=0.5, slant=1.5, n_around=40, n_rings=8) -> TriMesh:
    """Full cone: apex at origin opening downward; boundary = base circle."""
    verts = [[0.0, 0.0, 0.0]]
    for r in range(1, n_rings + 1):
        s = slant * r / n_rings
        rr = s * np.sin(half_angle)
        z = -s * np.cos(half_angle)
        for i in range(n_around):
            a = 2.0 * np.pi * i / n_around
            verts.append([rr * np.cos(a), rr * np.sin(a), z])
    faces = []
    for i in range(n_around):
        faces.append([0, 1 + (i + 1) % n_around, 1 + i])
    for r in range(1, n_rings):
        b0 = 1 + (r - 1) * n_around
        b1 = 1 + r * n_around
        for i in range(n_around):
            a = b0 + i
            b = b0 + (i + 1) % n_around
            c = b1 + i
            d = b1 + (i + 1) % n_around
            faces.append([a, b, d])
            faces.append([a, d, c])
    return TriMesh(np.array(verts), np.array(faces))


def torus(R=2.0, r=0.7, n_major=32, n_minor=16) -> TriMesh:
    verts = []
    for i in range(n_major):
        u = 2.0 * np.pi * i / n_major
        for j in range(n_minor):
            v = 2.0 * np.pi * j / n_minor
            verts.append([
                (R + r * np.cos(v)) * np.cos(u),
                (R + r * np.cos(v)) * np.sin(u),
                r * np.sin(v),
            ])
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = i * n_minor + (j + 1) % n_minor
            c = ((i + 1) % n_major) * n_minor + j
            d = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            faces.append([a, b, d])
            faces.append([a, d, c])
    return TriMesh(np.array(verts), np.array(faces))


def saddle_sheet(n=14, extent=2.0, bend=0.5) -> TriMesh:
    """Hyperbolic paraboloid patch z = bend*(x^2 - y^2)."""
    xs = np.linspace(-extent / 2, extent / 2, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    Z = bend * (X ** 2 - Y ** 2)
    verts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    faces = []
    for i in range(n):
        for j in range(n):
            a = i * (n + 1) + j
            b = (i + 1) * (n + 1) + j
            faces.append([a, b, b + 1])
            faces.append([a, b + 1, a + 1])
    return TriMesh(verts, np.array(faces))


def bent_tube(radius=1.0, height=2.0, n_around=64, n_axial=16, bend_angle=0.9) -> TriMesh:
    """Tube whose upper half is bent sideways; same connectivity as tube()."""
    base = tube(radius, height, n_around, n_axial)
    verts = base.vertices.copy()
    zmid = height / 2
    for k in range(len(verts)):
        z = verts[k, 2]
        if z > zmid:
            t = (z - zmid) / (height - zmid)
            ang = bend_angle * t
            dz = z - zmid
            verts[k, 0] += dz * np.sin(ang)
            verts[k, 2] = zmid + dz * np.cos(ang)
    return base.with_vertices(verts)


def symmetric_tshirt(n=8) -> TriMesh:
    """Toy torso: a tube squashed into an ellipse, symmetric about x=0."""
    m = tube(radius=1.0, height=2.0, n_around=4 * n, n_axial=8)
    verts = m.vertices.copy()
    verts[:, 1] *= 0.55
    # ensure exact symmetry about x = 0
    return m.with_vertices(verts)


def unit_cube() -> TriMesh:
    verts = np.array([
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ], dtype=float)
    faces = np.array([
        [0, 2, 1], [0, 3, 2],
        [4, 5, 6], [4, 6, 7],
        [0, 1, 5], [0, 5, 4],
        [1, 2, 6], [1, 6, 5],
        [2, 3, 7], [2, 7, 6],
        [3, 0, 4], [3, 4, 7],
    ])
    return TriMesh(verts, faces)


def obj_bytes(mesh: TriMesh) -> bytes:
    out = []
    for v in mesh.vertices:
        out.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for f in mesh.faces:
        out.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    return ("\n".join(out) + "\n").encode()
