"""flatpattern: sewing patterns from 3D garment meshes.

Pipeline: symmetry split -> cross-field -> field-aligned seam tracing ->
patch layout with darts -> anisotropic textile flattening -> packed 2D
pattern export.
"""

from flatpattern.mesh import (
    MeshError,
    PoseSet,
    SurfacePoint,
    SymmetryPlane,
    TriMesh,
    load_obj,
    load_pose_set,
    mirror_weld,
    split_by_plane,
)

__version__ = "0.1.0"

__all__ = [
    "MeshError",
    "PoseSet",
    "SurfacePoint",
    "SymmetryPlane",
    "TriMesh",
    "load_obj",
    "load_pose_set",
    "mirror_weld",
    "split_by_plane",
    "__version__",
]
