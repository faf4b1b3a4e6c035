from .mesh import Mesh, MeshError, DegenerateGeometryError, normalize_mesh, vertex_normals
from .transform import Transform3, apply_transform, compose, inverse, rotation_from_euler
from .io import load_mesh, save_mesh, save_obj, save_ply, MeshParseError
from .bvh import Bvh, Hit, RayHits, build_bvh, ray_intersect, intersect_rays, set_num_threads, get_num_threads

__all__ = [
    "Mesh", "MeshError", "DegenerateGeometryError", "normalize_mesh", "vertex_normals",
    "Transform3", "apply_transform", "compose", "inverse", "rotation_from_euler",
    "load_mesh", "save_mesh", "save_obj", "save_ply", "MeshParseError",
    "Bvh", "Hit", "RayHits", "build_bvh", "ray_intersect", "intersect_rays",
    "set_num_threads", "get_num_threads",
]
