from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .transform import Transform3


class MeshError(ValueError):
    pass


class DegenerateGeometryError(MeshError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh with optional per-vertex RGB colors in [0, 1].

    Arrays are copied and frozen on construction so a Mesh can be shared
    between threads without defensive copies.
    """

    vertices: np.ndarray
    faces: np.ndarray
    vertex_colors: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise MeshError(f"face index out of range [0, {len(v)})")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise MeshError("degenerate face (repeated vertex index)")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.vertex_colors is not None:
            c = np.array(self.vertex_colors, dtype=np.float64).reshape(-1, 3)
            if len(c) != len(v):
                raise MeshError(f"{len(c)} vertex colors for {len(v)} vertices")
            if not np.all(np.isfinite(c)) or c.min(initial=0.0) < 0.0 or c.max(initial=0.0) > 1.0:
                raise MeshError("vertex colors must be finite and in [0, 1]")
            c.flags.writeable = False
            object.__setattr__(self, "vertex_colors", c)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def has_colors(self) -> bool:
        return self.vertex_colors is not None

    def with_colors(self, colors: Optional[np.ndarray]) -> "Mesh":
        return Mesh(self.vertices, self.faces, colors)

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        return Mesh(vertices, self.faces, self.vertex_colors)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangles(self) -> np.ndarray:
        """(n_faces, 3, 3) corner positions."""
        return self.vertices[self.faces]


def face_normals(mesh: Mesh) -> np.ndarray:
    """Unnormalized face normals; their length is twice the face area."""
    tri = mesh.triangles()
    return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted unit vertex normals. Isolated vertices get a zero normal."""
    fn = face_normals(mesh)
    acc = np.zeros((mesh.n_vertices, 3))
    # accumulate in fixed face order so the result does not depend on threading
    for k in range(3):
        for axis in range(3):
            acc[:, axis] += np.bincount(mesh.faces[:, k], weights=fn[:, axis], minlength=mesh.n_vertices)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)


def normalize_mesh(mesh: Mesh) -> tuple[Mesh, Transform3]:
    """Center the bounding box on the origin and scale its longest side to 1."""
    if mesh.n_vertices == 0:
        raise MeshError("cannot normalize an empty mesh")
    lo, hi = mesh.bounds()
    extent = float(np.max(hi - lo))
    if extent <= 0.0:
        raise DegenerateGeometryError("zero-extent mesh: all vertices coincide")
    center = 0.5 * (lo + hi)
    s = 1.0 / extent
    t = Transform3(rotation=np.eye(3), scale=s, translation=-center * s)
    return mesh.with_vertices(t.apply(mesh.vertices)), t
