"""Procedural test meshes and vertex colorings."""
from __future__ import annotations

import numpy as np

from .geometry import Mesh, vertex_normals


def icosphere(subdivisions: int = 3, radius: float = 0.5) -> Mesh:
    """Subdivided icosahedron, outward-facing, antipodally symmetric."""
    p = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0),
             (0, -1, p), (0, 1, p), (0, -1, -p), (0, 1, -p),
             (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    v = [np.array(x, dtype=np.float64) / np.linalg.norm(x) for x in verts]
    for _ in range(subdivisions):
        cache: dict = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return Mesh(np.array(v) * radius, np.array(faces))


def box(extents=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> Mesh:
    """Closed axis-aligned box, 12 outward-facing triangles."""
    e = np.asarray(extents, dtype=np.float64) / 2.0
    c = np.asarray(center, dtype=np.float64)
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    faces = [
        (0, 1, 3), (0, 3, 2),  # -x
        (4, 6, 7), (4, 7, 5),  # +x
        (0, 4, 5), (0, 5, 1),  # -y
        (2, 3, 7), (2, 7, 6),  # +y
        (0, 2, 6), (0, 6, 4),  # -z
        (1, 5, 7), (1, 7, 3),  # +z
    ]
    return Mesh(corners * e + c, np.array(faces))


def quad(size: float = 1.0, z: float = 0.0) -> Mesh:
    """Square in the plane z = const, centered on the z axis."""
    h = size / 2.0
    v = np.array([[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]])
    return Mesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


def grid_plane(n: int = 8, size: float = 1.0, z: float = 0.0) -> Mesh:
    """n x n quad grid in the plane z = const."""
    s = np.linspace(-size / 2, size / 2, n + 1)
    xx, yy = np.meshgrid(s, s, indexing="ij")
    v = np.stack([xx.ravel(), yy.ravel(), np.full(xx.size, z)], axis=1)
    faces = []
    for i in range(n):
        for j in range(n):
            a, b = i * (n + 1) + j, (i + 1) * (n + 1) + j
            faces += [(a, b, b + 1), (a, b + 1, a + 1)]
    return Mesh(v, np.array(faces))


def hemisphere_colors(mesh: Mesh, top=(0.9, 0.15, 0.1), bottom=(0.1, 0.2, 0.9), axis: int = 1) -> np.ndarray:
    """Two-tone coloring keyed to the sign of the vertex normal along ``axis``."""
    n = vertex_normals(mesh)[:, axis]
    return np.where((n > 0)[:, None], np.asarray(top), np.asarray(bottom))


def stripe_colors(mesh: Mesh, periods: float = 4.0, axis: int = 1,
                  a=(0.95, 0.85, 0.2), b=(0.15, 0.1, 0.45)) -> np.ndarray:
    """Hard two-color stripes along ``axis`` in normalized coordinates."""
    lo, hi = mesh.bounds()
    s = (mesh.vertices[:, axis] - lo[axis]) / max(hi[axis] - lo[axis], 1e-12)
    on = np.sin(2 * np.pi * periods * s) > 0
    return np.where(on[:, None], np.asarray(a), np.asarray(b))


def smooth_colors(mesh: Mesh, frequency: float = 2.0) -> np.ndarray:
    """Smooth position-derived RGB in [0.1, 0.9]."""
    p = mesh.vertices
    phase = np.array([0.0, 2.1, 4.2])
    mix = np.array([[1.0, 0.6, -0.3], [-0.4, 1.0, 0.7], [0.5, -0.8, 1.0]])
    return 0.5 + 0.4 * np.sin(frequency * np.pi * p @ mix.T + phase)
