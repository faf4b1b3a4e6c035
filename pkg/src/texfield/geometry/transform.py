from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np
from scipy.spatial.transform import Rotation

if TYPE_CHECKING:
    from .mesh import Mesh


@dataclass(frozen=True, eq=False)
class Transform3:
    """v -> rotation @ (scale * v) + translation.

    ``scale`` is either a positive scalar or a positive per-axis triple.
    """

    rotation: np.ndarray
    scale: Union[float, np.ndarray]
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation must be orthonormal with determinant +1")
        s = np.asarray(self.scale, dtype=np.float64)
        if s.ndim == 0:
            s = float(s)
        elif s.shape != (3,):
            raise ValueError("scale must be a scalar or a 3-vector")
        if np.any(np.asarray(s) <= 0):
            raise ValueError("scale components must be positive")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "translation", np.array(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "Transform3":
        return cls(np.eye(3), 1.0, np.zeros(3))

    @property
    def uniform(self) -> bool:
        s = np.asarray(self.scale)
        return s.ndim == 0 or bool(np.all(s == s[0]))

    def scale_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.scale, dtype=np.float64), (3,)).copy()

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation * self.scale_vector()[None, :]
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p * self.scale_vector()) @ self.rotation.T + self.translation


def rotation_from_euler(angles_deg) -> np.ndarray:
    """Rotation matrix for intrinsic x, then y, then z rotations in degrees."""
    return Rotation.from_euler("xyz", np.asarray(angles_deg, dtype=np.float64), degrees=True).as_matrix()


def apply_transform(mesh: "Mesh", t: Transform3) -> "Mesh":
    return mesh.with_vertices(t.apply(mesh.vertices))


def compose(first: Transform3, second: Transform3) -> Transform3:
    """Transform equivalent to applying ``first`` and then ``second``.

    Only representable when ``second`` scales uniformly, or ``first`` has no
    rotation and ``second`` has none either.
    """
    s2 = second.scale_vector()
    if second.uniform:
        rot = second.rotation @ first.rotation
        scale = first.scale_vector() * s2[0] if not first.uniform else float(first.scale_vector()[0] * s2[0])
        trans = second.rotation @ (s2 * first.translation) + second.translation
        return Transform3(rot, scale, trans)
    if np.allclose(first.rotation, np.eye(3)) and np.allclose(second.rotation, np.eye(3)):
        return Transform3(np.eye(3), first.scale_vector() * s2, s2 * first.translation + second.translation)
    raise ValueError("composition with a non-uniform rotated scale is not a Transform3")


def inverse(t: Transform3) -> Transform3:
    s = t.scale_vector()
    if t.uniform:
        rt = t.rotation.T
        return Transform3(rt, 1.0 / s[0] if np.ndim(t.scale) == 0 else 1.0 / s, -(rt @ t.translation) / s[0])
    if np.allclose(t.rotation, np.eye(3)):
        return Transform3(np.eye(3), 1.0 / s, -t.translation / s)
    raise ValueError("inverse of a rotated non-uniform scale is not a Transform3")
