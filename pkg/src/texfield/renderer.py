"""Ray-cast rendering of vertex-colored meshes and of the learned color field.

Albedo only: a pixel is the surface color at the primary-ray hit, the
background is black and flagged in the mask.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Bvh, Mesh, MeshError, RayHits, intersect_rays
from .triplane import BilinearSampler, Triplane

DEFAULT_RADIUS = 2.5
DEFAULT_FOV = 45.0


@dataclass(frozen=True)
class Camera:
    position: tuple
    fov: float = DEFAULT_FOV
    width: int = 64
    height: int = 64

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64)
        if np.linalg.norm(p) <= 0.87:
            raise ValueError("camera must lie outside the normalized mesh's bounding sphere (r > 0.87)")
        if not 0.0 < self.fov < 180.0:
            raise ValueError("field of view must be in (0, 180) degrees")
        object.__setattr__(self, "position", tuple(float(x) for x in p))

    def basis(self):
        eye = np.asarray(self.position)
        fwd = -eye / np.linalg.norm(eye)
        up = np.array([0.0, 1.0, 0.0])
        if abs(fwd @ up) > 0.999:
            up = np.array([0.0, 0.0, 1.0])
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        true_up = np.cross(right, fwd)
        return fwd, right, true_up

    def rays_at(self, px: np.ndarray, py: np.ndarray):
        """Rays through continuous pixel coordinates (x right, y down; centers at +0.5)."""
        fwd, right, up = self.basis()
        half = np.tan(np.radians(self.fov) / 2.0)
        aspect = self.width / self.height
        sx = (2.0 * np.asarray(px, dtype=np.float64) / self.width - 1.0) * half * aspect
        sy = (1.0 - 2.0 * np.asarray(py, dtype=np.float64) / self.height) * half
        d = fwd[None] + sx.reshape(-1, 1) * right[None] + sy.reshape(-1, 1) * up[None]
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        o = np.broadcast_to(np.asarray(self.position), d.shape)
        return np.ascontiguousarray(o), d

    def rays(self):
        """Pixel-center rays in row-major (row, col) order."""
        rows, cols = np.meshgrid(np.arange(self.height) + 0.5, np.arange(self.width) + 0.5, indexing="ij")
        return self.rays_at(cols.ravel(), rows.ravel())


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    rgb: np.ndarray   # (H, W, 3)
    mask: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @classmethod
    def blank(cls, width, height):
        return cls(np.zeros((height, width, 3)), np.zeros((height, width), dtype=bool))


@dataclass(frozen=True, eq=False)
class HitRecords:
    """Which pixels hit the surface, and where. Geometry carries no gradient."""
    pixels: np.ndarray  # flat row-major pixel indices of hits
    points: np.ndarray  # (n, 3)
    face: np.ndarray
    bary: np.ndarray


def sample_cameras(n: int, seed: int = 0, radius: float = DEFAULT_RADIUS, fov: float = DEFAULT_FOV,
                   resolution=(64, 64)) -> list[Camera]:
    """Area-uniform camera positions on a sphere, all looking at the origin."""
    if n < 1:
        raise ValueError("need at least one camera")
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    w, h = resolution
    return [Camera(tuple(radius * x), fov, w, h) for x in d]


def fixed_viewpoints(radius: float = DEFAULT_RADIUS, fov: float = DEFAULT_FOV, resolution=(128, 128)) -> list[Camera]:
    """Ten evaluation views: the two five-vertex rings of a y-polar icosahedron."""
    elev = np.arctan(0.5)  # ring latitude of an icosahedron with vertices on the poles
    w, h = resolution
    cams = []
    for ring, sign in enumerate((1.0, -1.0)):
        for k in range(5):
            az = np.radians(72.0 * k + 36.0 * ring)
            p = radius * np.array([np.cos(elev) * np.cos(az), sign * np.sin(elev), np.cos(elev) * np.sin(az)])
            cams.append(Camera(tuple(p), fov, w, h))
    return cams


def turntable(n: int, radius: float = DEFAULT_RADIUS, elevation: float = 0.0, fov: float = DEFAULT_FOV,
              resolution=(128, 128)) -> list[Camera]:
    el = np.radians(elevation)
    w, h = resolution
    return [Camera((radius * np.cos(el) * np.sin(a), radius * np.sin(el), radius * np.cos(el) * np.cos(a)), fov, w, h)
            for a in np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)]


def cast_views(mesh: Mesh, bvh: Bvh, cams: Sequence[Camera]) -> list[RayHits]:
    """Primary-ray hits for several cameras, traced in a single batch."""
    rays = [c.rays() for c in cams]
    if not rays:
        return []
    hits = intersect_rays(bvh, mesh, np.concatenate([r[0] for r in rays]), np.concatenate([r[1] for r in rays]))
    out, s = [], 0
    for c in cams:
        e = s + c.width * c.height
        out.append(RayHits(hits.face[s:e], hits.t[s:e], hits.bary[s:e], hits.points[s:e]))
        s = e
    return out


def hit_records(hits: RayHits) -> HitRecords:
    m = hits.mask
    return HitRecords(np.flatnonzero(m), hits.points[m], hits.face[m], hits.bary[m])


def interpolate_colors(mesh: Mesh, rec: HitRecords) -> np.ndarray:
    # c0 + u (c1 - c0) + v (c2 - c0) reproduces constant faces exactly
    c = mesh.vertex_colors[mesh.faces[rec.face]]
    return c[:, 0] + rec.bary[:, 1:2] * (c[:, 1] - c[:, 0]) + rec.bary[:, 2:3] * (c[:, 2] - c[:, 0])


def compose_image(cam: Camera, rec: HitRecords, colors: np.ndarray) -> ImageBuffer:
    rgb = np.zeros((cam.height * cam.width, 3))
    mask = np.zeros(cam.height * cam.width, dtype=bool)
    rgb[rec.pixels] = colors
    mask[rec.pixels] = True
    return ImageBuffer(rgb.reshape(cam.height, cam.width, 3), mask.reshape(cam.height, cam.width))


def render_gt(mesh: Mesh, bvh: Bvh, cam: Camera) -> ImageBuffer:
    """Barycentric vertex-color interpolation at each primary hit."""
    if not mesh.has_colors:
        raise MeshError("ground-truth rendering needs vertex colors")
    rec = hit_records(cast_views(mesh, bvh, [cam])[0])
    return compose_image(cam, rec, interpolate_colors(mesh, rec))


def render_gt_views(mesh: Mesh, bvh: Bvh, cams: Sequence[Camera]) -> list[ImageBuffer]:
    if not mesh.has_colors:
        raise MeshError("ground-truth rendering needs vertex colors")
    out = []
    for cam, hits in zip(cams, cast_views(mesh, bvh, cams)):
        rec = hit_records(hits)
        out.append(compose_image(cam, rec, interpolate_colors(mesh, rec)))
    return out


def field_colors(processed, net, points: np.ndarray) -> np.ndarray:
    planes = processed.planes if isinstance(processed, Triplane) else processed
    if len(points) == 0:
        return np.zeros((0, 3))
    feats = BilinearSampler(points, planes.shape[1:3], planes.dtype).forward(planes)
    return np.asarray(net.color(feats)[0], dtype=np.float64)


def render_field(mesh: Mesh, bvh: Bvh, cam: Camera, processed, net) -> tuple[ImageBuffer, HitRecords]:
    """Per hit pixel: color(net, sample(processed, hit point))."""
    rec = hit_records(cast_views(mesh, bvh, [cam])[0])
    return compose_image(cam, rec, field_colors(processed, net, rec.points)), rec


def render_field_views(mesh: Mesh, bvh: Bvh, cams: Sequence[Camera], processed, net) -> list[ImageBuffer]:
    recs = [hit_records(h) for h in cast_views(mesh, bvh, cams)]
    pts = np.concatenate([r.points for r in recs]) if recs else np.zeros((0, 3))
    cols = field_colors(processed, net, pts)
    out, s = [], 0
    for cam, rec in zip(cams, recs):
        e = s + len(rec.pixels)
        out.append(compose_image(cam, rec, cols[s:e]))
        s = e
    return out


# -- image files ---------------------------------------------------------------

def to_uint8(img) -> np.ndarray:
    rgb = img.rgb if isinstance(img, ImageBuffer) else np.asarray(img)
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def write_png(img, path) -> None:
    from PIL import Image
    Image.fromarray(to_uint8(img), mode="RGB").save(path)


def write_ppm(img, path) -> None:
    data = to_uint8(img)
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> ImageBuffer:
    """Read a binary P6 image; the mask marks non-black pixels."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM is supported")
    pos += 1
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos).reshape(h, w, 3)
    rgb = data.astype(np.float64) / 255.0
    return ImageBuffer(rgb, data.any(axis=2))


def contact_sheet(pairs: Sequence[tuple[ImageBuffer, ImageBuffer]]) -> np.ndarray:
    """Stack (ground truth | prediction) pairs vertically into one RGB array."""
    rows = [np.concatenate([a.rgb, b.rgb], axis=1) for a, b in pairs]
    return np.concatenate(rows, axis=0)
