"""Bounding-volume hierarchy over triangle faces and batched nearest-hit ray casting.

The traversal kernel is compiled with numba. Rays are split into contiguous
chunks that run on a thread pool; each ray is independent, so results are
identical for any thread count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .mesh import Mesh

T_MIN = 1e-6
LEAF_SIZE = 4

_num_threads = 1


def set_num_threads(n: int) -> None:
    global _num_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = int(n)


def get_num_threads() -> int:
    return _num_threads


@dataclass(frozen=True, eq=False)
class Bvh:
    lo: np.ndarray          # (n_nodes, 3)
    hi: np.ndarray
    left: np.ndarray        # child indices, -1 for leaves
    right: np.ndarray
    start: np.ndarray       # leaf range into face_order
    count: np.ndarray       # 0 for internal nodes
    face_order: np.ndarray  # permutation of face indices
    v0: np.ndarray          # triangle data in face_order
    e1: np.ndarray
    e2: np.ndarray
    n_faces: int

    @property
    def n_nodes(self) -> int:
        return len(self.lo)

    def leaves(self):
        for n in np.flatnonzero(self.count > 0):
            yield n, self.face_order[self.start[n]:self.start[n] + self.count[n]]


def build_bvh(mesh: Mesh, leaf_size: int = LEAF_SIZE) -> Bvh:
    """Median split over the longest axis of each node's bounding box."""
    tri = mesh.triangles()
    m = len(tri)
    fmin, fmax = tri.min(axis=1), tri.max(axis=1)
    cent = tri.mean(axis=1)
    order = np.arange(m, dtype=np.int64)
    lo, hi, left, right, start, count = [], [], [], [], [], []

    def new_node():
        for arr in (left, right, start, count):
            arr.append(-1 if arr is left or arr is right else 0)
        lo.append(np.zeros(3))
        hi.append(np.zeros(3))
        return len(lo) - 1

    if m:
        stack = [(new_node(), 0, m)]
        while stack:
            nid, s, e = stack.pop()
            idx = order[s:e]
            nlo, nhi = fmin[idx].min(axis=0), fmax[idx].max(axis=0)
            lo[nid], hi[nid] = nlo, nhi
            if e - s <= leaf_size:
                start[nid], count[nid] = s, e - s
                continue
            axis = int(np.argmax(nhi - nlo))
            order[s:e] = idx[np.argsort(cent[idx, axis], kind="stable")]
            mid = s + (e - s) // 2
            a, b = new_node(), new_node()
            left[nid], right[nid] = a, b
            stack.append((b, mid, e))
            stack.append((a, s, mid))

    t = tri[order] if m else np.zeros((0, 3, 3))
    return Bvh(
        lo=np.array(lo, dtype=np.float64).reshape(-1, 3),
        hi=np.array(hi, dtype=np.float64).reshape(-1, 3),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        start=np.array(start, dtype=np.int64),
        count=np.array(count, dtype=np.int64),
        face_order=order,
        v0=np.ascontiguousarray(t[:, 0]),
        e1=np.ascontiguousarray(t[:, 1] - t[:, 0]),
        e2=np.ascontiguousarray(t[:, 2] - t[:, 0]),
        n_faces=m,
    )


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _box_entry(o, inv, lo, hi, tmin, tmax):
    t0 = tmin
    t1 = tmax
    for a in range(3):
        ta = (lo[a] - o[a]) * inv[a]
        tb = (hi[a] - o[a]) * inv[a]
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return np.inf
    return t0


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _trace(orig, dirs, tmin, lo, hi, left, right, start, count, order, v0, e1, e2,
           out_face, out_t, out_u, out_v):
    stack = np.empty(128, dtype=np.int64)
    o = np.empty(3)
    d = np.empty(3)
    inv = np.empty(3)
    pad = 1e-9
    blo = np.empty(3)
    bhi = np.empty(3)
    for r in range(orig.shape[0]):
        for a in range(3):
            o[a] = orig[r, a]
            d[a] = dirs[r, a]
            inv[a] = 1.0 / d[a] if d[a] != 0.0 else 1e300
        best_t = np.inf
        best_f = -1
        best_u = 0.0
        best_v = 0.0
        if lo.shape[0] == 0:
            out_face[r] = -1
            continue
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            n = stack[sp]
            for a in range(3):
                blo[a] = lo[n, a] - pad
                bhi[a] = hi[n, a] + pad
            if _box_entry(o, inv, blo, bhi, tmin, best_t) == np.inf:
                continue
            if count[n] > 0:
                for k in range(start[n], start[n] + count[n]):
                    # Moller-Trumbore
                    px = d[1] * e2[k, 2] - d[2] * e2[k, 1]
                    py = d[2] * e2[k, 0] - d[0] * e2[k, 2]
                    pz = d[0] * e2[k, 1] - d[1] * e2[k, 0]
                    det = e1[k, 0] * px + e1[k, 1] * py + e1[k, 2] * pz
                    if abs(det) < 1e-14:
                        continue
                    idet = 1.0 / det
                    tx = o[0] - v0[k, 0]
                    ty = o[1] - v0[k, 1]
                    tz = o[2] - v0[k, 2]
                    u = (tx * px + ty * py + tz * pz) * idet
                    if u < 0.0 or u > 1.0:
                        continue
                    qx = ty * e1[k, 2] - tz * e1[k, 1]
                    qy = tz * e1[k, 0] - tx * e1[k, 2]
                    qz = tx * e1[k, 1] - ty * e1[k, 0]
                    v = (d[0] * qx + d[1] * qy + d[2] * qz) * idet
                    if v < 0.0 or u + v > 1.0:
                        continue
                    t = (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz) * idet
                    if t <= tmin:
                        continue
                    f = order[k]
                    if t < best_t or (t == best_t and f < best_f):
                        best_t = t
                        best_f = f
                        best_u = u
                        best_v = v
            else:
                a_ = left[n]
                b_ = right[n]
                for q in range(3):
                    blo[q] = lo[a_, q] - pad
                    bhi[q] = hi[a_, q] + pad
                ta = _box_entry(o, inv, blo, bhi, tmin, best_t)
                for q in range(3):
                    blo[q] = lo[b_, q] - pad
                    bhi[q] = hi[b_, q] + pad
                tb = _box_entry(o, inv, blo, bhi, tmin, best_t)
                # push the farther child first so the nearer one is popped first
                if ta <= tb:
                    if tb != np.inf:
                        stack[sp] = b_
                        sp += 1
                    if ta != np.inf:
                        stack[sp] = a_
                        sp += 1
                else:
                    if ta != np.inf:
                        stack[sp] = a_
                        sp += 1
                    if tb != np.inf:
                        stack[sp] = b_
                        sp += 1
        out_face[r] = best_f
        out_t[r] = best_t
        out_u[r] = best_u
        out_v[r] = best_v


@dataclass(frozen=True, eq=False)
class RayHits:
    """Nearest hits for a batch of rays; ``face == -1`` marks a miss."""

    face: np.ndarray
    t: np.ndarray
    bary: np.ndarray    # (n, 3) weights of the face's three vertices
    points: np.ndarray  # (n, 3); zeros for misses

    @property
    def mask(self) -> np.ndarray:
        return self.face >= 0

    def __len__(self):
        return len(self.face)


@dataclass(frozen=True)
class Hit:
    face: int
    barycentric: tuple[float, float, float]
    t: float
    point: np.ndarray


def intersect_rays(bvh: Bvh, mesh: Mesh, origins: np.ndarray, directions: np.ndarray,
                   tmin: float = T_MIN) -> RayHits:
    """Nearest hit with t > tmin for each ray. Ties in t go to the lower face index."""
    if bvh.n_faces != mesh.n_faces:
        raise ValueError("BVH was built for a different mesh")
    o = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
    n = len(o)
    face = np.full(n, -1, dtype=np.int64)
    t = np.full(n, np.inf)
    u = np.zeros(n)
    v = np.zeros(n)
    args = (bvh.lo, bvh.hi, bvh.left, bvh.right, bvh.start, bvh.count, bvh.face_order, bvh.v0, bvh.e1, bvh.e2)

    def run(s, e):
        _trace(o[s:e], d[s:e], tmin, *args, face[s:e], t[s:e], u[s:e], v[s:e])

    workers = min(_num_threads, max(1, n // 256))
    if workers <= 1:
        run(0, n)
    else:
        bounds = np.linspace(0, n, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda i: run(bounds[i], bounds[i + 1]), range(workers)))

    hit = face >= 0
    bary = np.zeros((n, 3))
    bary[hit, 0] = 1.0 - u[hit] - v[hit]
    bary[hit, 1] = u[hit]
    bary[hit, 2] = v[hit]
    points = np.zeros((n, 3))
    if hit.any():
        corners = mesh.vertices[mesh.faces[face[hit]]]
        points[hit] = np.einsum("nk,nkd->nd", bary[hit], corners)
    t[~hit] = np.inf
    return RayHits(face=face, t=t, bary=bary, points=points)


def ray_intersect(bvh: Bvh, mesh: Mesh, origin, direction) -> Optional[Hit]:
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("ray direction must be unit length")
    h = intersect_rays(bvh, mesh, np.asarray(origin, dtype=np.float64)[None], d[None])
    if h.face[0] < 0:
        return None
    return Hit(int(h.face[0]), tuple(float(x) for x in h.bary[0]), float(h.t[0]), h.points[0].copy())
