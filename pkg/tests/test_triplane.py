import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from texfield.features import FeatureSet
from texfield.geometry import Mesh, build_bvh
from texfield.shapes import icosphere, quad
from texfield.triplane import (BilinearSampler, Triplane, add_positional_encoding, encoded_channels, plane_coords,
                               project_features, projection_rays, sample, sample_backward, texel_centers)

from oracles import bilinear_reference, brute_force_hits, central_diff


def split_cube():
    """Unit cube with four private vertices per face so features can differ per face."""
    verts, faces = [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            a, b = [k for k in range(3) if k != axis]
            base = len(verts)
            for u, v in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                p = np.zeros(3)
                p[axis], p[a], p[b] = 0.5 * sign, 0.5 * u, 0.5 * v
                verts.append(p)
            faces += [(base, base + 1, base + 2), (base, base + 2, base + 3)]
    return Mesh(np.array(verts), np.array(faces))


# -- projection ----------------------------------------------------------------

def test_quad_projection():
    m = quad(1.0, 0.0)
    f = np.array([0.25, -1.5, 2.0])
    tri, mask = project_features(m, FeatureSet(np.tile(f, (4, 1))), build_bvh(m), (16, 16), return_mask=True)
    assert tri.channels == 6
    assert mask[0].all()  # the quad covers the whole XY domain from both sides
    np.testing.assert_allclose(tri.planes[0, ..., :3], np.broadcast_to(f, (16, 16, 3)), atol=1e-12)
    np.testing.assert_allclose(tri.planes[0, ..., 3:], np.broadcast_to(f, (16, 16, 3)), atol=1e-12)
    # seen edge-on, the quad covers at most one line of texels
    for plane in (1, 2):
        for side in range(2):
            rows = np.nonzero(mask[plane, side].any(axis=0))[0]
            assert len(rows) <= 1


def test_cube_occlusion():
    m = split_cube()
    feats = np.repeat(np.eye(6), 4, axis=0)  # one-hot face id: -x,+x,-y,+y,-z,+z
    tri = project_features(m, FeatureSet(feats), build_bvh(m), (8, 8))
    inner = tri.planes[0, 1:-1, 1:-1]
    np.testing.assert_allclose(inner[..., :6], np.broadcast_to(np.eye(6)[5], inner[..., :6].shape), atol=1e-12)
    np.testing.assert_allclose(inner[..., 6:], np.broadcast_to(np.eye(6)[4], inner[..., 6:].shape), atol=1e-12)


def test_sphere_projection_matches_brute_force():
    m = icosphere(3)
    feats = np.random.default_rng(0).normal(size=(m.n_vertices, 4))
    res = (64, 64)
    tri, mask = project_features(m, FeatureSet(feats), build_bvh(m), res, return_mask=True)
    offset = 1.0 + np.abs(m.vertices).max()
    for plane in range(3):
        for side, positive in enumerate((True, False)):
            o, d = projection_rays(plane, res, positive, offset)
            face, _, bary = brute_force_hits(m, o, d)
            ref = np.zeros((len(o), 4))
            ok = face >= 0
            ref[ok] = np.einsum("nk,nkd->nd", bary[ok], feats[m.faces[face[ok]]])
            got = tri.planes[plane, ..., 4 * side:4 * side + 4].reshape(-1, 4)
            np.testing.assert_array_equal(mask[plane, side].ravel(), ok)
            np.testing.assert_allclose(got, ref, atol=1e-5)


def test_opposite_masks_equal_on_closed_mesh():
    m = icosphere(2)
    _, mask = project_features(m, FeatureSet(np.ones((m.n_vertices, 1))), build_bvh(m), (32, 32), return_mask=True)
    for plane in range(3):
        np.testing.assert_array_equal(mask[plane, 0], mask[plane, 1])


def test_projection_rejects_feature_mismatch():
    m = quad()
    with pytest.raises(ValueError):
        project_features(m, FeatureSet(np.ones((3, 2))), build_bvh(m), (4, 4))


# -- positional encoding --------------------------------------------------------

def test_pe_zero_freqs_appends_uv():
    t = Triplane(np.zeros((3, 4, 4, 5)))
    out = add_positional_encoding(t, 0)
    assert out.channels == 7
    c = texel_centers(4)
    np.testing.assert_allclose(out.planes[1, :, :, 5], np.repeat(c[:, None], 4, axis=1))
    np.testing.assert_allclose(out.planes[2, :, :, 6], np.repeat(c[None, :], 4, axis=0))


def test_pe_analytic_value_at_half():
    # a 3-wide grid has its middle texel center at u = 0.5
    out = add_positional_encoding(Triplane(np.zeros((3, 3, 3, 1))), 1)
    np.testing.assert_allclose(out.planes[0, 1, :, 3], 1.0, atol=1e-7)
    np.testing.assert_allclose(out.planes[0, 1, :, 4], 0.0, atol=1e-7)


def test_pe_channel_count():
    assert add_positional_encoding(Triplane(np.zeros((3, 4, 4, 32))), 4).channels == 50
    assert encoded_channels(16, 4) == 50


# -- sampling -------------------------------------------------------------------

def test_sample_constant():
    f = np.array([0.3, -2.0])
    t = Triplane(np.broadcast_to(f, (3, 8, 8, 2)).copy())
    pts = np.random.default_rng(0).uniform(-0.7, 0.7, size=(50, 3))
    np.testing.assert_allclose(sample(t, pts), np.tile(f, (50, 3)), atol=1e-12)


def test_sample_texel_center_no_blend():
    planes = np.random.default_rng(1).normal(size=(3, 8, 8, 2))
    t = Triplane(planes)
    c = texel_centers(8) - 0.5
    p = np.array([c[2], c[5], c[6]])
    np.testing.assert_allclose(sample(t, p), np.concatenate([planes[0, 2, 5], planes[1, 2, 6], planes[2, 5, 6]]),
                               atol=1e-12)


def test_sample_matches_reference():
    rng = np.random.default_rng(2)
    planes = rng.normal(size=(3, 8, 8, 3))
    pts = rng.uniform(-0.6, 0.6, size=(100, 3))
    got = sample(Triplane(planes), pts)
    ref = np.stack([bilinear_reference(planes, p) for p in pts])
    np.testing.assert_allclose(got, ref, atol=1e-6)


def test_plane_coords_clamp():
    uv = plane_coords(np.array([[0.9, -0.9, 0.0]]), 0)
    np.testing.assert_array_equal(uv, [[1.0, 0.0]])


def test_backward_at_texel_center_hits_one_texel():
    t = Triplane(np.zeros((3, 8, 8, 2)))
    c = texel_centers(8) - 0.5
    g = sample_backward(t, np.array([c[1], c[3], c[4]]), np.ones(6))
    for plane, (i, j) in enumerate(((1, 3), (1, 4), (3, 4))):
        assert g[plane].sum() == pytest.approx(2.0)
        np.testing.assert_allclose(g[plane, i, j], 1.0)


def test_backward_midpoint_quarters():
    t = Triplane(np.zeros((3, 8, 8, 1)))
    # the corner shared by texels 2 and 3 on every axis
    p = np.full(3, 3 / 8 - 0.5)
    g = sample_backward(t, p, np.ones(3))
    np.testing.assert_allclose(g[0, 2:4, 2:4, 0], 0.25)
    assert np.count_nonzero(g[0]) == 4


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    planes = rng.normal(size=(3, 6, 6, 2))
    pts = rng.uniform(-0.55, 0.55, size=(7, 3))
    up = rng.normal(size=(7, 6))
    t = Triplane(planes)
    analytic = sample_backward(t, pts, up)
    numeric = central_diff(lambda: float(np.sum(up * sample(t, pts))), planes)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_sampler_rejects_wrong_resolution():
    s = BilinearSampler(np.zeros((1, 3)), (4, 4))
    with pytest.raises(ValueError):
        s.forward(np.zeros((3, 5, 5, 1)))


@settings(max_examples=40, deadline=None)
@given(i=st.integers(0, 6), j=st.integers(0, 6), k=st.integers(0, 6),
       fx=st.floats(0, 1), fy=st.floats(0, 1), fz=st.floats(0, 1), seed=st.integers(0, 100))
def test_midpoint_identity_property(i, j, k, fx, fy, fz, seed):
    # inside one cell, sampling is linear along every axis
    planes = np.random.default_rng(seed).normal(size=(3, 8, 8, 2))
    t = Triplane(planes)
    c = texel_centers(8) - 0.5
    lo = np.array([c[i], c[j], c[k]])
    p = lo + np.array([fx, fy, fz]) / 8
    for axis in range(3):
        a, b = p.copy(), p.copy()
        a[axis], b[axis] = lo[axis], lo[axis] + 1 / 8
        mid = 0.5 * (a + b)
        np.testing.assert_allclose(sample(t, mid), 0.5 * (sample(t, a) + sample(t, b)), atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_sampler_adjoint_property(seed):
    rng = np.random.default_rng(seed)
    planes = rng.normal(size=(3, 5, 5, 2))
    pts = rng.uniform(-0.8, 0.8, size=(9, 3))
    up = rng.normal(size=(9, 6))
    s = BilinearSampler(pts, (5, 5))
    assert np.sum(s.forward(planes) * up) == pytest.approx(np.sum(planes * s.backward(up)), rel=1e-10, abs=1e-10)
