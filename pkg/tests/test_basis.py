import math

import numpy as np
import pytest

from dgvisc.basis import build_basis, gauss_lobatto_nodes


@pytest.mark.parametrize("k", range(1, 9))
@pytest.mark.parametrize("dim", [1, 2])
def test_mass_matrix_spd(dim, k):
    b = build_basis(dim, k)
    assert np.allclose(b.mass, b.mass.T, atol=1e-13)
    eig = np.linalg.eigvalsh(b.mass)
    assert eig.min() > 0
    n = k + 1 if dim == 1 else (k + 1) * (k + 2) // 2
    assert b.n_nodes == n
    assert np.allclose(b.mass @ b.mass_inv, np.eye(n), atol=1e-10)


def test_lgl_nodes_k2():
    assert np.allclose(gauss_lobatto_nodes(2), [-1.0, 0.0, 1.0], atol=1e-14)


def test_mass_matrix_k1_hat_functions():
    b = build_basis(1, 1)
    expected = np.array([[2 / 3, 1 / 3], [1 / 3, 2 / 3]])
    np.testing.assert_allclose(b.mass, expected, atol=1e-13)


def test_2d_k1_nodes_are_vertices():
    b = build_basis(2, 1)
    verts = {(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)}
    got = {tuple(np.round(p, 12)) for p in b.nodes}
    assert got == verts


@pytest.mark.parametrize("k", range(1, 9))
def test_differentiation_exact_on_monomials_1d(k):
    b = build_basis(1, k)
    x = b.nodes[:, 0]
    for p in range(k + 1):
        du = b.diff[0] @ x ** p
        expect = p * x ** (p - 1) if p > 0 else np.zeros_like(x)
        np.testing.assert_allclose(du, expect, atol=1e-11)


@pytest.mark.parametrize("k", range(1, 9))
def test_differentiation_exact_on_monomials_2d(k):
    b = build_basis(2, k)
    r, s = b.nodes[:, 0], b.nodes[:, 1]
    for p in range(k + 1):
        for q in range(k + 1 - p):
            f = r ** p * s ** q
            fr = (p * r ** (p - 1) * s ** q) if p else np.zeros_like(r)
            fs = (q * r ** p * s ** (q - 1)) if q else np.zeros_like(r)
            np.testing.assert_allclose(b.diff[0] @ f, fr, atol=2e-10)
            np.testing.assert_allclose(b.diff[1] @ f, fs, atol=2e-10)


@pytest.mark.parametrize("k", range(1, 9))
def test_quadrature_exact_to_2k_1d(k):
    b = build_basis(1, k)
    x = b.quad_points[:, 0]
    for p in range(2 * k + 1):
        approx = np.dot(b.quad_weights, x ** p)
        exact = (1 - (-1) ** (p + 1)) / (p + 1)
        assert abs(approx - exact) < 1e-12


@pytest.mark.parametrize("k", range(1, 9))
def test_quadrature_exact_to_2k_2d(k):
    b = build_basis(2, k)
    r, s = b.quad_points[:, 0], b.quad_points[:, 1]
    # reference triangle (-1,-1),(1,-1),(-1,1); use u=(1+r)/2, v=(1+s)/2
    u, v = (1 + r) / 2, (1 + s) / 2
    for p in range(2 * k + 1):
        for q in range(2 * k + 1 - p):
            approx = np.dot(b.quad_weights, u ** p * v ** q)
            # integral over unit triangle of u^p v^q, times area scale 4
            exact = 4.0 * (math.factorial(p) * math.factorial(q)
                           / math.factorial(p + q + 2))
            assert abs(approx - exact) < 1e-11 * max(1.0, abs(exact))


@pytest.mark.parametrize("k", [1, 3, 5])
def test_modal_basis_orthonormal_2d(k):
    b = build_basis(2, k)
    vq = b.interp_q @ b.vandermonde  # modal functions at quad points
    gram = vq.T @ (b.quad_weights[:, None] * vq)
    np.testing.assert_allclose(gram, np.eye(vq.shape[1]), atol=1e-11)


def test_mass_matches_quadrature_2d():
    b = build_basis(2, 3)
    m_quad = b.interp_q.T @ (b.quad_weights[:, None] * b.interp_q)
    np.testing.assert_allclose(b.mass, m_quad, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 4, 8])
def test_edge_nodes_are_lgl(k):
    b = build_basis(2, k)
    xi = gauss_lobatto_nodes(k)
    # along edge 0 (s = -1), node parameter is r
    e0 = b.face_nodes[0]
    np.testing.assert_allclose(b.nodes[e0, 0], xi, atol=1e-12)
    np.testing.assert_allclose(b.nodes[e0, 1], -1.0, atol=1e-12)


def test_rejects_unsupported_degree():
    with pytest.raises(ValueError):
        build_basis(1, 0)
    with pytest.raises(ValueError):
        build_basis(2, 9)
    with pytest.raises(ValueError):
        build_basis(3, 2)
