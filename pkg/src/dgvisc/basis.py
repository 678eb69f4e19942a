"""Nodal reference elements: interpolation nodes, operators, quadrature.

1D elements use Legendre-Gauss-Lobatto (LGL) nodes on [-1, 1].  Triangles
use a barycentric blend of the 1D LGL points, so the nodes lying on each
edge are exactly the mapped 1D LGL points and traces reduce to picking
edge-node values.  All operators are built through a Vandermonde matrix
of an orthonormal modal basis (Legendre in 1D, its simplex counterpart in
2D), which gives the exact reference mass matrix as inv(V V^T) without
quadrature error.

Volume quadrature: Gauss-Legendre in 1D; on triangles a collapsed
product rule (Gauss-Legendre x Gauss-Jacobi(1,0)) whose weights are all
positive and whose exactness degree can be raised arbitrarily.  With
n = k + 2 points per direction both rules integrate total degree
2k + 3 >= 2k exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special as _sp

__all__ = ["BasisSet", "build_basis", "gauss_lobatto_nodes"]

_SUPPORTED_DEGREES = range(1, 9)


def _jacobi_norm(x, alpha, beta, n):
    """Orthonormal Jacobi polynomial values on [-1, 1]."""
    x = np.asarray(x, dtype=float)
    gamma0 = (2.0 ** (alpha + beta + 1) / (alpha + beta + 1.0)
              * math.gamma(alpha + 1) * math.gamma(beta + 1)
              / math.gamma(alpha + beta + 1))
    p0 = np.full_like(x, 1.0 / math.sqrt(gamma0))
    if n == 0:
        return p0
    gamma1 = (alpha + 1) * (beta + 1) / (alpha + beta + 3.0) * gamma0
    p1 = (((alpha + beta + 2) * x / 2 + (alpha - beta) / 2)
          / math.sqrt(gamma1))
    if n == 1:
        return p1
    aold = (2.0 / (2 + alpha + beta)
            * math.sqrt((alpha + 1.0) * (beta + 1.0) / (alpha + beta + 3.0)))
    for i in range(1, n):
        h1 = 2.0 * i + alpha + beta
        anew = (2.0 / (h1 + 2)
                * math.sqrt((i + 1) * (i + 1 + alpha + beta)
                            * (i + 1 + alpha) * (i + 1 + beta)
                            / (h1 + 1) / (h1 + 3)))
        bnew = -(alpha * alpha - beta * beta) / h1 / (h1 + 2)
        pnew = ((x - bnew) * p1 - aold * p0) / anew
        p0, p1 = p1, pnew
        aold = anew
    return p1


def _grad_jacobi_norm(x, alpha, beta, n):
    if n == 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    return (math.sqrt(n * (n + alpha + beta + 1))
            * _jacobi_norm(x, alpha + 1, beta + 1, n - 1))


def gauss_lobatto_nodes(k: int) -> np.ndarray:
    """The k+1 LGL nodes on [-1, 1]: endpoints plus roots of P_k'."""
    if k == 1:
        return np.array([-1.0, 1.0])
    # interior nodes are the Gauss-Jacobi(1,1) points of order k-1
    interior, _ = _sp.roots_jacobi(k - 1, 1.0, 1.0)
    return np.concatenate(([-1.0], np.sort(interior), [1.0]))


# ---------------------------------------------------------------------
# 2D helpers (reference triangle (-1,-1), (1,-1), (-1,1))
# ---------------------------------------------------------------------

def _rs_to_ab(r, s):
    denom = np.where(np.abs(1.0 - s) > 1e-14, 1.0 - s, 1.0)
    a = np.where(np.abs(1.0 - s) > 1e-14, 2.0 * (1.0 + r) / denom - 1.0,
                 -1.0)
    return a, s


def _simplex_p(a, b, i, j):
    h1 = _jacobi_norm(a, 0.0, 0.0, i)
    h2 = _jacobi_norm(b, 2.0 * i + 1.0, 0.0, j)
    return math.sqrt(2.0) * h1 * h2 * (1.0 - b) ** i


def _grad_simplex_p(a, b, i, j):
    fa = _jacobi_norm(a, 0.0, 0.0, i)
    dfa = _grad_jacobi_norm(a, 0.0, 0.0, i)
    gb = _jacobi_norm(b, 2.0 * i + 1.0, 0.0, j)
    dgb = _grad_jacobi_norm(b, 2.0 * i + 1.0, 0.0, j)
    half1mb = 0.5 * (1.0 - b)
    dr = dfa * gb
    if i > 0:
        dr = dr * half1mb ** (i - 1)
    ds = dfa * (gb * (0.5 * (1.0 + a)))
    if i > 0:
        ds = ds * half1mb ** (i - 1)
    tmp = dgb * half1mb ** i
    if i > 0:
        tmp = tmp - 0.5 * i * gb * half1mb ** (i - 1)
    ds = ds + fa * tmp
    scale = 2.0 ** (i + 0.5)
    return scale * dr, scale * ds


def _mode_pairs(k):
    return [(i, j) for i in range(k + 1) for j in range(k + 1 - i)]


def _vandermonde_2d(k, r, s):
    a, b = _rs_to_ab(r, s)
    cols = [_simplex_p(a, b, i, j) for i, j in _mode_pairs(k)]
    return np.column_stack(cols)


def _grad_vandermonde_2d(k, r, s):
    a, b = _rs_to_ab(r, s)
    vr, vs = [], []
    for i, j in _mode_pairs(k):
        dr, ds = _grad_simplex_p(a, b, i, j)
        vr.append(dr)
        vs.append(ds)
    return np.column_stack(vr), np.column_stack(vs)


def _triangle_nodes(k):
    """Barycentric LGL blend; edge nodes coincide with mapped 1D LGL."""
    xi = gauss_lobatto_nodes(k)
    a = 0.5 * (1.0 + xi)          # LGL mapped to [0, 1], increasing
    verts = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    nodes = []
    multi = []
    for i in range(k + 1):
        for j in range(k + 1 - i):
            l = k - i - j
            w1 = (1.0 + 2.0 * a[i] - a[j] - a[l]) / 3.0
            w2 = (1.0 + 2.0 * a[j] - a[i] - a[l]) / 3.0
            w3 = (1.0 + 2.0 * a[l] - a[i] - a[j]) / 3.0
            nodes.append(w1 * verts[0] + w2 * verts[1] + w3 * verts[2])
            multi.append((i, j, l))
    return np.array(nodes), multi


def _edge_node_lists(multi, k):
    """Ordered node ids per local edge, start vertex to end vertex.

    Edge 0 runs v0->v1 (l = 0), edge 1 runs v1->v2 (i = 0), edge 2 runs
    v2->v0 (j = 0); cells list their vertices counterclockwise with the
    same convention.
    """
    index = {m: n for n, m in enumerate(multi)}
    e0 = [index[(k - j, j, 0)] for j in range(k + 1)]
    e1 = [index[(0, k - l, l)] for l in range(k + 1)]
    e2 = [index[(i, 0, k - i)] for i in range(k + 1)]
    return [np.array(e0), np.array(e1), np.array(e2)]


@dataclass(frozen=True)
class BasisSet:
    """Reference-element operators for one polynomial degree."""

    dimension: int
    degree: int
    nodes: np.ndarray              # (n_nodes, dim) reference coordinates
    vandermonde: np.ndarray        # modal-to-nodal map V
    mass: np.ndarray               # reference mass matrix, SPD
    mass_inv: np.ndarray           # exact inverse (V V^T)
    diff: tuple[np.ndarray, ...]   # nodal derivative matrices (d of them)
    quad_points: np.ndarray        # (n_q, dim)
    quad_weights: np.ndarray       # (n_q,)
    interp_q: np.ndarray           # nodal values -> quadrature values
    diff_q: tuple[np.ndarray, ...]  # nodal values -> ref derivatives at quads
    face_nodes: tuple[np.ndarray, ...]   # node ids per local face, ordered
    face_quad_weights: np.ndarray  # weights on the reference face
    face_interp: np.ndarray        # face-node values -> face quad values
    face_grad_q: tuple = field(default=())  # per face, (Vr, Vs) at face quads

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_face_quad(self) -> int:
        return self.face_quad_weights.shape[0]


def build_basis(dimension: int, k: int) -> BasisSet:
    """Construct the reference basis of degree ``k`` in 1 or 2 dimensions."""
    if k not in _SUPPORTED_DEGREES:
        raise ValueError(f"unsupported polynomial degree k={k}")
    if dimension == 1:
        return _build_1d(k)
    if dimension == 2:
        return _build_2d(k)
    raise ValueError(f"unsupported dimension {dimension}")


def _build_1d(k: int) -> BasisSet:
    nodes = gauss_lobatto_nodes(k)
    v = np.column_stack([_jacobi_norm(nodes, 0.0, 0.0, j)
                         for j in range(k + 1)])
    vinv = np.linalg.inv(v)
    mass_inv = v @ v.T
    mass = np.linalg.inv(mass_inv)
    vr = np.column_stack([_grad_jacobi_norm(nodes, 0.0, 0.0, j)
                          for j in range(k + 1)])
    d = vr @ vinv

    n_q = k + 2
    qp, qw = np.polynomial.legendre.leggauss(n_q)
    vq = np.column_stack([_jacobi_norm(qp, 0.0, 0.0, j)
                          for j in range(k + 1)]) @ vinv
    dq = np.column_stack([_grad_jacobi_norm(qp, 0.0, 0.0, j)
                          for j in range(k + 1)]) @ vinv

    return BasisSet(
        dimension=1, degree=k,
        nodes=nodes.reshape(-1, 1),
        vandermonde=v, mass=mass, mass_inv=mass_inv,
        diff=(d,),
        quad_points=qp.reshape(-1, 1), quad_weights=qw,
        interp_q=vq, diff_q=(dq,),
        face_nodes=(np.array([0]), np.array([k])),
        face_quad_weights=np.array([1.0]),
        face_interp=np.array([[1.0]]),
        face_grad_q=(),
    )


def _build_2d(k: int) -> BasisSet:
    nodes, multi = _triangle_nodes(k)
    r, s = nodes[:, 0], nodes[:, 1]
    v = _vandermonde_2d(k, r, s)
    vinv = np.linalg.inv(v)
    mass_inv = v @ v.T
    mass = np.linalg.inv(mass_inv)
    vr, vs = _grad_vandermonde_2d(k, r, s)
    dr = vr @ vinv
    ds = vs @ vinv

    # collapsed product rule on the triangle
    n_q = k + 2
    ga, wa = np.polynomial.legendre.leggauss(n_q)
    gb, wb = _sp.roots_jacobi(n_q, 1.0, 0.0)
    aa, bb = np.meshgrid(ga, gb, indexing="ij")
    rr = (0.5 * (1.0 + aa) * (1.0 - bb) - 1.0).ravel()
    ss = np.broadcast_to(bb, aa.shape).ravel().copy()
    qw = 0.5 * np.outer(wa, wb).ravel()
    vq = _vandermonde_2d(k, rr, ss) @ vinv
    vrq, vsq = _grad_vandermonde_2d(k, rr, ss)
    dq = (vrq @ vinv, vsq @ vinv)

    edge_nodes = _edge_node_lists(multi, k)
    fq, fw = np.polynomial.legendre.leggauss(k + 2)
    xi = gauss_lobatto_nodes(k)
    v1 = np.column_stack([_jacobi_norm(xi, 0.0, 0.0, j)
                          for j in range(k + 1)])
    vq1 = np.column_stack([_jacobi_norm(fq, 0.0, 0.0, j)
                           for j in range(k + 1)])
    face_interp = vq1 @ np.linalg.inv(v1)

    # full-basis gradient Vandermondes at the face quadrature points,
    # needed for test-function normal derivatives in consistency terms
    edge_coords = {
        0: (fq, np.full_like(fq, -1.0)),
        1: (-fq, fq),                      # r + s = 0, v1 -> v2
        2: (np.full_like(fq, -1.0), -fq),  # r = -1, v2 -> v0
    }
    face_grad_q = []
    face_val_q = []
    for e in range(3):
        re, se = edge_coords[e]
        gre, gse = _grad_vandermonde_2d(k, re, se)
        face_grad_q.append((gre @ vinv, gse @ vinv))
        face_val_q.append(_vandermonde_2d(k, re, se) @ vinv)

    basis = BasisSet(
        dimension=2, degree=k,
        nodes=nodes,
        vandermonde=v, mass=mass, mass_inv=mass_inv,
        diff=(dr, ds),
        quad_points=np.column_stack([rr, ss]), quad_weights=qw,
        interp_q=vq, diff_q=dq,
        face_nodes=tuple(edge_nodes),
        face_quad_weights=fw,
        face_interp=face_interp,
        face_grad_q=tuple(face_grad_q),
    )
    # sanity: trace through edge nodes equals the full-basis trace
    for e in range(3):
        sel = np.zeros((k + 2, nodes.shape[0]))
        sel[:, edge_nodes[e]] = face_interp
        if not np.allclose(sel, face_val_q[e], atol=1e-10):
            raise AssertionError("edge trace construction is inconsistent")
    return basis
