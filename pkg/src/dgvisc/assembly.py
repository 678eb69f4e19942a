"""Semi-discrete DG forms: convective, viscous and boundary residuals.

The ODE system is ``M du/dt = B(U) - A(U) - I(U)`` where B carries the
volume flux and interior-face penalized central (Rusanov) fluxes, A the
viscous volume term, interior-penalty jump terms and symmetric
consistency terms, and I the boundary terms built from ghost states.

Everything is written against the autodiff value protocol, so the same
assembly runs on plain numpy arrays or while recording a tape.

A ``Discretization`` caches, per (mesh, basis) pair, the geometric
factors, face groups (faces sharing a local edge and orientation, so
trace extraction vectorizes) and the constant matrices used by volume
and face quadrature.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .basis import BasisSet
from .mesh import DIRICHLET, INTERIOR, NEUMANN, PERIODIC, MeshTopology

__all__ = [
    "SolutionState", "BoundarySpec", "Discretization", "get_discretization",
    "jump_average", "assemble_convective", "assemble_viscous",
    "assemble_boundary", "rhs", "project_initial", "integrate_state",
    "l2_error", "nodal_gradient", "face_traces", "cell_face_jumps",
    "DEFAULT_TAU",
]

DEFAULT_TAU = 2.0


@dataclass
class SolutionState:
    """Nodal coefficients of all conserved variables, plus the previous
    accepted step (used by viscosity models) and the current time."""

    u: list
    u_prev: list
    t: float

    @property
    def n_vars(self) -> int:
        return len(self.u)

    def values(self):
        return [ad.value_of(c) for c in self.u]


class BoundarySpec:
    """Boundary data per mesh face group.

    ``entries`` maps a group name to ``("dirichlet", datum)`` or
    ``("neumann", datum)``.  A datum is a callable ``x -> (m, n)`` array
    of boundary values (Dirichlet: conserved state; Neumann: normal flux
    per variable), a constant sequence of length m, or for Neumann the
    string ``"extrapolate"`` for a free outflow.
    """

    def __init__(self, entries=None):
        self.entries = dict(entries or {})

    @staticmethod
    def periodic():
        return BoundarySpec({})

    def lookup(self, group):
        if group in self.entries:
            return self.entries[group]
        if "all" in self.entries:
            return self.entries["all"]
        return None

    def datum_values(self, kind, datum, x, n_vars):
        if callable(datum):
            vals = np.asarray(datum(x), dtype=float)
            if vals.shape[0] != n_vars:
                raise ValueError("boundary datum returned wrong variable "
                                 f"count {vals.shape[0]}, expected {n_vars}")
            return [vals[i] for i in range(n_vars)]
        seq = np.asarray(datum, dtype=float).reshape(-1)
        if seq.shape[0] != n_vars:
            raise ValueError(f"boundary datum has {seq.shape[0]} entries, "
                             f"expected {n_vars}")
        return [np.full(x.shape[0], seq[i]) for i in range(n_vars)]


class _FaceGroup:
    """Faces sharing (side, local edge, orientation flip)."""

    __slots__ = ("side", "faces", "cells", "gather", "lift_targets",
                 "normal", "fscale", "inv_farea", "cons_r", "cons_s",
                 "local_edge", "flip")

    def __init__(self, side, local_edge, flip, faces, cells, gather,
                 normal, fscale, inv_farea, cons_r, cons_s):
        self.side = side
        self.local_edge = local_edge
        self.flip = flip
        self.faces = faces
        self.cells = cells
        self.gather = gather            # (nf, k+1) flat node gather/scatter
        self.lift_targets = gather
        self.normal = normal            # (nf, dim)
        self.fscale = fscale            # (nf,) |F|/2 in 2D, 1 in 1D
        self.inv_farea = inv_farea      # (nf,) 1/|F|
        self.cons_r = cons_r            # (nf,) n . grad r (2D) or n*2/h (1D)
        self.cons_s = cons_s            # (nf,) n . grad s (2D only)


class Discretization:
    """All constant per-(mesh, basis) data used by assembly."""

    def __init__(self, mesh: MeshTopology, basis: BasisSet):
        if mesh.dimension != basis.dimension:
            raise ValueError("mesh and basis dimensions differ")
        self.mesh = mesh
        self.basis = basis
        self.dim = mesh.dimension
        self.k = basis.degree
        self.n_cells = mesh.n_cells
        self.nn = basis.n_nodes
        self.nq = basis.quad_weights.shape[0]
        self.nqf = basis.n_face_quad

        verts = mesh.vertices
        cells = mesh.cells
        if self.dim == 1:
            x0 = verts[cells[:, 0], 0]
            x1 = verts[cells[:, 1], 0]
            r = basis.nodes[:, 0]
            self.x_nodes = (x0[:, None]
                            + 0.5 * (r[None, :] + 1.0)
                            * (x1 - x0)[:, None])[..., None]
            rq = basis.quad_points[:, 0]
            self.x_quad = (x0[:, None]
                           + 0.5 * (rq[None, :] + 1.0)
                           * (x1 - x0)[:, None])[..., None]
            self.jac = 0.5 * mesh.cell_measure
            self.dxdr = [(2.0 / mesh.cell_measure)[:, None]]  # per dim rows
            self.metric = None
        else:
            p0 = verts[cells[:, 0]]
            p1 = verts[cells[:, 1]]
            p2 = verts[cells[:, 2]]
            r = basis.nodes[:, 0][None, :, None]
            s = basis.nodes[:, 1][None, :, None]
            self.x_nodes = (p0[:, None, :]
                            + 0.5 * (r + 1.0) * (p1 - p0)[:, None, :]
                            + 0.5 * (s + 1.0) * (p2 - p0)[:, None, :])
            rq = basis.quad_points[:, 0][None, :, None]
            sq = basis.quad_points[:, 1][None, :, None]
            self.x_quad = (p0[:, None, :]
                           + 0.5 * (rq + 1.0) * (p1 - p0)[:, None, :]
                           + 0.5 * (sq + 1.0) * (p2 - p0)[:, None, :])
            xr = 0.5 * (p1[:, 0] - p0[:, 0])
            yr = 0.5 * (p1[:, 1] - p0[:, 1])
            xs = 0.5 * (p2[:, 0] - p0[:, 0])
            ys = 0.5 * (p2[:, 1] - p0[:, 1])
            jac = xr * ys - xs * yr
            self.jac = jac
            self.metric = {
                "rx": ys / jac, "ry": -xs / jac,
                "sx": -yr / jac, "sy": xr / jac,
            }

        # quadrature lift matrices: rows are test nodes, columns quads
        w = basis.quad_weights
        self.lift_vol = [dq.T * w[None, :] for dq in basis.diff_q]
        self.proj = basis.mass_inv @ (basis.interp_q.T * w[None, :])

        # P1 interpolants of vertex-class fields
        if self.dim == 1:
            rn = basis.nodes[:, 0]
            rq = basis.quad_points[:, 0]
            self.p1_nodes = np.column_stack([(1 - rn) / 2, (1 + rn) / 2])
            self.p1_quad = np.column_stack([(1 - rq) / 2, (1 + rq) / 2])
        else:
            rn, sn = basis.nodes[:, 0], basis.nodes[:, 1]
            rq, sq = basis.quad_points[:, 0], basis.quad_points[:, 1]
            self.p1_nodes = np.column_stack(
                [-(rn + sn) / 2, (1 + rn) / 2, (1 + sn) / 2])
            self.p1_quad = np.column_stack(
                [-(rq + sq) / 2, (1 + rq) / 2, (1 + sq) / 2])
        fq = (np.array([0.0]) if self.dim == 1
              else np.polynomial.legendre.leggauss(self.k + 2)[0])
        self.p1_face = np.column_stack([(1 - fq) / 2, (1 + fq) / 2])

        self.cell_vclass = mesh.vertex_class[cells]
        self._build_face_data()

    # -- face plans ------------------------------------------------------
    def _build_face_data(self):
        mesh, basis = self.mesh, self.basis
        nn = self.nn
        local_edges = [(0,), (1,)] if self.dim == 1 else \
            [(0, 1), (1, 2), (2, 0)]

        nf = mesh.n_faces
        self.face_order = {}   # face id -> row in trace arrays
        # per-face walk vertices (minus side) for viscosity interpolation
        walk = np.zeros((nf, max(1, self.dim)), dtype=np.int64)
        for f in range(nf):
            c, le = mesh.face_cells[f, 0], mesh.face_local[f, 0]
            walk[f] = [mesh.cells[c, i] for i in local_edges[le]]
        self.face_walk_vclass = mesh.vertex_class[walk]

        def geometry(faces):
            return (mesh.face_normal[faces],
                    np.ones(len(faces)) if self.dim == 1
                    else 0.5 * mesh.face_measure[faces],
                    1.0 / mesh.face_measure[faces])

        def cons_factors(faces, cells_):
            # the minus normal is dotted into both sides' test gradients
            # (consistency terms average the gradient across the face)
            n = mesh.face_normal[faces]
            if self.dim == 1:
                return (n[:, 0] * 2.0 / mesh.cell_measure[cells_],
                        np.zeros(len(faces)))
            m = self.metric
            cr = n[:, 0] * m["rx"][cells_] + n[:, 1] * m["ry"][cells_]
            cs = n[:, 0] * m["sx"][cells_] + n[:, 1] * m["sy"][cells_]
            return cr, cs

        self.minus_groups = []
        self.plus_groups = []
        interior = set(int(f) for f in mesh.interior_faces)
        n_loc = len(local_edges)
        for e in range(n_loc):
            sel = np.flatnonzero(mesh.face_local[:, 0] == e)
            if sel.size:
                cells_ = mesh.face_cells[sel, 0]
                enodes = basis.face_nodes[e]
                gather = cells_[:, None] * nn + enodes[None, :]
                normal, fscale, inv_f = geometry(sel)
                cr, cs = cons_factors(sel, cells_)
                self.minus_groups.append(_FaceGroup(
                    0, e, False, sel, cells_, gather, normal, fscale,
                    inv_f, cr, cs))
            for flip in (False, True):
                selp = np.flatnonzero(
                    (mesh.face_local[:, 1] == e)
                    & (mesh.face_cells[:, 1] >= 0)
                    & (mesh.face_flip == flip))
                if not selp.size:
                    continue
                cells_ = mesh.face_cells[selp, 1]
                enodes = basis.face_nodes[e]
                order = enodes[::-1] if flip else enodes
                gather = cells_[:, None] * nn + order[None, :]
                normal, fscale, inv_f = geometry(selp)
                cr, cs = cons_factors(selp, cells_)
                self.plus_groups.append(_FaceGroup(
                    1, e, flip, selp, cells_, gather, normal, fscale,
                    inv_f, cr, cs))

        # row permutations mapping concatenated group output to face order
        self.minus_perm = _perm([g.faces for g in self.minus_groups], nf)
        int_faces = mesh.interior_faces
        self.plus_perm = _perm([g.faces for g in self.plus_groups], nf,
                               subset=int_faces)
        self.interior_faces = int_faces
        self.boundary_rows = mesh.boundary_faces

        # per-cell face table (for jump features): face id and side
        n_loc_cell = 2 if self.dim == 1 else 3
        self.cell_faces = np.full((self.n_cells, n_loc_cell), -1,
                                  dtype=np.int64)
        self.cell_face_sign = np.zeros((self.n_cells, n_loc_cell))
        for f in range(nf):
            cm, le_m = mesh.face_cells[f, 0], mesh.face_local[f, 0]
            self.cell_faces[cm, le_m] = f
            self.cell_face_sign[cm, le_m] = 1.0
            cp, le_p = mesh.face_cells[f, 1], mesh.face_local[f, 1]
            if cp >= 0:
                self.cell_faces[cp, le_p] = f
                self.cell_face_sign[cp, le_p] = -1.0
        if np.any(self.cell_faces < 0):
            raise ValueError("dangling cell face")

    # -- basic operators ---------------------------------------------------
    def interp_quad(self, w):
        """Nodal (nc, nn) -> quadrature (nc, nq) values."""
        return ad.apply_matrix(self.basis.interp_q, w)

    def gradient(self, w):
        """Physical gradient, nodal values, per dimension."""
        if self.dim == 1:
            return (self.dxdr[0] * ad.apply_matrix(self.basis.diff[0], w),)
        m = self.metric
        dr = ad.apply_matrix(self.basis.diff[0], w)
        ds = ad.apply_matrix(self.basis.diff[1], w)
        wx = m["rx"][:, None] * dr + m["sx"][:, None] * ds
        wy = m["ry"][:, None] * dr + m["sy"][:, None] * ds
        return (wx, wy)

    def mass_solve(self, r):
        """Apply the exact block-diagonal inverse mass matrix."""
        return ad.apply_matrix(self.basis.mass_inv, r) / self.jac[:, None]

    def mass_apply(self, r):
        return ad.apply_matrix(self.basis.mass, r) * self.jac[:, None]


_DISC_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def get_discretization(mesh: MeshTopology, basis: BasisSet
                       ) -> Discretization:
    per_mesh = _DISC_CACHE.setdefault(mesh, {})
    key = (basis.dimension, basis.degree)
    if key not in per_mesh:
        per_mesh[key] = Discretization(mesh, basis)
    return per_mesh[key]


def _perm(face_lists, nf, subset=None):
    """Row index such that concat(group rows)[perm] is in face order."""
    order = np.concatenate([np.asarray(f) for f in face_lists]) \
        if face_lists else np.empty(0, dtype=np.int64)
    lookup = np.full(nf, -1, dtype=np.int64)
    lookup[order] = np.arange(order.size)
    if subset is None:
        subset = np.arange(nf)
    rows = lookup[subset]
    if np.any(rows < 0):
        raise ValueError("face group tables do not cover all faces")
    return rows


# ---------------------------------------------------------------------
# averages and jumps
# ---------------------------------------------------------------------

def jump_average(u_minus, u_plus, normal, boundary=False):
    """Average and jump of scalar or vector traces across a face.

    Scalars return ``jump = (u- - u+) n`` as a tuple of d components;
    vectors (given as d-tuples) return the symmetric outer product jump
    ``q- (.) n- + q+ (.) n+`` as a d x d nested tuple.  On boundary faces
    (``boundary=True``) the one-sided rules avg = u, jump = u n apply.
    """
    normal = np.asarray(normal, dtype=float)
    nvec = [normal[..., i] for i in range(normal.shape[-1])]
    scalar = not isinstance(u_minus, (tuple, list))
    if scalar:
        um = [u_minus]
        up = None if boundary else [u_plus]
    else:
        um = list(u_minus)
        up = None if boundary else list(u_plus)
        if up is not None and len(um) != len(up):
            raise ValueError("mismatched trace lengths")
    if boundary:
        if scalar:
            return um[0], tuple(um[0] * n for n in nvec)
        avg = tuple(um)
        jump = tuple(tuple(0.5 * (um[i] * nvec[j] + um[j] * nvec[i])
                           for j in range(len(nvec)))
                     for i in range(len(um)))
        return avg, jump
    if scalar:
        if ad.value_of(um[0]).shape != ad.value_of(up[0]).shape:
            raise ValueError("mismatched trace lengths")
        avg = 0.5 * (um[0] + up[0])
        diff = um[0] - up[0]
        return avg, tuple(diff * n for n in nvec)
    avg = tuple(0.5 * (a + b) for a, b in zip(um, up))
    diff = [a - b for a, b in zip(um, up)]
    jump = tuple(tuple(0.5 * (diff[i] * nvec[j] + diff[j] * nvec[i])
                       for j in range(len(nvec)))
                 for i in range(len(diff)))
    return avg, jump


# ---------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------

def _grouped_traces(disc: Discretization, w_flat, groups, perm):
    """Trace values (rows in requested order) at face quadrature points."""
    pieces = []
    for g in groups:
        nodal = w_flat[g.gather]                       # (nf_g, k+1)
        pieces.append(ad.apply_matrix(disc.basis.face_interp, nodal))
    if not pieces:
        return None
    allrows = ad.concat(pieces, axis=0)
    return allrows[perm]


def face_traces(disc: Discretization, w):
    """Minus and plus traces of a nodal field on every face.

    Plus traces are mirrored (set to the minus trace) on true boundary
    faces so jumps vanish there.
    """
    w_flat = w.reshape(disc.n_cells * disc.nn)
    wm = _grouped_traces(disc, w_flat, disc.minus_groups,
                         disc.minus_perm)
    wp_int = _grouped_traces(disc, w_flat, disc.plus_groups,
                             disc.plus_perm)
    if wp_int is None:
        return wm, wm
    nf = disc.mesh.n_faces
    rows_src = np.empty(nf, dtype=np.int64)
    rows_src[disc.interior_faces] = np.arange(disc.interior_faces.size)
    both = ad.concat([wp_int, wm], axis=0)
    rows = rows_src.copy()
    rows[disc.boundary_rows] = (wp_int.shape[0]
                                + disc.boundary_rows)
    wp = both[rows]
    return wm, wp


def cell_face_jumps(disc: Discretization, w):
    """Per-cell signed jumps (self - neighbor) at face quad points.

    Shape (n_cells, n_local_faces, nqf); zero across true boundaries.
    """
    wm, wp = face_traces(disc, w)
    jump = wm - wp                       # (nf, nqf), minus-side orientation
    per_cell = jump[disc.cell_faces]     # (nc, nloc, nqf)
    return per_cell * disc.cell_face_sign[:, :, None]


def nodal_gradient(disc: Discretization, w):
    return disc.gradient(w)


# ---------------------------------------------------------------------
# residual assembly
# ---------------------------------------------------------------------

def _zero_flat(disc):
    return np.zeros(disc.n_cells * disc.nn)


def _face_weighted_lift(disc, groups, values_per_face, out, sign=1.0):
    """Scatter face-quadrature data against edge-node test functions.

    ``values_per_face`` has shape (nf, nqf) in minus orientation.  The
    plus-side orientation flip is fully encoded in the reversed
    gather/lift index tables (symmetric quadrature points), so the
    values are used as-is.
    """
    w_ref = disc.basis.face_quad_weights
    for g in groups:
        vals = values_per_face[g.faces]
        weighted = vals * (w_ref[None, :] * sign)
        contrib = ad.apply_matrix(disc.basis.face_interp.T, weighted)
        contrib = contrib * g.fscale[:, None]
        out = out + ad.scatter_add(contrib, g.lift_targets,
                                   disc.n_cells * disc.nn)
    return out


def _face_fullgrad_lift(disc, groups, values_per_face, out):
    """Scatter face data against normal derivatives of all test functions."""
    w_ref = disc.basis.face_quad_weights
    for g in groups:
        vals = values_per_face[g.faces]
        if g.flip:
            vals = vals[:, ::-1]
        weighted = vals * w_ref[None, :]
        if disc.dim == 1:
            d_end = disc.basis.diff[0][disc.basis.face_nodes[g.local_edge][0]]
            contrib = ad.apply_matrix(d_end[None, :].T, weighted)
            contrib = contrib * g.cons_r[:, None]
        else:
            vr, vs = disc.basis.face_grad_q[g.local_edge]
            part_r = ad.apply_matrix(vr.T, weighted) * g.cons_r[:, None]
            part_s = ad.apply_matrix(vs.T, weighted) * g.cons_s[:, None]
            contrib = (part_r + part_s) * g.fscale[:, None]
        targets = (g.cells[:, None] * disc.nn
                   + np.arange(disc.nn)[None, :])
        out = out + ad.scatter_add(contrib, targets,
                                   disc.n_cells * disc.nn)
    return out


def _volume_convective(disc, flux, u_nodal):
    uq = [disc.interp_quad(c) for c in u_nodal]
    f = flux.evaluate(uq, where="volume quadrature")
    res = []
    for i in range(flux.n_vars):
        if disc.dim == 1:
            r = ad.apply_matrix(disc.lift_vol[0], f[i][0])
        else:
            m = disc.metric
            gr = (f[i][0] * m["rx"][:, None] + f[i][1] * m["ry"][:, None])
            gs = (f[i][0] * m["sx"][:, None] + f[i][1] * m["sy"][:, None])
            gr = gr * disc.jac[:, None]
            gs = gs * disc.jac[:, None]
            r = (ad.apply_matrix(disc.lift_vol[0], gr)
                 + ad.apply_matrix(disc.lift_vol[1], gs))
        res.append(r.reshape(disc.n_cells * disc.nn))
    return res


def _rusanov_face_flux(disc, flux, state, interior_only=True):
    """Penalized central flux per interior face and variable."""
    traces_m, traces_p = [], []
    for c in state.u:
        wm, wp = face_traces(disc, c)
        traces_m.append(wm)
        traces_p.append(wp)
    sel = disc.interior_faces
    um = [t[sel] for t in traces_m]
    up = [t[sel] for t in traces_p]
    normal = disc.mesh.face_normal[sel]
    lam_q = flux.max_wave_speed(um, up, normal[:, None, :],
                                where="face quadrature")
    lam = ad.amax_last(lam_q) if not isinstance(lam_q, np.ndarray) \
        else lam_q.max(axis=1)
    fm = flux.evaluate(um, where="face quadrature")
    fp = flux.evaluate(up, where="face quadrature")
    phi = []
    for i in range(flux.n_vars):
        central = 0.0
        for d in range(disc.dim):
            central = central + 0.5 * (fm[i][d] + fp[i][d]) \
                * normal[:, None, d]
        if isinstance(lam, np.ndarray):
            jump_term = 0.5 * lam[:, None] * (um[i] - up[i])
        else:
            jump_term = 0.5 * lam.reshape(lam.size, 1) * (um[i] - up[i])
        phi.append(central + jump_term)
    return phi, (traces_m, traces_p)


def _expand_interior(disc, rows_interior):
    """Embed per-interior-face data into full (nf, nqf) arrays (zeros on
    boundary rows)."""
    nf = disc.mesh.n_faces
    zero = np.zeros((len(disc.boundary_rows), disc.nqf))
    both = ad.concat([rows_interior, zero], axis=0)
    order = np.empty(nf, dtype=np.int64)
    order[disc.interior_faces] = np.arange(disc.interior_faces.size)
    order[disc.boundary_rows] = (disc.interior_faces.size
                                 + np.arange(len(disc.boundary_rows)))
    return both[order]


def assemble_convective(state: SolutionState, flux, basis, mesh):
    """B(U): volume flux term minus interior-face Rusanov fluxes."""
    disc = get_discretization(mesh, basis)
    vol = _volume_convective(disc, flux, state.u)
    phi, _ = _rusanov_face_flux(disc, flux, state)
    out = []
    for i in range(flux.n_vars):
        r = vol[i]
        full = _expand_interior(disc, phi[i])
        r = _face_weighted_lift(disc, disc.minus_groups, full, r, sign=-1.0)
        r = _face_weighted_lift(disc, disc.plus_groups, full, r, sign=+1.0)
        out.append(r.reshape(disc.n_cells, disc.nn))
    return out


def _neumann_face_rows(disc, bc):
    rows = []
    mesh = disc.mesh
    for f in disc.boundary_rows:
        kind = _face_bc_kind(mesh, bc, f)
        if kind == "neumann":
            rows.append(f)
    return np.array(rows, dtype=np.int64)


def _face_bc_kind(mesh, bc, f):
    group = mesh.face_group[f]
    entry = bc.lookup(group) if bc is not None else None
    if entry is not None:
        return entry[0]
    return "neumann" if mesh.face_kind[f] == NEUMANN else "dirichlet"


def assemble_viscous(state: SolutionState, visc, basis, mesh,
                     tau: float = DEFAULT_TAU, bc=None):
    """A(U): viscous volume term, jump penalty, consistency terms.

    The penalty covers interior and Dirichlet faces (one-sided jump on
    the boundary); Neumann faces are skipped.  Consistency terms act on
    interior faces only and are weighted by the face viscosity, so a
    vanishing viscosity removes the whole form.
    """
    if tau <= 0:
        raise ValueError("penalty constant tau must be positive")
    disc = get_discretization(mesh, basis)
    mu_vol = visc.at_volume_points(disc)        # (nc, nq)
    if np.min(ad.value_of(mu_vol)) < -1e-14:
        raise ValueError("negative viscosity")
    mu_face = visc.at_face_points(disc)         # (nf, nqf)
    k2 = float(disc.k ** 2)

    grads = [disc.gradient(c) for c in state.u]
    out = []
    penalty_rows = np.array(
        [f for f in range(mesh.n_faces)
         if mesh.face_cells[f, 1] >= 0
         or _face_bc_kind(mesh, bc, f) == "dirichlet"], dtype=np.int64)
    pen_mask = np.zeros(mesh.n_faces)
    pen_mask[penalty_rows] = 1.0
    int_mask = np.zeros(mesh.n_faces)
    int_mask[disc.interior_faces] = 1.0

    for i, c in enumerate(state.u):
        # volume: sum_q w_q mu grad(u).grad(v); the cell jacobian cancels
        # against the test-derivative scale in 1D
        if disc.dim == 1:
            uxq = disc.interp_quad(grads[i][0])
            r = ad.apply_matrix(disc.lift_vol[0], mu_vol * uxq)
        else:
            m = disc.metric
            uxq = disc.interp_quad(grads[i][0])
            uyq = disc.interp_quad(grads[i][1])
            gr = mu_vol * (uxq * m["rx"][:, None] + uyq * m["ry"][:, None])
            gs = mu_vol * (uxq * m["sx"][:, None] + uyq * m["sy"][:, None])
            r = (ad.apply_matrix(disc.lift_vol[0], gr * disc.jac[:, None])
                 + ad.apply_matrix(disc.lift_vol[1], gs * disc.jac[:, None]))
        r = r.reshape(disc.n_cells * disc.nn)

        # penalty: (tau k^2 / |F|) mu [u][v] on interior + Dirichlet faces
        wm, wp = face_traces(disc, c)
        jump = (wm - wp) * pen_mask[:, None]     # mirror gives 0; for
        # one-sided Dirichlet faces the mirror must NOT zero the jump:
        bfaces = disc.boundary_rows
        if bfaces.size:
            dir_rows = np.array([f for f in bfaces
                                 if _face_bc_kind(mesh, bc, f)
                                 == "dirichlet"], dtype=np.int64)
            if dir_rows.size:
                onesided = np.zeros(mesh.n_faces)
                onesided[dir_rows] = 1.0
                jump = jump + wm * onesided[:, None]
        inv_f = 1.0 / mesh.face_measure
        pen = mu_face * jump * (tau * k2 * inv_f)[:, None]
        r = _face_weighted_lift(disc, disc.minus_groups, pen, r, sign=+1.0)
        r = _face_weighted_lift(disc, disc.plus_groups, pen, r, sign=-1.0)

        # consistency terms on interior faces, scaled by face viscosity
        gm = []
        gp = []
        for d in range(disc.dim):
            tm, tp = face_traces(disc, grads[i][d])
            gm.append(tm)
            gp.append(tp)
        n = mesh.face_normal
        avg_dn = 0.0
        for d in range(disc.dim):
            avg_dn = avg_dn + 0.5 * (gm[d] + gp[d]) * n[:, None, d]
        avg_dn = avg_dn * int_mask[:, None] * mu_face
        r = _face_weighted_lift(disc, disc.minus_groups, avg_dn, r,
                                sign=-1.0)
        r = _face_weighted_lift(disc, disc.plus_groups, avg_dn, r,
                                sign=+1.0)
        half_jump = 0.5 * (wm - wp) * int_mask[:, None] * mu_face
        r = _face_fullgrad_lift(disc, disc.minus_groups, -1.0 * half_jump, r)
        r = _face_fullgrad_lift(disc, disc.plus_groups, -1.0 * half_jump, r)
        out.append(r.reshape(disc.n_cells, disc.nn))
    return out


def assemble_boundary(state: SolutionState, flux, bc: BoundarySpec,
                      basis, mesh, visc=None, tau: float = DEFAULT_TAU):
    """I(U): ghost-state Rusanov fluxes on Dirichlet faces, prescribed
    normal fluxes on Neumann faces, and the Dirichlet penalty datum."""
    disc = get_discretization(mesh, basis)
    out = [_zero_flat(disc) for _ in range(flux.n_vars)]
    bfaces = disc.boundary_rows
    if bfaces.size == 0:
        return [o.reshape(disc.n_cells, disc.nn) for o in out]
    if bc is None:
        raise ValueError("mesh has boundary faces but no boundary data")

    traces = [face_traces(disc, c)[0] for c in state.u]
    mu_face = visc.at_face_points(disc) if visc is not None else None

    # face quadrature coordinates for data evaluation
    xq_face = _boundary_face_coords(disc, bfaces)

    full = [np.zeros((mesh.n_faces, disc.nqf)) for _ in range(flux.n_vars)]
    full_pen = [np.zeros((mesh.n_faces, disc.nqf))
                for _ in range(flux.n_vars)]
    contributions = [list() for _ in range(flux.n_vars)]
    pen_contrib = [list() for _ in range(flux.n_vars)]
    rows = []
    for row, f in enumerate(bfaces):
        group = mesh.face_group[f]
        entry = bc.lookup(group)
        if entry is None:
            raise ValueError(f"boundary face {f} (group {group!r}) has no "
                             "boundary data")
        kind, datum = entry
        n = mesh.face_normal[f]
        um = [t[f] for t in traces]
        x = xq_face[row]
        rows.append(f)
        if kind == "dirichlet":
            gvals = bc.datum_values(kind, datum, x, flux.n_vars)
            ghost = [np.asarray(g) for g in gvals]
            lam_q = flux.max_wave_speed(um, ghost, n[None, :],
                                        where=f"boundary face {f}")
            lam = ad.amax_all(lam_q) if not isinstance(lam_q, np.ndarray) \
                else lam_q.max()
            fm = flux.evaluate(um, where=f"boundary face {f}")
            fg = flux.evaluate(ghost, where=f"boundary face {f}")
            for i in range(flux.n_vars):
                central = 0.0
                for d in range(disc.dim):
                    central = central + 0.5 * (fm[i][d] + fg[i][d]) * n[d]
                phi = central + 0.5 * lam * (um[i] - ghost[i])
                contributions[i].append((f, phi))
                if mu_face is not None:
                    pen = (-(tau * disc.k ** 2 / mesh.face_measure[f])
                           * mu_face[f] * ghost[i])
                    pen_contrib[i].append((f, pen))
        elif kind == "neumann":
            if isinstance(datum, str) and datum == "extrapolate":
                fm = flux.evaluate(um, where=f"boundary face {f}")
                for i in range(flux.n_vars):
                    phi = 0.0
                    for d in range(disc.dim):
                        phi = phi + fm[i][d] * n[d]
                    contributions[i].append((f, phi))
            else:
                gvals = bc.datum_values(kind, datum, x, flux.n_vars)
                for i in range(flux.n_vars):
                    contributions[i].append((f, np.asarray(gvals[i])))
        else:
            raise ValueError(f"unknown boundary kind {kind!r}")

    res = []
    for i in range(flux.n_vars):
        r = out[i]
        fullrows = _rows_to_full(disc, contributions[i])
        if fullrows is not None:
            r = _face_weighted_lift(disc, disc.minus_groups, fullrows, r,
                                    sign=+1.0)
        penrows = _rows_to_full(disc, pen_contrib[i])
        if penrows is not None:
            r = _face_weighted_lift(disc, disc.minus_groups, penrows, r,
                                    sign=+1.0)
        res.append(r.reshape(disc.n_cells, disc.nn))
    return res


def _rows_to_full(disc, face_rows):
    if not face_rows:
        return None
    nf = disc.mesh.n_faces
    pieces = [vals.reshape(1, disc.nqf) for _, vals in face_rows]
    stackrows = ad.concat(pieces, axis=0)
    zero = np.zeros((1, disc.nqf))
    both = ad.concat([stackrows, zero], axis=0)
    order = np.full(nf, len(face_rows), dtype=np.int64)
    for rowi, (f, _) in enumerate(face_rows):
        order[f] = rowi
    return both[order]


def _boundary_face_coords(disc, bfaces):
    mesh = disc.mesh
    coords = np.zeros((len(bfaces), disc.nqf, max(1, disc.dim)))
    fq = (np.array([0.0]) if disc.dim == 1
          else np.polynomial.legendre.leggauss(disc.k + 2)[0])
    local_edges = [(0,), (1,)] if disc.dim == 1 else [(0, 1), (1, 2), (2, 0)]
    for row, f in enumerate(bfaces):
        c, le = mesh.face_cells[f, 0], mesh.face_local[f, 0]
        vids = [mesh.cells[c, i] for i in local_edges[le]]
        if disc.dim == 1:
            coords[row, 0] = mesh.vertices[vids[0]]
        else:
            pa, pb = mesh.vertices[vids[0]], mesh.vertices[vids[1]]
            t = 0.5 * (fq + 1.0)
            coords[row] = pa[None, :] + t[:, None] * (pb - pa)[None, :]
    return coords


def rhs(state: SolutionState, visc, flux, basis, mesh,
        bc: BoundarySpec | None = None, tau: float = DEFAULT_TAU):
    """du/dt = M^-1 (B - A - I), solved exactly per cell."""
    disc = get_discretization(mesh, basis)
    b = assemble_convective(state, flux, basis, mesh)
    a = None
    if visc is not None and not visc.is_zero:
        a = assemble_viscous(state, visc, basis, mesh, tau=tau, bc=bc)
    i_terms = None
    if disc.boundary_rows.size:
        i_terms = assemble_boundary(state, flux, bc, basis, mesh,
                                    visc=visc, tau=tau)
    out = []
    for i in range(flux.n_vars):
        r = b[i]
        if a is not None:
            r = r - a[i]
        if i_terms is not None:
            r = r - i_terms[i]
        out.append(disc.mass_solve(r))
    return out


# ---------------------------------------------------------------------
# projections, integrals, errors
# ---------------------------------------------------------------------

def project_initial(disc: Discretization, ic_fn, n_vars: int):
    """Cellwise L2 projection of an initial condition callable.

    ``ic_fn(x)`` maps an (n, dim) coordinate array to (m, n) values.
    """
    x = disc.x_quad.reshape(-1, disc.x_quad.shape[-1])
    vals = np.asarray(ic_fn(x), dtype=float)
    if vals.ndim == 1:
        vals = vals[None, :]
    if vals.shape[0] != n_vars:
        raise ValueError(f"initial condition returned {vals.shape[0]} "
                         f"variables, expected {n_vars}")
    out = []
    for i in range(n_vars):
        uq = vals[i].reshape(disc.n_cells, disc.nq)
        out.append(disc.proj @ uq[..., None])
    return [o[..., 0] for o in out]


def integrate_state(disc: Discretization, u):
    """Integral over the domain, one value per variable."""
    w = disc.basis.quad_weights
    out = []
    for c in u:
        uq = disc.interp_quad(c)
        out.append(ad.sum_all(uq * (disc.jac[:, None] * w[None, :])))
    return out


def l2_error(disc: Discretization, u, exact_fn, t: float):
    """L2(domain) norm of (u_h - exact) by quadrature, summed over
    variables."""
    x = disc.x_quad.reshape(-1, disc.x_quad.shape[-1])
    vals = np.asarray(exact_fn(x, t), dtype=float)
    if vals.ndim == 1:
        vals = vals[None, :]
    total = 0.0
    w = disc.basis.quad_weights
    for i, c in enumerate(u):
        uq = ad.value_of(disc.interp_quad(c))
        diff = uq - vals[i].reshape(disc.n_cells, disc.nq)
        total += float(np.sum(diff * diff * disc.jac[:, None] * w[None, :]))
    return float(np.sqrt(total))
