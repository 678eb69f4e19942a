"""Reference solutions: analytic samplers and overkill companion runs.

A reference provider answers ``at(t)`` with nodal values of the
reference solution in the run's own discrete space, for nondecreasing
times.  Analytic providers evaluate a closed form; the overkill provider
marches a companion solve on a mesh refined by a fixed factor (default
8) with a tuned entropy-viscosity model and interpolates its polynomial
solution at the coarse nodal points.

The exact Riemann solution of the ideal-gas shock tube (pressure-root
Newton iteration plus wave-structure sampling) lives here as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .assembly import get_discretization
from .basis import build_basis
from .fluxes import conserved_from_primitive
from .mesh import build_structured_tri_2d, build_uniform_1d, refine

__all__ = [
    "riemann_pressure_star", "riemann_sample", "sod_solution",
    "AnalyticReference", "OverkillReference", "build_reference",
    "OVERKILL_FACTOR",
]

OVERKILL_FACTOR = 8


# ---------------------------------------------------------------------
# exact Riemann solution for the 1D ideal-gas shock tube
# ---------------------------------------------------------------------

def _pressure_fn(p, rho_k, p_k, a_k, gamma):
    """Toro's f_K and its derivative for one side of the tube."""
    if p > p_k:  # shock branch
        a_coef = 2.0 / ((gamma + 1.0) * rho_k)
        b_coef = (gamma - 1.0) / (gamma + 1.0) * p_k
        root = math.sqrt(a_coef / (p + b_coef))
        f = (p - p_k) * root
        df = root * (1.0 - 0.5 * (p - p_k) / (p + b_coef))
    else:       # rarefaction branch
        pr = p / p_k
        f = (2.0 * a_k / (gamma - 1.0)) * (pr ** ((gamma - 1.0)
                                                  / (2.0 * gamma)) - 1.0)
        df = (1.0 / (rho_k * a_k)) * pr ** (-(gamma + 1.0) / (2.0 * gamma))
    return f, df


def riemann_pressure_star(left, right, gamma=1.4, tol=1e-13,
                          max_iter=100):
    """Pressure and velocity in the star region between the two waves.

    ``left`` and ``right`` are (rho, v, p) primitive triples.
    """
    rho_l, v_l, p_l = left
    rho_r, v_r, p_r = right
    a_l = math.sqrt(gamma * p_l / rho_l)
    a_r = math.sqrt(gamma * p_r / rho_r)
    if 2.0 * (a_l + a_r) / (gamma - 1.0) <= v_r - v_l:
        raise ValueError("vacuum-generating data has no star state")
    # two-rarefaction initial guess, positive by construction
    z = (gamma - 1.0) / (2.0 * gamma)
    p0 = ((a_l + a_r - 0.5 * (gamma - 1.0) * (v_r - v_l))
          / (a_l / p_l ** z + a_r / p_r ** z)) ** (1.0 / z)
    p = max(p0, 1e-12)
    for _ in range(max_iter):
        f_l, df_l = _pressure_fn(p, rho_l, p_l, a_l, gamma)
        f_r, df_r = _pressure_fn(p, rho_r, p_r, a_r, gamma)
        g = f_l + f_r + (v_r - v_l)
        dp = g / (df_l + df_r)
        p_new = max(p - dp, 1e-14)
        if abs(p_new - p) < tol * max(1.0, p):
            p = p_new
            break
        p = p_new
    f_l, _ = _pressure_fn(p, rho_l, p_l, a_l, gamma)
    f_r, _ = _pressure_fn(p, rho_r, p_r, a_r, gamma)
    v_star = 0.5 * (v_l + v_r) + 0.5 * (f_r - f_l)
    return p, v_star


def riemann_sample(left, right, xi, gamma=1.4):
    """Primitive state (rho, v, p) along similarity rays xi = x/t."""
    xi = np.asarray(xi, dtype=float)
    rho_l, v_l, p_l = left
    rho_r, v_r, p_r = right
    a_l = math.sqrt(gamma * p_l / rho_l)
    a_r = math.sqrt(gamma * p_r / rho_r)
    p_s, v_s = riemann_pressure_star(left, right, gamma)
    gm = gamma - 1.0
    gp = gamma + 1.0

    rho = np.empty_like(xi)
    v = np.empty_like(xi)
    p = np.empty_like(xi)

    left_side = xi <= v_s
    # -- left wave
    if p_s > p_l:  # left shock
        rho_sl = rho_l * ((p_s / p_l + gm / gp) / (gm / gp * p_s / p_l + 1))
        s_l = v_l - a_l * math.sqrt((gp * p_s / p_l + gm) / (2 * gamma))
        pre = left_side & (xi < s_l)
        post = left_side & ~pre
        rho[pre], v[pre], p[pre] = rho_l, v_l, p_l
        rho[post], v[post], p[post] = rho_sl, v_s, p_s
    else:          # left rarefaction
        rho_sl = rho_l * (p_s / p_l) ** (1 / gamma)
        a_sl = a_l * (p_s / p_l) ** (gm / (2 * gamma))
        head = v_l - a_l
        tail = v_s - a_sl
        pre = left_side & (xi < head)
        fan = left_side & (xi >= head) & (xi < tail)
        post = left_side & (xi >= tail)
        rho[pre], v[pre], p[pre] = rho_l, v_l, p_l
        rho[post], v[post], p[post] = rho_sl, v_s, p_s
        xf = xi[fan]
        vf = (2.0 / gp) * (a_l + 0.5 * gm * v_l + xf)
        af = a_l - 0.5 * gm * (vf - v_l)
        rho[fan] = rho_l * (af / a_l) ** (2.0 / gm)
        v[fan] = vf
        p[fan] = p_l * (af / a_l) ** (2.0 * gamma / gm)

    right_side = ~left_side
    # -- right wave
    if p_s > p_r:  # right shock
        rho_sr = rho_r * ((p_s / p_r + gm / gp) / (gm / gp * p_s / p_r + 1))
        s_r = v_r + a_r * math.sqrt((gp * p_s / p_r + gm) / (2 * gamma))
        post = right_side & (xi <= s_r)
        pre = right_side & ~post
        rho[pre], v[pre], p[pre] = rho_r, v_r, p_r
        rho[post], v[post], p[post] = rho_sr, v_s, p_s
    else:          # right rarefaction
        rho_sr = rho_r * (p_s / p_r) ** (1 / gamma)
        a_sr = a_r * (p_s / p_r) ** (gm / (2 * gamma))
        head = v_r + a_r
        tail = v_s + a_sr
        pre = right_side & (xi > head)
        fan = right_side & (xi <= head) & (xi > tail)
        post = right_side & (xi <= tail)
        rho[pre], v[pre], p[pre] = rho_r, v_r, p_r
        rho[post], v[post], p[post] = rho_sr, v_s, p_s
        xf = xi[fan]
        vf = (2.0 / gp) * (-a_r + 0.5 * gm * v_r + xf)
        af = a_r + 0.5 * gm * (vf - v_r)
        rho[fan] = rho_r * (af / a_r) ** (2.0 / gm)
        v[fan] = vf
        p[fan] = p_r * (af / a_r) ** (2.0 * gamma / gm)
    return rho, v, p


def sod_solution(left_prim, right_prim, x0: float, gamma=1.4):
    """Conserved-variable sampler (x, t) for a shock-tube problem."""

    def sample(x, t):
        x = np.asarray(x, dtype=float).reshape(-1)
        if t <= 0.0:
            rho = np.where(x <= x0, left_prim[0], right_prim[0])
            v = np.where(x <= x0, left_prim[1], right_prim[1])
            p = np.where(x <= x0, left_prim[2], right_prim[2])
        else:
            rho, v, p = riemann_sample(left_prim, right_prim,
                                       (x - x0) / t, gamma)
        return np.stack(conserved_from_primitive([rho, v, p], gamma))

    return sample


# ---------------------------------------------------------------------
# reference providers
# ---------------------------------------------------------------------

class AnalyticReference:
    """Wraps a closed-form sampler ``fn(x, t) -> (m, n)`` conserved."""

    def __init__(self, fn, problem, basis=None):
        self.fn = fn
        basis = basis or problem.basis()
        self.disc = get_discretization(problem.mesh, basis)
        self.n_vars = problem.flux.n_vars

    def at(self, t: float):
        x = self.disc.x_nodes.reshape(-1, self.disc.x_nodes.shape[-1])
        vals = np.asarray(self.fn(x, t), dtype=float)
        if vals.ndim == 1:
            vals = vals[None, :]
        return [vals[i].reshape(self.disc.n_cells, self.disc.nn)
                for i in range(self.n_vars)]


def _locate_points_1d(mesh, points):
    xs = mesh.vertices[:, 0]
    a = xs.min()
    # uniform regenerated meshes: direct arithmetic
    h = mesh.cell_measure[0]
    idx = np.clip(((points[:, 0] - a) / h).astype(int), 0,
                  mesh.n_cells - 1)
    x_l = mesh.vertices[mesh.cells[idx, 0], 0]
    ref = 2.0 * (points[:, 0] - x_l) / mesh.cell_measure[idx] - 1.0
    return idx, np.clip(ref, -1.0, 1.0).reshape(-1, 1)


def _locate_points_tri(mesh, points):
    """Barycentric search vectorized per point over candidate cells."""
    p0 = mesh.vertices[mesh.cells[:, 0]]
    p1 = mesh.vertices[mesh.cells[:, 1]]
    p2 = mesh.vertices[mesh.cells[:, 2]]
    idx = np.empty(points.shape[0], dtype=np.int64)
    ref = np.empty((points.shape[0], 2))
    d = p1 - p0
    e = p2 - p0
    det = d[:, 0] * e[:, 1] - d[:, 1] * e[:, 0]
    for n, pt in enumerate(points):
        rel = pt[None, :] - p0
        lam1 = (rel[:, 0] * e[:, 1] - rel[:, 1] * e[:, 0]) / det
        lam2 = (d[:, 0] * rel[:, 1] - d[:, 1] * rel[:, 0]) / det
        inside = (lam1 >= -1e-12) & (lam2 >= -1e-12) \
            & (lam1 + lam2 <= 1.0 + 1e-12)
        c = int(np.argmax(inside))
        if not inside[c]:
            raise ValueError(f"point {pt} outside the reference mesh")
        idx[n] = c
        ref[n] = (2.0 * lam1[c] - 1.0, 2.0 * lam2[c] - 1.0)
    return idx, ref


class OverkillReference:
    """Companion solve on a refined mesh, interpolated to the run space.

    Advances lazily: ``at(t)`` marches the fine solution exactly to t
    (monotonically increasing calls) and evaluates its per-cell
    polynomials at the coarse nodal points.
    """

    def __init__(self, problem, visc_model, factor: int = OVERKILL_FACTOR,
                 basis=None):
        from .timeloop import (attempt_step, compute_dt,
                               initial_state)  # local import, avoids cycle
        self._attempt_step = attempt_step
        self._compute_dt = compute_dt
        basis = basis or problem.basis()
        self.coarse_disc = get_discretization(problem.mesh, basis)
        fine_mesh = _refined_mesh(problem, factor)
        self.problem = replace(problem, mesh=fine_mesh)
        self.basis = build_basis(fine_mesh.dimension, problem.k)
        self.disc = get_discretization(fine_mesh, self.basis)
        self.visc_model = visc_model
        self.state = initial_state(self.problem, self.basis)
        self.prev_dt = None
        self._steps_taken = 0

        pts = self.coarse_disc.x_nodes.reshape(
            -1, self.coarse_disc.x_nodes.shape[-1])
        if fine_mesh.dimension == 1:
            cells, ref = _locate_points_1d(fine_mesh, pts)
        else:
            cells, ref = _locate_points_tri(fine_mesh, pts)
        self.point_cells = cells
        # evaluation matrix: fine nodal values -> values at target points
        from .basis import _vandermonde_2d, _jacobi_norm  # noqa: internal
        if fine_mesh.dimension == 1:
            v_pts = np.column_stack(
                [_jacobi_norm(ref[:, 0], 0.0, 0.0, j)
                 for j in range(problem.k + 1)])
        else:
            v_pts = _vandermonde_2d(problem.k, ref[:, 0], ref[:, 1])
        self.eval_rows = v_pts @ np.linalg.inv(self.basis.vandermonde)

    def _advance_to(self, t: float):
        controls = self.problem.controls
        integrator = controls.pick_integrator(self.problem.k)
        guard = 0
        while self.state.t < t - 1e-13:
            visc = self.visc_model.compute(self.state, self.problem.flux,
                                           self.problem.mesh, self.basis,
                                           dt=self.prev_dt)
            dt = self._compute_dt(self.state, visc, self.problem.flux,
                                  self.problem.mesh, self.basis,
                                  controls.cfl)
            dt = dt * controls.ramp(self._steps_taken)
            dt = min(dt, t - self.state.t)
            self.state, dt = self._attempt_step(
                self.state, visc, self.problem.flux, self.problem.mesh,
                self.basis, self.problem.bc, dt, integrator,
                self.problem.tau)
            self.prev_dt = dt
            self._steps_taken += 1
            guard += 1
            if guard > 10_000_000:
                raise RuntimeError("overkill reference stalled")

    def at(self, t: float):
        if t < self.state.t - 1e-10:
            raise ValueError("reference queried backwards in time")
        self._advance_to(t)
        out = []
        for c in self.state.u:
            vals = np.einsum("pj,pj->p", self.eval_rows,
                             c[self.point_cells])
            out.append(vals.reshape(self.coarse_disc.n_cells,
                                    self.coarse_disc.nn))
        return out


def _refined_mesh(problem, factor: int):
    src = getattr(problem, "mesh_source", None)
    if src is not None:
        kind = src[0]
        if kind == "uniform1d":
            _, domain, n, periodic = src
            return build_uniform_1d(domain, n * factor, periodic)
        if kind == "structured2d":
            _, domain, nx, ny, periodic = src
            return build_structured_tri_2d(domain, nx * factor,
                                           ny * factor, periodic)
    mesh = problem.mesh
    halvings = int(round(math.log2(factor)))
    if 2 ** halvings != factor:
        raise ValueError("refinement factor must be a power of two")
    for _ in range(halvings):
        mesh = refine(mesh)
    return mesh


def build_reference(problem, basis=None):
    """Reference provider for a problem: analytic if it has one, else an
    overkill companion run with the problem's tuned dissipation."""
    spec = problem.reference
    if spec is None:
        return None
    kind = spec[0]
    if kind == "analytic":
        return AnalyticReference(spec[1], problem, basis=basis)
    if kind == "overkill":
        visc_model = spec[1]
        factor = spec[2] if len(spec) > 2 else OVERKILL_FACTOR
        return OverkillReference(problem, visc_model, factor=factor,
                                 basis=basis)
    raise ValueError(f"unknown reference kind {kind!r}")
