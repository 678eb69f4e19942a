"""Artificial viscosity: shared pipeline and interchangeable producers.

Every producer yields one raw value per cell; the shared pipeline then
caps it by a wave-speed bound and smooths it into a continuous
piecewise-linear field (vertex averaging of adjacent cells, then the
per-cell linear interpolant).  Producers:

* ``NoViscosity``          -- zero field (plain DG).
* ``EntropyViscosityModel``-- entropy-residual sensor with tuning
  constants ``c_k`` (sensor gain) and ``c_max`` (bound).
* ``NeuralViscosityModel`` -- per-cell statistics fed to the policy
  network; output rescaled by the global wave speed and the jump-limited
  length scale, then capped.

All producers run unchanged on numpy values or on a recording tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import network as nn
from .assembly import Discretization, cell_face_jumps, get_discretization, \
    integrate_state

__all__ = [
    "ViscosityField", "EvConfig", "NoViscosity", "EntropyViscosityModel",
    "NeuralViscosityModel", "viscosity_bound", "apply_bound", "smooth",
    "entropy_viscosity", "neural_viscosity", "neural_features",
    "make_viscosity_model",
]

_STD_GUARD = 1e-24


class ViscosityField:
    """Bounded per-cell values plus their vertex-averaged linear field."""

    def __init__(self, mesh, raw, vertex):
        self.mesh = mesh
        self.raw = raw                  # (n_cells,)
        self.vertex = vertex            # (n_vertex_classes,)
        vals = ad.value_of(raw)
        self.is_zero = bool(np.all(vals == 0.0))

    def _cell_vertex_values(self, disc: Discretization):
        return self.vertex[disc.cell_vclass]

    def at_nodes(self, disc: Discretization):
        return ad.apply_matrix(disc.p1_nodes,
                               self._cell_vertex_values(disc))

    def at_volume_points(self, disc: Discretization):
        return ad.apply_matrix(disc.p1_quad,
                               self._cell_vertex_values(disc))

    def at_face_points(self, disc: Discretization):
        vv = self.vertex[disc.face_walk_vclass]
        if disc.dim == 1:
            return vv.reshape(disc.mesh.n_faces, 1)
        return ad.apply_matrix(disc.p1_face, vv)

    def cell_average(self, disc: Discretization):
        """Exact average of the linear interpolant over each cell."""
        vv = self._cell_vertex_values(disc)
        return ad.sum_last(vv) / vv.shape[-1]

    def max_value(self) -> float:
        return float(np.max(ad.value_of(self.vertex))) if \
            ad.value_of(self.vertex).size else 0.0


@dataclass(frozen=True)
class EvConfig:
    """Entropy-sensor constants; both must be tuned per problem family."""

    c_k: float = 1.0
    c_max: float = 0.5
    eps_den: float = 1e-10

    def __post_init__(self):
        if self.c_k <= 0 or self.c_max <= 0 or self.eps_den <= 0:
            raise ValueError("EvConfig constants must be positive")


# ---------------------------------------------------------------------
# shared pipeline
# ---------------------------------------------------------------------

def viscosity_bound(state, flux, mesh, k: int, c_max: float):
    """Per-cell cap c_max (h/k) max|f'| keeping dissipation at most
    first order in h."""
    if c_max <= 0:
        raise ValueError("c_max must be positive")
    speeds = flux.pointwise_speed(state.u, where="viscosity bound")
    per_cell = ad.amax_last(speeds)
    return (c_max * mesh.h / float(k)) * per_cell


def apply_bound(raw, mu_max):
    """Cap raw cell viscosities at the wave-speed bound."""
    return ad.minimum(raw, mu_max)


def smooth(raw, mesh) -> ViscosityField:
    """Vertex averaging plus per-cell linear interpolation.

    Step one averages adjacent cell values onto each vertex (periodic
    seams share one vertex class); step two is the linear interpolant
    through the vertex values, exposed by the field's evaluators.
    """
    nc = mesh.n_cells
    if ad.value_of(raw).shape != (nc,):
        raise ValueError("raw viscosity must hold one value per cell")
    counts = np.diff(mesh.vclass_cell_indptr).astype(float)
    class_ids = np.repeat(np.arange(mesh.n_vertex_classes),
                          np.diff(mesh.vclass_cell_indptr))
    gathered = raw[mesh.vclass_cell_data]
    sums = ad.scatter_add(gathered, class_ids, mesh.n_vertex_classes)
    vertex = sums / counts
    return ViscosityField(mesh, raw, vertex)


# ---------------------------------------------------------------------
# producers
# ---------------------------------------------------------------------

class NoViscosity:
    """Zero dissipation; keeps the plain DG scheme."""

    name = "none"

    def compute(self, state, flux, mesh, basis, dt=None) -> ViscosityField:
        return smooth(np.zeros(mesh.n_cells), mesh)


def entropy_viscosity(state, flux, mesh, basis, cfg: EvConfig, dt: float):
    """Raw bounded cell viscosity from the entropy-production sensor.

    The space-time residual uses a backward difference between the two
    carried states; the face term takes the largest entropy-flux jump
    over each cell's faces.  A near-constant entropy field (denominator
    below ``eps_den``) yields zero viscosity.

    With no step history yet (``dt is None``) the sensor cannot certify
    smoothness (for zero-velocity gas states it is even identically
    blind), so the first step runs at the capped first-order value;
    the sensor takes over from the second step on.
    """
    if dt is not None and dt <= 0:
        raise ValueError("dt must be positive")
    disc = get_discretization(mesh, basis)
    ent_now, flux_now = flux.entropy_pair(state.u)
    ent_prev, _ = flux.entropy_pair(state.u_prev)

    e_q = disc.interp_quad(ent_now)
    if dt is None:
        volume = float(np.sum(mesh.cell_measure))
        mean_e = integrate_state(disc, [ent_now])[0] / volume
        denom = ad.amax_all(ad.absolute(e_q - mean_e))
        if float(ad.value_of(denom)) < cfg.eps_den:
            return np.zeros(mesh.n_cells)
        return ad.value_of(viscosity_bound(state, flux, mesh,
                                           basis.degree, cfg.c_max))
    e_prev_q = disc.interp_quad(ent_prev)
    dt_term = (e_q - e_prev_q) / dt

    div = 0.0
    for d in range(disc.dim):
        div = div + disc.interp_quad(disc.gradient(flux_now[d])[d])
    residual = ad.absolute(dt_term + div)
    d_cell = ad.amax_last(residual)

    # entropy-flux jump across each cell's own faces, zero on true
    # boundary faces (mirrored traces)
    jump_n = 0.0
    for d in range(disc.dim):
        comp = cell_face_jumps(disc, flux_now[d])    # (nc, nloc, nqf)
        n_d = mesh.face_normal[disc.cell_faces, d]   # (nc, nloc)
        jump_n = jump_n + comp * n_d[:, :, None]
    h_cell = ad.amax_last(ad.absolute(jump_n).reshape(mesh.n_cells, -1))
    h_cell = h_cell * (float(basis.degree) / mesh.h)

    sensor = ad.maximum(d_cell, h_cell)

    volume = float(np.sum(mesh.cell_measure))
    mean_e = integrate_state(disc, [ent_now])[0] / volume
    denom = ad.amax_all(ad.absolute(e_q - mean_e))
    if float(ad.value_of(denom)) < cfg.eps_den:
        return np.zeros(mesh.n_cells)
    scale = cfg.c_k * (mesh.h / float(basis.degree)) ** 2
    raw = scale * sensor / denom
    cap = viscosity_bound(state, flux, mesh, basis.degree, cfg.c_max)
    return apply_bound(raw, cap)


class EntropyViscosityModel:
    name = "ev"

    def __init__(self, cfg: EvConfig):
        self.cfg = cfg

    def compute(self, state, flux, mesh, basis, dt=None) -> ViscosityField:
        raw = entropy_viscosity(state, flux, mesh, basis, self.cfg, dt)
        return smooth(raw, mesh)


def _stats(x):
    """min, max, mean, std of the trailing axis -> four (...,) arrays."""
    mean = ad.sum_last(x) / x.shape[-1]
    lead = ad.value_of(mean).shape
    centered = x - mean.reshape(lead + (1,))
    var = ad.sum_last(centered * centered) / x.shape[-1]
    std = ad.sqrt(var + _STD_GUARD)
    return [ad.amin_last(x), ad.amax_last(x), mean, std]


def _scale_family(cols):
    """Affine map of each feature column onto [-1, 1] via its global
    (over cells) extrema; degenerate (constant) columns map to zero."""
    block = ad.stack(cols, axis=1) if len(cols) > 1 else \
        cols[0].reshape(ad.value_of(cols[0]).size, 1)
    cols_t = block.T if isinstance(block, ad.AdValue) else block.T
    lo = ad.amin_last(cols_t)
    hi = ad.amax_last(cols_t)
    span = hi - lo
    live = (ad.value_of(span) >= 1e-300).astype(float)   # constant mask
    half = 0.5 * span + (1.0 - live)                     # safe divisor
    mid = lo + 0.5 * span
    ncols = ad.value_of(block).shape[1]
    scaled = (block - mid.reshape(1, ncols)) / half.reshape(1, ncols)
    return scaled * live[None, :]


def neural_features(state, flux, mesh, basis):
    """Per-cell network inputs plus the rescaling pair (Lambda, h~).

    Families: statistics of the representative variable, of its flux and
    gradient (per component in 2D), of the previous-step variable, and
    the face jumps (raw pair in 1D, statistics in 2D); the polynomial
    degree is appended unscaled.
    """
    disc = get_discretization(mesh, basis)
    w = flux.representative(state.u)
    w_prev = flux.representative(state.u_prev)
    f_rep = flux.representative_flux(state.u, where="features")
    grads = disc.gradient(w)

    families = [_stats(w)]
    for comp in f_rep:
        families.append(_stats(comp))
    for comp in grads:
        families.append(_stats(comp))
    families.append(_stats(w_prev))

    jumps = cell_face_jumps(disc, w)                  # (nc, nloc, nqf)
    flat_jumps = jumps.reshape(mesh.n_cells, -1)
    if disc.dim == 1:
        jump_cols = [flat_jumps[:, 0], flat_jumps[:, 1]]
    else:
        jump_cols = _stats(flat_jumps)
    families.append(jump_cols)

    parts = [_scale_family(cols) for cols in families]
    parts.append(np.full((mesh.n_cells, 1), float(basis.degree)))
    feats = ad.concat(parts, axis=1)

    speeds = flux.pointwise_speed(state.u, where="features")
    lam = ad.amax_all(speeds)
    jump_size = ad.amax_last(ad.absolute(flat_jumps))
    h_tilde = ad.minimum(jump_size, mesh.h)
    return feats, lam, h_tilde


def neural_viscosity(state, flux, mesh, basis, net: nn.NetworkParams,
                     c_max: float, theta=None):
    """Raw bounded cell viscosity from the policy network."""
    feats, lam, h_tilde = neural_features(state, flux, mesh, basis)
    y = nn.forward_batch(net, feats, theta)
    raw = y * h_tilde * lam
    cap = viscosity_bound(state, flux, mesh, basis.degree, c_max)
    return apply_bound(raw, cap)


class NeuralViscosityModel:
    name = "nn"

    def __init__(self, net: nn.NetworkParams, c_max: float = 1.0,
                 theta=None):
        self.net = net
        self.c_max = c_max
        self.theta = theta    # recorded parameter vector during training

    def compute(self, state, flux, mesh, basis, dt=None) -> ViscosityField:
        raw = neural_viscosity(state, flux, mesh, basis, self.net,
                               self.c_max, theta=self.theta)
        return smooth(raw, mesh)


def make_viscosity_model(kind: str, *, ev: EvConfig | None = None,
                         net: nn.NetworkParams | None = None,
                         c_max: float | None = None):
    if kind == "none":
        return NoViscosity()
    if kind == "ev":
        return EntropyViscosityModel(ev or EvConfig())
    if kind == "nn":
        if net is None:
            raise ValueError("neural viscosity needs network parameters")
        return NeuralViscosityModel(net, 1.0 if c_max is None else c_max)
    raise ValueError(f"unknown viscosity model {kind!r}")
