"""Explicit Runge-Kutta time integration driving assembly + viscosity.

The viscosity field is produced once per step from the step's initial
state and frozen across stages.  Time step control is either a fixed dt
or the stability bound

    dt = CFL / (k^2/h * max|f'| + k^4/h^2 * max mu),

with the last step clipped to land exactly on the final time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from .assembly import (DEFAULT_TAU, BoundarySpec, SolutionState,
                       get_discretization, integrate_state, project_initial,
                       rhs)
from .basis import build_basis
from .fluxes import NonphysicalStateError

__all__ = ["TimeControls", "Problem", "Trajectory", "BlowUpError",
           "compute_dt", "courant_number", "step", "run",
           "SSPRK3", "LSERK45"]


class BlowUpError(RuntimeError):
    """Solution left the finite/physical regime; carries the step index
    and the partial trajectory collected so far."""

    def __init__(self, message, step_index, trajectory=None):
        super().__init__(f"{message} (step {step_index})")
        self.step_index = step_index
        self.trajectory = trajectory


@dataclass
class TimeControls:
    """Time-marching policy."""

    mode: str = "cfl"              # "cfl" or "fixed"
    cfl: float = 0.5
    dt: float | None = None
    final_time: float | None = None
    n_steps: int | None = None
    integrator: str = "auto"       # ssprk3 | lserk45 | auto
    viscosity_every: int = 1       # recompute mu every s steps
    # cold-start guard for discontinuous data: shrink the first steps
    # while the front smears into a resolvable profile
    startup_steps: int = 0
    startup_factor: float = 0.1

    def __post_init__(self):
        if self.mode not in ("cfl", "fixed"):
            raise ValueError(f"unknown time mode {self.mode!r}")
        if self.mode == "cfl" and self.cfl <= 0:
            raise ValueError("CFL number must be positive")
        if self.mode == "fixed" and (self.dt is None or self.dt <= 0):
            raise ValueError("fixed mode needs a positive dt")
        if self.final_time is None and self.n_steps is None:
            raise ValueError("need a final time or a step count")
        if self.viscosity_every < 1:
            raise ValueError("viscosity_every must be at least 1")
        if not (0.0 < self.startup_factor <= 1.0):
            raise ValueError("startup_factor must be in (0, 1]")

    def ramp(self, i: int) -> float:
        """Step-size multiplier during the startup phase."""
        if i >= self.startup_steps:
            return 1.0
        f0 = self.startup_factor
        return f0 + (1.0 - f0) * i / self.startup_steps

    def pick_integrator(self, k: int) -> str:
        if self.integrator != "auto":
            return self.integrator
        return "ssprk3" if k <= 2 else "lserk45"


@dataclass
class Problem:
    """Everything that uniquely defines a run."""

    mesh: object
    k: int
    flux: object
    ic: object                      # callable x -> (m, n) values
    bc: BoundarySpec
    controls: TimeControls
    reference: object = None        # see reference module
    tau: float = DEFAULT_TAU
    name: str = ""
    mesh_source: tuple | None = None  # lets references regenerate finer

    def basis(self):
        return build_basis(self.mesh.dimension, self.k)


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    courants: list = field(default_factory=list)
    states: list = field(default_factory=list)       # kept if requested
    visc_fields: list = field(default_factory=list)  # kept if requested
    initial_mass: np.ndarray | None = None
    final_state: SolutionState | None = None

    @property
    def n_steps(self):
        return len(self.dts)


# low-storage five-stage fourth-order coefficients, exact rationals
_LSERK_A = [Fraction(0),
            Fraction(-567301805773, 1357537059087),
            Fraction(-2404267990393, 2016746695238),
            Fraction(-3550918686646, 2091501179385),
            Fraction(-1275806237668, 842570457699)]
_LSERK_B = [Fraction(1432997174477, 9575080441755),
            Fraction(5161836677717, 13612068292357),
            Fraction(1720146321549, 2090206949498),
            Fraction(3134564353537, 4481467310338),
            Fraction(2277821191437, 14882151754819)]
LSERK45 = {"a": [float(x) for x in _LSERK_A],
           "b": [float(x) for x in _LSERK_B]}
SSPRK3 = {"stages": 3}


def compute_dt(state: SolutionState, visc_field, flux, mesh, basis,
               cfl: float) -> float:
    """Stability-bounded time step from wave speed and viscosity."""
    if cfl <= 0:
        raise ValueError("CFL number must be positive")
    disc = get_discretization(mesh, basis)
    uq = [ad.value_of(disc.interp_quad(c)) for c in state.u]
    speeds = ad.value_of(flux.pointwise_speed(uq, where="dt control"))
    smax = float(np.max(speeds))
    mu_max = visc_field.max_value() if visc_field is not None else 0.0
    k = basis.degree
    denom = (k * k / mesh.h) * smax + (k ** 4 / mesh.h ** 2) * mu_max
    if denom <= 0.0:
        raise ValueError("zero wave speed and viscosity: the CFL step is "
                         "undefined, use fixed-dt mode")
    return cfl / denom


def courant_number(state: SolutionState, flux, mesh, basis,
                   dt: float) -> float:
    if dt <= 0:
        raise ValueError("dt must be positive")
    disc = get_discretization(mesh, basis)
    uq = [ad.value_of(disc.interp_quad(c)) for c in state.u]
    speeds = ad.value_of(flux.pointwise_speed(uq, where="courant"))
    return float(np.max(speeds)) * dt / mesh.h


def _stage_state(u, t):
    return SolutionState(u=u, u_prev=u, t=t)


def rk_step(rhs_fn, u0, t: float, dt: float, integrator: str):
    """One explicit RK step of du/dt = rhs_fn(u, t) for a list of arrays."""
    if integrator == "ssprk3":
        k1 = rhs_fn(u0, t)
        u1 = [a + dt * b for a, b in zip(u0, k1)]
        k2 = rhs_fn(u1, t + dt)
        u2 = [0.75 * a + 0.25 * (b + dt * c)
              for a, b, c in zip(u0, u1, k2)]
        k3 = rhs_fn(u2, t + 0.5 * dt)
        return [(1.0 / 3.0) * a + (2.0 / 3.0) * (b + dt * c)
                for a, b, c in zip(u0, u2, k3)]
    if integrator == "lserk45":
        un = list(u0)
        p = [np.zeros(ad.value_of(c).shape) for c in u0]
        stage_time = t
        for a_i, b_i in zip(LSERK45["a"], LSERK45["b"]):
            k = rhs_fn(un, stage_time)
            p = [a_i * pi + dt * ki for pi, ki in zip(p, k)]
            un = [ui + b_i * pi for ui, pi in zip(un, p)]
        return un
    raise ValueError(f"unknown integrator {integrator!r}")


def step(state: SolutionState, visc_field, flux, mesh, basis, bc,
         dt: float, integrator: str = "ssprk3", tau: float = DEFAULT_TAU
         ) -> SolutionState:
    """One explicit RK step with the viscosity frozen across stages."""

    def L(u, t):
        return rhs(_stage_state(u, t), visc_field, flux, basis, mesh,
                   bc=bc, tau=tau)

    un = rk_step(L, state.u, state.t, dt, integrator)
    for c in un:
        if not np.all(np.isfinite(ad.value_of(c))):
            raise BlowUpError("non-finite state after step", step_index=-1)
    return SolutionState(u=un, u_prev=state.u, t=state.t + dt)


def initial_state(problem: Problem, basis=None) -> SolutionState:
    """Project the initial condition; repair nonphysical cells.

    The L2 projection of a jump that is not aligned with cell faces can
    leave gas cells with negative pressure.  Those cells fall back to
    nodal sampling of the datum, and if the in-cell interpolant still
    violates positivity, to the constant mean of the samples (the
    admissible set is convex, so means of physical samples are
    physical).
    """
    basis = basis or problem.basis()
    disc = get_discretization(problem.mesh, basis)
    flux = problem.flux
    u0 = project_initial(disc, problem.ic, flux.n_vars)
    if flux.physicality_margin(u0) <= 0.0 or _qp_margin(disc, flux, u0) <= 0:
        x_nodes = disc.x_nodes.reshape(-1, disc.x_nodes.shape[-1])
        sampled = np.asarray(problem.ic(x_nodes), dtype=float)
        sampled = [sampled[i].reshape(disc.n_cells, disc.nn)
                   for i in range(flux.n_vars)]
        for c in range(disc.n_cells):
            cellvals = [v[c] for v in u0]
            if flux.physicality_margin(cellvals) > 0.0 and \
                    _qp_margin_cell(disc, flux, u0, c) > 0.0:
                continue
            for i in range(flux.n_vars):
                u0[i][c] = sampled[i][c]
            if _qp_margin_cell(disc, flux, u0, c) <= 0.0:
                for i in range(flux.n_vars):
                    u0[i][c] = sampled[i][c].mean()
    return SolutionState(u=u0, u_prev=[c.copy() for c in u0], t=0.0)


def _qp_margin(disc, flux, u):
    uq = [ad.value_of(disc.interp_quad(c)) for c in u]
    return flux.physicality_margin(uq)


def _qp_margin_cell(disc, flux, u, c):
    uq = [disc.basis.interp_q @ v[c] for v in u]
    return flux.physicality_margin(uq)


def attempt_step(state, visc_field, flux, mesh, basis, bc, dt, integrator,
                 tau, max_halvings: int = 12):
    """Take one step, halving dt on transient nonphysical failures.

    Returns (new_state, dt_used).  Raises ``BlowUpError`` when halving
    cannot rescue the step.
    """
    for _ in range(max_halvings + 1):
        try:
            new_state = step(state, visc_field, flux, mesh, basis, bc, dt,
                             integrator=integrator, tau=tau)
            return new_state, dt
        except (NonphysicalStateError, BlowUpError, ad.DomainError) as err:
            last = err
            dt = 0.5 * dt
    raise BlowUpError(f"step failed after {max_halvings} halvings: {last}",
                      step_index=-1)


def run(problem: Problem, visc_model, keep_states: bool = False,
        keep_fields: bool = False, on_step=None, n_steps=None,
        max_steps: int = 2_000_000) -> Trajectory:
    """March a problem to its final time or step count.

    ``on_step(i, state, visc_field, dt)`` is called after every accepted
    step; blow-ups raise ``BlowUpError`` carrying the partial trajectory.
    """
    basis = problem.basis()
    disc = get_discretization(problem.mesh, basis)
    controls = problem.controls
    integrator = controls.pick_integrator(problem.k)
    state = initial_state(problem, basis)
    traj = Trajectory()
    traj.initial_mass = np.array(
        [float(ad.value_of(v))
         for v in integrate_state(disc, state.u)])
    if keep_states:
        traj.states.append(state)

    target_steps = n_steps if n_steps is not None else controls.n_steps
    final_time = controls.final_time
    visc_field = None
    i = 0
    while True:
        if target_steps is not None and i >= target_steps:
            break
        if final_time is not None and state.t >= final_time - 1e-14:
            break
        if i >= max_steps:
            raise BlowUpError("step budget exhausted", i, traj)
        try:
            if visc_field is None or i % controls.viscosity_every == 0:
                dt_prev = traj.dts[-1] if traj.dts else None
                visc_field = visc_model.compute(state, problem.flux,
                                                problem.mesh, basis,
                                                dt=dt_prev)
            if controls.mode == "fixed":
                # the fixed step grid is a contract; no rescue halving
                dt = controls.dt
                state = step(state, visc_field, problem.flux,
                             problem.mesh, basis, problem.bc, dt,
                             integrator=integrator, tau=problem.tau)
            else:
                dt = compute_dt(state, visc_field, problem.flux,
                                problem.mesh, basis, controls.cfl)
                dt = dt * controls.ramp(i)
                if final_time is not None:
                    dt = min(dt, final_time - state.t)
                state, dt = attempt_step(state, visc_field, problem.flux,
                                         problem.mesh, basis, problem.bc,
                                         dt, integrator, problem.tau)
            courant = courant_number(state, problem.flux, problem.mesh,
                                     basis, dt)
        except (BlowUpError, NonphysicalStateError, ad.DomainError) as err:
            raise BlowUpError(f"run diverged: {err}", i, traj) from err
        traj.times.append(state.t)
        traj.dts.append(dt)
        traj.courants.append(courant)
        if keep_states:
            traj.states.append(state)
        if keep_fields:
            traj.visc_fields.append(visc_field)
        if on_step is not None:
            on_step(i, state, visc_field, dt)
        i += 1
    traj.final_state = state
    return traj
