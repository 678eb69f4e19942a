import numpy as np
import pytest

from dgvisc.assembly import BoundarySpec, get_discretization, \
    integrate_state
from dgvisc.basis import build_basis
from dgvisc.fluxes import make_flux
from dgvisc.mesh import build_uniform_1d
from dgvisc.network import init_network
from dgvisc.timeloop import (BlowUpError, Problem, TimeControls,
                             compute_dt, courant_number, initial_state,
                             rk_step, run)
from dgvisc.viscosity import NeuralViscosityModel, NoViscosity, smooth


class ConstVisc:
    def __init__(self, mu):
        self.mu = mu

    def compute(self, state, flux, mesh, basis, dt=None):
        return smooth(np.full(mesh.n_cells, self.mu), mesh)


def advection_problem(n=60, k=1, cfl=0.2, periodic=True, T=None,
                      n_steps=None, integrator="auto"):
    if T is None and n_steps is None:
        n_steps = 1
    mesh = build_uniform_1d((0, 1), n, periodic=periodic)
    return Problem(
        mesh=mesh, k=k, flux=make_flux("advection1d", beta=1.0),
        ic=lambda x: (0.5 + np.sin(2 * np.pi * x[:, 0]))[None, :],
        bc=BoundarySpec.periodic(),
        controls=TimeControls(mode="cfl", cfl=cfl, final_time=T,
                              n_steps=n_steps, integrator=integrator))


def test_compute_dt_hand_value():
    prob = advection_problem(n=60, k=1)
    basis = build_basis(1, 1)
    state = initial_state(prob, basis)
    field = smooth(np.zeros(60), prob.mesh)
    # max |f'| = 1, mu = 0, k = 1, h = 1/60, CFL = 0.2
    dt = compute_dt(state, field, prob.flux, prob.mesh, basis, 0.2)
    assert dt == pytest.approx(0.2 / 60.0, abs=1e-12)
    assert dt == pytest.approx(3.3333e-3, abs=1e-7)


def test_compute_dt_monotone_in_viscosity():
    prob = advection_problem(n=20, k=2)
    basis = build_basis(1, 2)
    state = initial_state(prob, basis)
    dt0 = compute_dt(state, smooth(np.zeros(20), prob.mesh), prob.flux,
                     prob.mesh, basis, 0.2)
    dt1 = compute_dt(state, smooth(np.full(20, 0.01), prob.mesh),
                     prob.flux, prob.mesh, basis, 0.2)
    assert dt1 < dt0


def test_compute_dt_quarters_when_k_doubles():
    prob1 = advection_problem(n=20, k=1)
    prob2 = advection_problem(n=20, k=2)
    zero = smooth(np.zeros(20), prob1.mesh)
    s1 = initial_state(prob1, build_basis(1, 1))
    s2 = initial_state(prob2, build_basis(1, 2))
    dt1 = compute_dt(s1, zero, prob1.flux, prob1.mesh, build_basis(1, 1),
                     0.2)
    dt2 = compute_dt(s2, smooth(np.zeros(20), prob2.mesh), prob2.flux,
                     prob2.mesh, build_basis(1, 2), 0.2)
    assert dt2 == pytest.approx(dt1 / 4.0, rel=1e-12)


def test_compute_dt_zero_state_errors():
    mesh = build_uniform_1d((0, 1), 4, periodic=True)
    prob = Problem(mesh=mesh, k=1, flux=make_flux("burgers1d"),
                   ic=lambda x: np.zeros((1, x.shape[0])),
                   bc=BoundarySpec.periodic(),
                   controls=TimeControls(mode="fixed", dt=1e-3, n_steps=1))
    basis = build_basis(1, 1)
    state = initial_state(prob, basis)
    with pytest.raises(ValueError, match="fixed-dt"):
        compute_dt(state, smooth(np.zeros(4), mesh), prob.flux, mesh,
                   basis, 0.2)


def test_courant_number_hand_value():
    mesh = build_uniform_1d((0, 1), 10, periodic=True)   # h = 0.1
    basis = build_basis(1, 1)
    prob = advection_problem(n=10)
    state = initial_state(prob, basis)
    # |f'| = 1 everywhere for unit advection
    c = courant_number(state, prob.flux, mesh, basis, 0.02)
    assert c == pytest.approx(0.2, rel=1e-12)
    c2 = courant_number(state, prob.flux, mesh, basis, 0.01)
    assert c2 == pytest.approx(0.1, rel=1e-12)


def test_constant_state_is_steady():
    mesh = build_uniform_1d((0, 1), 8, periodic=True)
    prob = Problem(mesh=mesh, k=2, flux=make_flux("burgers1d"),
                   ic=lambda x: np.full((1, x.shape[0]), 1.3),
                   bc=BoundarySpec.periodic(),
                   controls=TimeControls(mode="fixed", dt=1e-3,
                                         n_steps=20))
    traj = run(prob, NoViscosity())
    assert np.abs(np.asarray(traj.final_state.u[0]) - 1.3).max() < 1e-14


@pytest.mark.parametrize("integrator,min_order", [("ssprk3", 2.9),
                                                  ("lserk45", 3.9)])
def test_rk_order_on_linear_ode(integrator, min_order):
    """u' = -u: global error order measured against exp(-1)."""
    errs = []
    for n in (20, 40, 80):
        dt = 1.0 / n
        u = [np.array([1.0])]
        for _ in range(n):
            u = rk_step(lambda w, t: [-w[0]], u, 0.0, dt, integrator)
        errs.append(abs(u[0][0] - np.exp(-1.0)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= min_order


def test_unknown_integrator_rejected():
    with pytest.raises(ValueError):
        rk_step(lambda w, t: w, [np.array([1.0])], 0.0, 0.1, "rk99")


def test_mass_conserved_full_revolution_neural_model():
    prob = advection_problem(n=20, k=2, cfl=0.3, T=1.0)
    net = init_network(1, seed=0, width=16, depth=3)
    net.theta[:] = 0.0   # softplus(0) output, nonzero viscosity
    traj = run(prob, NeuralViscosityModel(net, c_max=0.5))
    disc = get_discretization(prob.mesh, build_basis(1, 2))
    final = float(np.asarray(integrate_state(disc, traj.final_state.u)[0]))
    assert abs(final - traj.initial_mass[0]) < 1e-12


def test_run_deterministic_bitwise():
    def once():
        prob = advection_problem(n=16, k=2, cfl=0.25, T=0.2)
        traj = run(prob, ConstVisc(0.002))
        return np.asarray(traj.final_state.u[0]).copy()

    assert np.array_equal(once(), once())


def test_zero_steps_returns_initial_state():
    prob = advection_problem(n=8, k=1, n_steps=0)
    traj = run(prob, NoViscosity())
    assert traj.n_steps == 0
    assert traj.final_state.t == 0.0


def test_final_time_hit_exactly():
    prob = advection_problem(n=16, k=1, cfl=0.37, T=0.1)
    traj = run(prob, NoViscosity())
    assert traj.final_state.t == pytest.approx(0.1, abs=1e-13)


def test_blow_up_carries_partial_trajectory():
    # a fixed step far beyond the stability limit explodes
    mesh = build_uniform_1d((0, 1), 16, periodic=True)
    prob = Problem(
        mesh=mesh, k=2, flux=make_flux("advection1d", beta=1.0),
        ic=lambda x: (0.5 + np.sin(2 * np.pi * x[:, 0]))[None, :],
        bc=BoundarySpec.periodic(),
        controls=TimeControls(mode="fixed", dt=0.3, n_steps=4000))
    with pytest.raises(BlowUpError) as err:
        run(prob, NoViscosity())
    assert err.value.trajectory is not None
    assert err.value.step_index >= 0


def test_viscosity_update_interval():
    calls = []

    class Counting(ConstVisc):
        def compute(self, state, flux, mesh, basis, dt=None):
            calls.append(state.t)
            return super().compute(state, flux, mesh, basis, dt)

    prob = advection_problem(n=8, k=1, n_steps=9)
    prob.controls.viscosity_every = 3
    run(prob, Counting(0.0))
    assert len(calls) == 3


def test_time_controls_validation():
    with pytest.raises(ValueError):
        TimeControls(mode="warp", n_steps=1)
    with pytest.raises(ValueError):
        TimeControls(mode="cfl", cfl=-0.1, n_steps=1)
    with pytest.raises(ValueError):
        TimeControls(mode="fixed", n_steps=1)
    with pytest.raises(ValueError):
        TimeControls(mode="cfl", cfl=0.2)
    with pytest.raises(ValueError):
        TimeControls(mode="cfl", cfl=0.2, n_steps=1, viscosity_every=0)
