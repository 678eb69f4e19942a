import numpy as np
import pytest

from dgvisc import autodiff as ad
from dgvisc.assembly import (BoundarySpec, SolutionState,
                             get_discretization, project_initial)
from dgvisc.basis import build_basis
from dgvisc.fluxes import make_flux
from dgvisc.losses import (LossConfig, compute_metrics, evaluate_metrics,
                           loss, training_dt)
from dgvisc.mesh import build_uniform_1d
from dgvisc.network import NetworkParams, init_network
from dgvisc.problems import advection_translate_reference
from dgvisc.reference import AnalyticReference, build_reference
from dgvisc.timeloop import Problem, TimeControls
from dgvisc.viscosity import smooth


def make_setup(n=8, k=1):
    mesh = build_uniform_1d((0, 1), n, periodic=True)
    basis = build_basis(1, k)
    disc = get_discretization(mesh, basis)
    flux = make_flux("advection1d", beta=1.0)
    return mesh, basis, disc, flux


def test_zero_error_when_state_equals_reference():
    mesh, basis, disc, flux = make_setup()
    rng = np.random.default_rng(0)
    u = [rng.normal(size=(8, 2))]
    field = smooth(np.zeros(8), mesh)
    terms = compute_metrics(u, [u[0].copy()], field, u, 1, disc, flux)
    for name in ("err", "grad_err", "jump_err", "ou"):
        assert float(np.asarray(terms[name])) == 0.0


def test_single_dof_overshoot_value():
    mesh, basis, disc, flux = make_setup()
    ref = [np.zeros((8, 2))]
    u = [np.zeros((8, 2))]
    u[0][3, 1] = 0.1          # one entry exceeds the reference maximum
    field = smooth(np.zeros(8), mesh)
    terms = compute_metrics(u, ref, field, u, 1, disc, flux)
    assert float(np.asarray(terms["ou"])) == pytest.approx(0.1, abs=1e-15)


def test_vp_zero_for_zero_viscosity():
    mesh, basis, disc, flux = make_setup()
    rng = np.random.default_rng(1)
    u = [rng.normal(size=(8, 2))]
    field = smooth(np.zeros(8), mesh)
    terms = compute_metrics(u, u, field, u, 1, disc, flux)
    assert float(np.asarray(terms["vp"])) == 0.0


def test_mask_free_path_consistency():
    """q=1 with U >= U_ref everywhere: the error equals the plain sum of
    differences."""
    mesh, basis, disc, flux = make_setup()
    rng = np.random.default_rng(2)
    ref = [rng.normal(size=(8, 2))]
    u = [ref[0] + rng.random(size=(8, 2))]
    field = smooth(np.zeros(8), mesh)
    terms = compute_metrics(u, ref, field, u, 1, disc, flux)
    assert float(np.asarray(terms["err"])) == pytest.approx(
        float(np.sum(u[0] - ref[0])), rel=1e-14)


def test_loss_decomposition_matches_weighted_sum():
    mesh, basis, disc, flux = make_setup(n=10, k=1)
    prob = Problem(mesh=mesh, k=1, flux=flux,
                   ic=lambda x: np.sin(2 * np.pi * x[:, 0])[None, :],
                   bc=BoundarySpec.periodic(),
                   controls=TimeControls(mode="cfl", cfl=0.2, n_steps=4))
    ref = AnalyticReference(
        advection_translate_reference(lambda x: np.sin(2 * np.pi * x),
                                      (0.0, 1.0), 1.0), prob)
    net = init_network(1, seed=0, width=10, depth=2)
    cfg = LossConfig(w_grad=0.5, regularizers={"ou": 7.0, "vp": 0.3})
    dt = training_dt(prob, c_max=0.5)
    total, bd = loss(net.theta, prob, net, cfg, ref, 4, dt, c_max=0.5)
    recon = sum(e["err"] + 0.5 * e["grad_err"] + 7.0 * e["ou"]
                + 0.3 * e["vp"] + (e["mv"] if False else 0.0)
                for e in bd.per_step)
    assert float(np.asarray(total)) == pytest.approx(recon, rel=1e-12)
    assert bd.total == pytest.approx(float(np.asarray(total)), rel=1e-12)


def test_one_step_loss_matches_hand_unroll():
    """One fixed step on a tiny problem, reproduced with an independent
    hand-written unroll of the same scheme."""
    mesh, basis, disc, flux = make_setup(n=2, k=1)
    ic = lambda x: (x[:, 0] * 0 + np.where(x[:, 0] < 0.5, 1.0, 0.0))[None]
    prob = Problem(mesh=mesh, k=1, flux=flux, ic=ic,
                   bc=BoundarySpec.periodic(),
                   controls=TimeControls(mode="cfl", cfl=0.2, n_steps=1))
    ref_fn = advection_translate_reference(
        lambda x: np.where(x < 0.5, 1.0, 0.0), (0.0, 1.0), 1.0)
    ref = AnalyticReference(ref_fn, prob)
    net = init_network(1, seed=0, width=6, depth=2)
    net.theta[:] = 0.0   # mu = min(softplus(0) Lambda h~, cap)
    dt = 0.01
    cfg = LossConfig(w_grad=1.0, regularizers={})
    total, bd = loss(net.theta, prob, net, cfg, ref, 1, dt, c_max=0.5)

    # --- independent hand unroll (k=1 on two periodic cells) ---
    h = 0.5
    u0 = np.asarray(project_initial(disc, ic, 1)[0], dtype=float)
    lam = 1.0
    htilde = min(1.0, mesh.h)
    mu_cell = min(np.log(2.0) * lam * htilde, 0.5 * mesh.h * 1.0)
    mu = np.full(2, mu_cell)
    # vertex averages equal mu (constant); interpolant is constant
    minv = np.linalg.inv(np.array([[2 / 3, 1 / 3], [1 / 3, 2 / 3]]) * h / 2)

    def hand_rhs(u):
        r = np.zeros((2, 2))
        # volume: f = u: int u dphi/dr over reference with 3-pt GL
        gl_x, gl_w = np.polynomial.legendre.leggauss(3)
        for c in range(2):
            for xq, wq in zip(gl_x, gl_w):
                s = 0.5 * (xq + 1)
                uval = u[c, 0] * (1 - s) + u[c, 1] * s
                r[c] += wq * uval * np.array([-0.5, 0.5])
            # viscous volume: -mu u_x int dv/dx over the cell
            ux = (u[c, 1] - u[c, 0]) / h
            r[c] -= mu_cell * ux * np.array([-1.0, 1.0])
        for f, (cm, cp) in enumerate(((0, 1), (1, 0))):
            um, up = u[cm, 1], u[cp, 0]
            phi = 0.5 * (um + up) + 0.5 * lam * (um - up)
            pen = 2.0 * 1.0 / h * mu_cell * (um - up)  # tau k^2/|F| mu [u]
            gm = (u[cm, 1] - u[cm, 0]) / h
            gp = (u[cp, 1] - u[cp, 0]) / h
            avg_dn = 0.5 * (gm + gp) * mu_cell
            r[cm, 1] -= phi
            r[cp, 0] += phi
            r[cm, 1] -= pen
            r[cp, 0] += pen
            r[cm, 1] += avg_dn
            r[cp, 0] -= avg_dn
            half_jump = 0.5 * (um - up) * mu_cell
            dphi = np.array([-1 / h, 1 / h])
            r[cm] += half_jump * dphi
            r[cp] += half_jump * dphi
        return np.array([minv @ r[0], minv @ r[1]])

    u = u0.copy()
    k1 = hand_rhs(u)
    u1 = u + dt * k1
    u2 = 0.75 * u + 0.25 * (u1 + dt * hand_rhs(u1))
    un = u / 3.0 + (2.0 / 3.0) * (u2 + dt * hand_rhs(u2))

    x_nodes = disc.x_nodes.reshape(-1, 1)
    ref1 = ref_fn(x_nodes, dt)[0].reshape(2, 2)
    err = np.sum(np.abs(un - ref1))
    dmat = np.array([[-1 / h, 1 / h], [-1 / h, 1 / h]])
    grad_err = np.sum(np.abs(un @ dmat.T - ref1 @ dmat.T))
    hand_total = err + grad_err
    assert float(np.asarray(total)) == pytest.approx(hand_total, abs=1e-10)


def test_loss_taylor_expansion_check():
    mesh, basis, disc, flux = make_setup(n=8, k=1)
    prob = Problem(mesh=mesh, k=1, flux=flux,
                   ic=lambda x: np.sin(2 * np.pi * x[:, 0])[None, :],
                   bc=BoundarySpec.periodic(),
                   controls=TimeControls(mode="cfl", cfl=0.2, n_steps=3))
    ref = AnalyticReference(
        advection_translate_reference(lambda x: np.sin(2 * np.pi * x),
                                      (0.0, 1.0), 1.0), prob)
    net = init_network(1, seed=4, width=10, depth=2)
    cfg = LossConfig()
    dt = training_dt(prob, c_max=0.5)
    tape = ad.Tape()
    th = tape.input(net.theta)
    total, _ = loss(th, prob, net, cfg, ref, 3, dt, c_max=0.5, tape=tape)
    g = tape.backward(total).wrt(th)
    l0 = float(np.asarray(ad.value_of(total)))

    rng = np.random.default_rng(0)
    direction = rng.normal(size=net.n_params)
    direction /= np.linalg.norm(direction)
    remainders = []
    for eps in (1e-3, 5e-4):
        theta_p = net.theta + eps * direction
        lp, _ = loss(theta_p, prob,
                     NetworkParams(1, net.layer_sizes, theta_p, 0),
                     cfg, ref, 3, dt, c_max=0.5)
        remainders.append(abs(float(lp) - l0 - eps * float(g @ direction)))
    # remainder shrinks at second order in the perturbation
    assert remainders[1] <= 0.3 * remainders[0] + 1e-14


def test_blowup_returns_sentinel():
    mesh, basis, disc, flux = make_setup(n=8, k=1)
    prob = Problem(mesh=mesh, k=1, flux=flux,
                   ic=lambda x: np.sin(2 * np.pi * x[:, 0])[None, :],
                   bc=BoundarySpec.periodic(),
                   controls=TimeControls(mode="cfl", cfl=0.2, n_steps=50))
    ref = AnalyticReference(
        advection_translate_reference(lambda x: np.sin(2 * np.pi * x),
                                      (0.0, 1.0), 1.0), prob)
    net = init_network(1, seed=0, width=8, depth=2)
    cfg = LossConfig(l_max=1e30)
    total, bd = loss(net.theta, prob, net, cfg, ref, 50, dt=0.5)
    assert bd.blown
    assert total == 1e30
    assert bd.total == 1e30


def test_checkpointed_loss_matches_plain():
    mesh, basis, disc, flux = make_setup(n=6, k=1)
    prob = Problem(mesh=mesh, k=1, flux=flux,
                   ic=lambda x: np.sin(2 * np.pi * x[:, 0])[None, :],
                   bc=BoundarySpec.periodic(),
                   controls=TimeControls(mode="cfl", cfl=0.2, n_steps=5))
    ref = AnalyticReference(
        advection_translate_reference(lambda x: np.sin(2 * np.pi * x),
                                      (0.0, 1.0), 1.0), prob)
    net = init_network(1, seed=0, width=8, depth=2)
    cfg = LossConfig()
    dt = training_dt(prob, c_max=0.5)

    def grad(checkpoint):
        tape = ad.Tape()
        th = tape.input(net.theta)
        total, _ = loss(th, prob, net, cfg, ref, 5, dt, c_max=0.5,
                        tape=tape, checkpoint=checkpoint)
        return tape.backward(total).wrt(th)

    g_plain = grad(False)
    g_ckpt = grad(True)
    assert np.array_equal(g_plain, g_ckpt)


def test_evaluate_metrics_streams_breakdown():
    from dgvisc.problems import test_case as registry_case
    from dgvisc.viscosity import EvConfig, make_viscosity_model
    prob, defaults = registry_case("tc3", k=1, n_cells=20)
    ref = build_reference(prob)
    bd = evaluate_metrics(prob, make_viscosity_model("ev",
                                                     ev=defaults["ev"]),
                          LossConfig(), ref)
    assert not bd.blown
    assert len(bd.per_step) > 5
    assert bd.cumulative["err"] > 0
    assert bd.cumulative["mv"] < 1e-10


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(q=3)
    with pytest.raises(ValueError):
        LossConfig(w_grad=-1.0)
    with pytest.raises(ValueError):
        LossConfig(regularizers={"bogus": 1.0})
