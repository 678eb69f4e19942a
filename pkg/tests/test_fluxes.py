import math

import numpy as np
import pytest

from dgvisc.fluxes import (NonphysicalStateError, conserved_from_primitive,
                           make_flux)


def test_euler1d_sod_left_state():
    flux = make_flux("euler1d")
    u = [np.array([1.0]), np.array([0.0]), np.array([2.5])]
    f = flux.evaluate(u)
    assert f[0][0][0] == pytest.approx(0.0, abs=1e-15)
    assert f[1][0][0] == pytest.approx(1.0, rel=1e-14)   # pressure 1
    assert f[2][0][0] == pytest.approx(0.0, abs=1e-15)


def test_burgers_value():
    flux = make_flux("burgers1d")
    f = flux.evaluate([np.array([2.0])])
    assert f[0][0][0] == pytest.approx(2.0)


def test_kpp_at_zero():
    flux = make_flux("kpp2d")
    f = flux.evaluate([np.array([0.0])])
    assert f[0][0][0] == pytest.approx(0.0)
    assert f[0][1][0] == pytest.approx(1.0)


def test_nonphysical_state_flagged():
    flux = make_flux("euler1d")
    with pytest.raises(NonphysicalStateError):
        flux.evaluate([np.array([-1.0]), np.array([0.0]), np.array([1.0])])
    with pytest.raises(NonphysicalStateError):
        # zero pressure
        flux.evaluate([np.array([1.0]), np.array([1.0]), np.array([0.5])])


def test_wave_speed_burgers():
    flux = make_flux("burgers1d")
    lam = flux.max_wave_speed([np.array([-3.0])], [np.array([1.0])],
                              np.array([[1.0]]))
    assert lam[0] == pytest.approx(3.0)


def test_wave_speed_kpp_is_one():
    flux = make_flux("kpp2d")
    lam = flux.max_wave_speed([np.array([0.3])], [np.array([-9.0])],
                              np.array([[0.6, 0.8]]))
    assert lam[0] == pytest.approx(1.0)


def test_wave_speed_euler_sound():
    flux = make_flux("euler1d")
    u = [np.array([1.0]), np.array([0.0]), np.array([2.5])]
    lam = flux.max_wave_speed(u, u, np.array([[1.0]]))
    assert lam[0] == pytest.approx(math.sqrt(1.4), rel=1e-12)
    assert lam[0] == pytest.approx(1.1832, abs=1e-4)


def test_entropy_pair_burgers():
    flux = make_flux("burgers1d")
    e, f = flux.entropy_pair([np.array([2.0])])
    assert e[0] == pytest.approx(2.0)
    assert f[0][0] == pytest.approx(8.0 / 3.0)


def test_entropy_pair_advection():
    flux = make_flux("advection1d", beta=1.0)
    e, f = flux.entropy_pair([np.array([2.0])])
    assert e[0] == pytest.approx(2.0)
    assert f[0][0] == pytest.approx(2.0)


def test_entropy_pair_zero_normalization():
    for ident in ("advection1d", "burgers1d", "kpp2d"):
        flux = make_flux(ident)
        e, f = flux.entropy_pair([np.array([0.0])])
        assert e[0] == pytest.approx(0.0)
        for comp in f:
            assert comp[0] == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("ident", ["advection1d", "burgers1d", "kpp2d",
                                   "advection2d"])
def test_entropy_flux_consistency(ident):
    """F'(u) = E'(u) f'(u) checked with finite differences."""
    flux = make_flux(ident, beta=(0.7, -0.3) if ident == "advection2d"
                     else 0.7)
    h = 1e-6
    for w in np.linspace(-2.0, 2.0, 100):
        _, fp = flux.entropy_pair([np.array([w + h])])
        _, fm = flux.entropy_pair([np.array([w - h])])
        dF = np.array([(p[0] - m[0]) / (2 * h) for p, m in zip(fp, fm)])
        f_p = flux.evaluate([np.array([w + h])])[0]
        f_m = flux.evaluate([np.array([w - h])])[0]
        df = np.array([(p[0] - m[0]) / (2 * h) for p, m in zip(f_p, f_m)])
        np.testing.assert_allclose(dF, w * df, atol=5e-9)


def _random_state(flux, rng):
    if flux.n_vars == 1:
        return [np.array([rng.uniform(-3, 3)])]
    if flux.dim == 1:
        prim = [rng.uniform(0.1, 3), rng.uniform(-2, 2), rng.uniform(0.1, 3)]
    else:
        prim = [rng.uniform(0.1, 3), rng.uniform(-2, 2), rng.uniform(-2, 2),
                rng.uniform(0.1, 3)]
    return [np.array([c]) for c in conserved_from_primitive(prim, flux.gamma)]


@pytest.mark.parametrize("ident", ["advection1d", "burgers1d", "euler1d",
                                   "advection2d", "kpp2d", "euler2d"])
def test_wave_speed_bounds_jacobian_spectral_radius(ident):
    flux = make_flux(ident)
    rng = np.random.default_rng(42)
    if flux.dim == 1:
        normals = [np.array([1.0]), np.array([-1.0])]
    else:
        angles = rng.uniform(0, 2 * np.pi, 4)
        normals = [np.array([np.cos(a), np.sin(a)]) for a in angles]
    n_states = 1000 // len(normals)
    h = 1e-7
    for _ in range(n_states):
        u = _random_state(flux, rng)
        for n in normals:
            jac = np.zeros((flux.n_vars, flux.n_vars))
            for j in range(flux.n_vars):
                up = [c.copy() for c in u]
                um = [c.copy() for c in u]
                up[j] += h
                um[j] -= h
                fp = flux.evaluate(up)
                fm = flux.evaluate(um)
                for i in range(flux.n_vars):
                    fn_p = sum(fp[i][d][0] * n[d] for d in range(flux.dim))
                    fn_m = sum(fm[i][d][0] * n[d] for d in range(flux.dim))
                    jac[i, j] = (fn_p - fn_m) / (2 * h)
            radius = np.abs(np.linalg.eigvals(jac)).max()
            lam = flux.max_wave_speed(u, u, n.reshape(1, -1))
            assert lam[0] >= radius - 1e-5


def test_euler_positivity_on_shock_tube_states():
    flux = make_flux("euler1d")
    sod = [conserved_from_primitive([1.0, 0.0, 1.0]),
           conserved_from_primitive([0.125, 0.0, 0.1]),
           conserved_from_primitive([3.857143, 2.629369, 10.333333])]
    for state in sod:
        u = [np.atleast_1d(c) for c in state]
        flux.evaluate(u)  # must not raise


def test_make_flux_validation():
    with pytest.raises(ValueError):
        make_flux("mhd")
    with pytest.raises(ValueError):
        make_flux("euler1d", gamma=0.9)
    with pytest.raises(ValueError):
        make_flux("advection2d", beta=(1.0,))
