"""Problem registry: training initial conditions and the test cases.

Initial conditions are registered by id with optional parameters and
return conserved-variable samplers.  Test cases tc1..tc9 carry their
published discretization defaults (mesh size, CFL and tuned
entropy-viscosity constants per polynomial degree) and a reference
policy (analytic where a closed form exists, otherwise an overkill
companion run).
"""

from __future__ import annotations

import numpy as np

from .assembly import BoundarySpec
from .fluxes import conserved_from_primitive, make_flux
from .mesh import build_structured_tri_2d, build_uniform_1d
from .reference import sod_solution
from .timeloop import Problem, TimeControls
from .viscosity import EvConfig

__all__ = ["make_ic", "IC_IDS", "test_case", "TEST_CASE_IDS",
           "advection_translate_reference", "training_problem_1d"]


def _indicator(x, a, b):
    return ((x >= a) & (x <= b)).astype(float)


# ---------------------------------------------------------------------
# 1D initial conditions used for training (scalar problems)
# ---------------------------------------------------------------------

def _ic_sine(omega=1.0):
    return lambda x: 0.5 * omega * np.sin(omega * np.pi * x)


def _ic_step():
    return lambda x: _indicator(x, 0.25, 0.75)


def _ic_triangle():
    return lambda x: 10.0 * (0.5 - np.abs(x - 0.5))


def _ic_gaussian():
    return lambda x: np.exp(-100.0 * (x - 0.5) ** 2)


def _ic_three_steps(w1=-4.0, w2=6.0, w3=10.0):
    return lambda x: (w1 * _indicator(x, 0.0, 0.2)
                      + w2 * _indicator(x, 0.2, 0.4)
                      + w3 * _indicator(x, 0.6, 1.0))


def _ic_composite_sines(omega=4.0):
    return lambda x: (np.sin(omega * np.pi * x)
                      * _indicator(x, 0.25, 0.5)
                      + np.sin(2 * omega * np.pi * x)
                      * _indicator(x, 0.5, 0.75))


def _ic_windowed_sine():
    return lambda x: -np.sin(6 * np.pi * x) * _indicator(x, 1 / 6, 5 / 6)


def _ic_three_ramps(w1=2.0, w2=6.0, w3=10.0):
    return lambda x: (w1 * (x - 1 / 6) * _indicator(x, 1 / 6, 1 / 3)
                      + w2 * (x - 0.5) * _indicator(x, 1 / 3, 2 / 3)
                      + w3 * (x - 5 / 6) * _indicator(x, 2 / 3, 5 / 6))


def _ic_vee():
    return lambda x: (16.0 * np.abs(x - 0.5) - 2.0) \
        * _indicator(x, 0.25, 0.75)


def _ic_offset_sine():
    return lambda x: 0.5 + np.sin(2 * np.pi * x)


def _ic_piecewise_mixed():
    def fn(x):
        out = np.zeros_like(x)
        out = np.where((x > 0) & (x <= 1 / 6), 6 * x, out)
        out = np.where((x > 1 / 6) & (x <= 1 / 3), 6 * (x - 1 / 3), out)
        out = np.where((x > 1 / 3) & (x <= 0.5), 2.0, out)
        out = np.where((x > 0.5) & (x <= 0.75), -0.5, out)
        return out
    return fn


# -- 2D scalar initial conditions --------------------------------------

def _ic2_sine(w1=1.0, w2=1.0):
    return lambda x, y: 0.5 * w1 * w2 * np.sin(w1 * np.pi * x) \
        * np.sin(w2 * np.pi * y)


def _ic2_square():
    return lambda x, y: _indicator(x, 0.25, 0.75) * _indicator(y, 0.25,
                                                               0.75)


def _ic2_gaussian():
    return lambda x, y: np.exp(-100.0 * ((x - 0.5) ** 2 + (y - 0.5) ** 2))


def _ic2_blocks(w1=-4.0, w2=6.0, w3=10.0):
    return lambda x, y: (w1 * _indicator(x, 0, 0.2) * _indicator(y, 0.6, 1)
                         + w2 * _indicator(x, 0.2, 0.4)
                         * _indicator(y, 0.2, 0.4)
                         + w3 * _indicator(x, 0.6, 1)
                         * _indicator(y, 0, 0.2))


def _ic2_composite_sines(omega=2.5):
    return lambda x, y: (np.sin(omega * np.pi * x)
                         * _indicator(x, 0.25, 0.5)
                         * _indicator(y, 0.25, 0.5)
                         + np.sin(2 * omega * np.pi * x)
                         * _indicator(x, 0.5, 0.75)
                         * _indicator(y, 0.5, 0.75))


def _ic2_plane(w1=1.0, w2=1.0):
    return lambda x, y: (w1 * x + w2 * y - 0.25) \
        * _indicator(x, 0.25, 0.75) * _indicator(y, 0.25, 0.75)


def _ic2_offset_sine():
    return lambda x, y: 0.5 + np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


def _ic2_two_squares():
    def fn(x, y):
        inner = (_indicator(x, 0.2, 0.8) * _indicator(y, 0.2, 0.8))
        outer = (_indicator(x, 1.0, 1.5) * _indicator(y, 1.0, 1.5))
        return 2.0 * inner + 1.0 * outer
    return fn


def _ic2_kpp_disc():
    return lambda x, y: np.where(np.hypot(x, y) < 1.0, 3.5 * np.pi,
                                 0.25 * np.pi)


_IC_1D = {
    "sine": _ic_sine,
    "step": _ic_step,
    "triangle": _ic_triangle,
    "gaussian": _ic_gaussian,
    "three_steps": _ic_three_steps,
    "composite_sines": _ic_composite_sines,
    "windowed_sine": _ic_windowed_sine,
    "three_ramps": _ic_three_ramps,
    "vee": _ic_vee,
    "offset_sine": _ic_offset_sine,
    "piecewise_mixed": _ic_piecewise_mixed,
}

_IC_2D = {
    "sine2d": _ic2_sine,
    "square2d": _ic2_square,
    "gaussian2d": _ic2_gaussian,
    "blocks2d": _ic2_blocks,
    "composite_sines2d": _ic2_composite_sines,
    "plane2d": _ic2_plane,
    "offset_sine2d": _ic2_offset_sine,
    "two_squares2d": _ic2_two_squares,
    "kpp_disc2d": _ic2_kpp_disc,
}

IC_IDS = tuple(_IC_1D) + tuple(_IC_2D)


def make_ic(identifier: str, **params):
    """Scalar initial-condition sampler ``x(points, dim) -> (1, n)``."""
    if identifier in _IC_1D:
        fn = _IC_1D[identifier](**params)
        return lambda x: fn(np.asarray(x)[:, 0])[None, :]
    if identifier in _IC_2D:
        fn = _IC_2D[identifier](**params)
        return lambda x: fn(np.asarray(x)[:, 0],
                            np.asarray(x)[:, 1])[None, :]
    raise KeyError(f"unknown initial condition {identifier!r}; known: "
                   f"{', '.join(IC_IDS)}")


def scalar_ic_fn(identifier: str, **params):
    """The raw scalar formula (for oracles and translation references)."""
    if identifier in _IC_1D:
        return _IC_1D[identifier](**params)
    if identifier in _IC_2D:
        return _IC_2D[identifier](**params)
    raise KeyError(identifier)


# ---------------------------------------------------------------------
# analytic references
# ---------------------------------------------------------------------

def advection_translate_reference(ic_scalar, domain, beta, dim=1):
    """Exact advection solution: the initial profile translated by
    beta t and wrapped periodically into the domain."""
    if dim == 1:
        a, b = domain
        span = b - a

        def fn(x, t):
            xs = np.asarray(x)[:, 0]
            shifted = a + np.mod(xs - beta * t - a, span)
            return ic_scalar(shifted)[None, :]
        return fn
    (ax, bx), (ay, by) = domain

    def fn2(x, t):
        xs = np.asarray(x)[:, 0]
        ys = np.asarray(x)[:, 1]
        sx = ax + np.mod(xs - beta[0] * t - ax, bx - ax)
        sy = ay + np.mod(ys - beta[1] * t - ay, by - ay)
        return ic_scalar(sx, sy)[None, :]
    return fn2


# ---------------------------------------------------------------------
# test cases
# ---------------------------------------------------------------------

SOD_LEFT = (1.0, 0.0, 1.0)
SOD_RIGHT = (0.125, 0.0, 0.1)
SHU_OSHER_LEFT = (3.857143, 2.629369, 10.333333)
RIEMANN12 = {  # quadrant primitive states (rho, v1, v2, p)
    "ne": (0.5313, 0.0, 0.0, 0.4),
    "nw": (1.0, 0.7276, 0.0, 1.0),
    "sw": (0.8, 0.0, 0.0, 1.0),
    "se": (1.0, 0.0, 0.7276, 1.0),
}

TEST_CASE_IDS = tuple(f"tc{i}" for i in range(1, 10))


def _sod_ic(x):
    xs = np.asarray(x)[:, 0]
    rho = np.where(xs <= 0.5, SOD_LEFT[0], SOD_RIGHT[0])
    v = np.where(xs <= 0.5, SOD_LEFT[1], SOD_RIGHT[1])
    p = np.where(xs <= 0.5, SOD_LEFT[2], SOD_RIGHT[2])
    return np.stack(conserved_from_primitive([rho, v, p]))


def _shu_osher_ic(x):
    xs = np.asarray(x)[:, 0]
    rho = np.where(xs <= -4.0, SHU_OSHER_LEFT[0], 1.0 + 0.5 * np.sin(5 * xs))
    v = np.where(xs <= -4.0, SHU_OSHER_LEFT[1], 0.0)
    p = np.where(xs <= -4.0, SHU_OSHER_LEFT[2], 1.0)
    return np.stack(conserved_from_primitive([rho, v, p]))


def _riemann12_ic(x):
    xs = np.asarray(x)[:, 0]
    ys = np.asarray(x)[:, 1]
    rho = np.empty_like(xs)
    v1 = np.empty_like(xs)
    v2 = np.empty_like(xs)
    p = np.empty_like(xs)
    quads = [((xs > 0) & (ys > 0), RIEMANN12["ne"]),
             ((xs <= 0) & (ys > 0), RIEMANN12["nw"]),
             ((xs <= 0) & (ys <= 0), RIEMANN12["sw"]),
             ((xs > 0) & (ys <= 0), RIEMANN12["se"])]
    for mask, (r, a, b, pp) in quads:
        rho[mask] = r
        v1[mask] = a
        v2[mask] = b
        p[mask] = pp
    return np.stack(conserved_from_primitive([rho, v1, v2, p]))


def _grid_for(case, k, n_cells=None):
    table = case["per_k"]
    if k in table:
        return table[k]
    # nearest configured degree as a fallback for unlisted k
    nearest = min(table, key=lambda kk: abs(kk - k))
    return table[nearest]


def test_case(ident: str, k: int | None = None, n_cells=None,
              cfl: float | None = None, integrator: str | None = None,
              final_time: float | None = None):
    """Instantiate a registry test case; returns (Problem, defaults).

    ``defaults`` carries the case's tuned entropy-viscosity constants
    and whether an analytic reference exists.
    """
    if ident not in _CASES:
        raise KeyError(f"unknown test case {ident!r}; known: "
                       f"{', '.join(TEST_CASE_IDS)}")
    case = _CASES[ident]
    k = case["default_k"] if k is None else int(k)
    grid_n, grid_cfl = _grid_for(case, k)
    if n_cells is not None:
        grid_n = n_cells
    if cfl is not None:
        grid_cfl = cfl
    build = case["build"]
    problem = build(k, grid_n, grid_cfl,
                    integrator or case.get("integrator", "auto"),
                    final_time)
    defaults = {
        "ev": case["ev"],
        "analytic": case["analytic"],
        "description": case["description"],
    }
    return problem, defaults


def _build_tc1(k, n, cfl, integrator, final_time):
    mesh = build_uniform_1d((0.0, 1.0), n, periodic=True)
    flux = make_flux("advection1d", beta=1.0)
    ic_scalar = _IC_1D["offset_sine"]()
    ref = advection_translate_reference(ic_scalar, (0.0, 1.0), 1.0)
    return Problem(
        mesh=mesh, k=k, flux=flux, ic=make_ic("offset_sine"),
        bc=BoundarySpec.periodic(),
        controls=TimeControls(mode="cfl", cfl=cfl,
                              final_time=0.4 if final_time is None
                              else final_time,
                              integrator=integrator),
        reference=("analytic", ref), name=f"tc1-k{k}",
        mesh_source=("uniform1d", (0.0, 1.0), n, True))


def _build_tc2(k, n, cfl, integrator, final_time):
    mesh = build_structured_tri_2d(((0.0, 1.0), (0.0, 1.0)), n, n,
                                   periodic=True)
    flux = make_flux("advection2d", beta=(1.0, 1.0))
    ic_scalar = _IC_2D["offset_sine2d"]()
    ref = advection_translate_reference(ic_scalar,
                                        ((0.0, 1.0), (0.0, 1.0)),
                                        (1.0, 1.0), dim=2)
    return Problem(
        mesh=mesh, k=k, flux=flux, ic=make_ic("offset_sine2d"),
        bc=BoundarySpec.periodic(),
        controls=TimeControls(mode="cfl", cfl=cfl,
                              final_time=0.4 if final_time is None
                              else final_time,
                              integrator=integrator),
        reference=("analytic", ref), name=f"tc2-k{k}",
        mesh_source=("structured2d", ((0.0, 1.0), (0.0, 1.0)), n, n, True))


def _build_tc3(k, n, cfl, integrator, final_time):
    mesh = build_uniform_1d((0.0, 1.0), n, periodic=True)
    flux = make_flux("advection1d", beta=1.0)
    ic_scalar = _IC_1D["piecewise_mixed"]()
    ref = advection_translate_reference(ic_scalar, (0.0, 1.0), 1.0)
    return Problem(
        mesh=mesh, k=k, flux=flux, ic=make_ic("piecewise_mixed"),
        bc=BoundarySpec.periodic(),
        controls=TimeControls(mode="cfl", cfl=cfl,
                              final_time=0.4 if final_time is None
                              else final_time,
                              integrator=integrator),
        reference=("analytic", ref), name=f"tc3-k{k}",
        mesh_source=("uniform1d", (0.0, 1.0), n, True))


def _build_tc4(k, n, cfl, integrator, final_time):
    mesh = build_uniform_1d((0.0, 1.0), n, periodic=True)
    flux = make_flux("burgers1d")
    from .viscosity import EntropyViscosityModel
    return Problem(
        mesh=mesh, k=k, flux=flux, ic=make_ic("piecewise_mixed"),
        bc=BoundarySpec.periodic(),
        controls=TimeControls(mode="cfl", cfl=cfl,
                              final_time=0.4 if final_time is None
                              else final_time,
                              integrator=integrator),
        reference=("overkill",
                   EntropyViscosityModel(EvConfig(c_k=3.0, c_max=1.0))),
        name=f"tc4-k{k}",
        mesh_source=("uniform1d", (0.0, 1.0), n, True))


def _build_tc5(k, n, cfl, integrator, final_time):
    mesh = build_uniform_1d((0.0, 1.0), n)
    flux = make_flux("euler1d")
    bc = BoundarySpec({
        "left": ("dirichlet", conserved_from_primitive(SOD_LEFT)),
        "right": ("dirichlet", conserved_from_primitive(SOD_RIGHT)),
    })
    exact = sod_solution(SOD_LEFT, SOD_RIGHT, 0.5)
    return Problem(
        mesh=mesh, k=k, flux=flux, ic=_sod_ic, bc=bc,
        controls=TimeControls(mode="cfl", cfl=cfl,
                              final_time=0.2 if final_time is None
                              else final_time,
                              integrator=integrator,
                              startup_steps=20, startup_factor=0.05),
        reference=("analytic", lambda x, t: exact(np.asarray(x)[:, 0], t)),
        name=f"tc5-k{k}",
        mesh_source=("uniform1d", (0.0, 1.0), n, False))


def _build_tc6(k, n, cfl, integrator, final_time):
    mesh = build_uniform_1d((-5.0, 5.0), n)
    flux = make_flux("euler1d")
    bc = BoundarySpec({
        "left": ("dirichlet", conserved_from_primitive(SHU_OSHER_LEFT)),
        "right": ("neumann", "extrapolate"),
    })
    from .viscosity import EntropyViscosityModel
    return Problem(
        mesh=mesh, k=k, flux=flux, ic=_shu_osher_ic, bc=bc,
        controls=TimeControls(mode="cfl", cfl=cfl,
                              final_time=1.8 if final_time is None
                              else final_time,
                              integrator=integrator,
                              startup_steps=20, startup_factor=0.05),
        reference=("overkill",
                   EntropyViscosityModel(EvConfig(c_k=1.0, c_max=0.5))),
        name=f"tc6-k{k}",
        mesh_source=("uniform1d", (-5.0, 5.0), n, False))


def _build_tc7(k, n, cfl, integrator, final_time):
    mesh = build_structured_tri_2d(((0.0, 2.0), (0.0, 2.0)), n, n,
                                   periodic=True)
    flux = make_flux("advection2d", beta=(1.0, 1.0))
    ic_scalar = _IC_2D["two_squares2d"]()
    ref = advection_translate_reference(ic_scalar,
                                        ((0.0, 2.0), (0.0, 2.0)),
                                        (1.0, 1.0), dim=2)
    return Problem(
        mesh=mesh, k=k, flux=flux, ic=make_ic("two_squares2d"),
        bc=BoundarySpec.periodic(),
        controls=TimeControls(mode="cfl", cfl=cfl,
                              final_time=0.25 if final_time is None
                              else final_time,
                              integrator=integrator),
        reference=("analytic", ref), name=f"tc7-k{k}",
        mesh_source=("structured2d", ((0.0, 2.0), (0.0, 2.0)), n, n, True))


def _build_tc8(k, n, cfl, integrator, final_time):
    mesh = build_structured_tri_2d(((-2.0, 2.0), (-2.0, 2.0)), n, n,
                                   periodic=True)
    flux = make_flux("kpp2d")
    from .viscosity import EntropyViscosityModel
    return Problem(
        mesh=mesh, k=k, flux=flux, ic=make_ic("kpp_disc2d"),
        bc=BoundarySpec.periodic(),
        controls=TimeControls(mode="cfl", cfl=cfl,
                              final_time=1.0 if final_time is None
                              else final_time,
                              integrator=integrator),
        reference=("overkill",
                   EntropyViscosityModel(EvConfig(c_k=1.0, c_max=0.5))),
        name=f"tc8-k{k}",
        mesh_source=("structured2d", ((-2.0, 2.0), (-2.0, 2.0)), n, n,
                     True))


def _build_tc9(k, n, cfl, integrator, final_time):
    mesh = build_structured_tri_2d(((-1.5, 1.5), (-1.5, 1.5)), n, n,
                                   periodic=True)
    flux = make_flux("euler2d")
    from .viscosity import EntropyViscosityModel
    return Problem(
        mesh=mesh, k=k, flux=flux, ic=_riemann12_ic,
        bc=BoundarySpec.periodic(),
        controls=TimeControls(mode="cfl", cfl=cfl,
                              final_time=0.25 if final_time is None
                              else final_time,
                              integrator=integrator,
                              startup_steps=20, startup_factor=0.05),
        reference=("overkill",
                   EntropyViscosityModel(EvConfig(c_k=1.0, c_max=0.5))),
        name=f"tc9-k{k}",
        mesh_source=("structured2d", ((-1.5, 1.5), (-1.5, 1.5)), n, n,
                     True))


_CASES = {
    "tc1": {
        "build": _build_tc1, "default_k": 2, "analytic": True,
        "integrator": "lserk45",
        "per_k": {kk: (10 * 2 ** i, 0.05)
                  for i, kk in enumerate([1, 2, 3, 4, 5])},
        "ev": EvConfig(c_k=1.0, c_max=0.5),
        "description": "1D smooth advection convergence",
    },
    "tc2": {
        "build": _build_tc2, "default_k": 2, "analytic": True,
        "integrator": "lserk45",
        "per_k": {1: (20, 0.05), 2: (20, 0.05), 3: (20, 0.05)},
        "ev": EvConfig(c_k=1.0, c_max=0.5),
        "description": "2D smooth advection convergence",
    },
    "tc3": {
        "build": _build_tc3, "default_k": 1, "analytic": True,
        "per_k": {1: (60, 0.2), 3: (30, 0.5), 5: (15, 0.75)},
        "ev": EvConfig(c_k=0.6, c_max=0.3),
        "description": "1D advection of a discontinuous profile",
    },
    "tc4": {
        "build": _build_tc4, "default_k": 1, "analytic": False,
        "per_k": {1: (60, 0.15), 3: (30, 0.4), 5: (15, 0.4)},
        "ev": EvConfig(c_k=3.0, c_max=1.0),
        "description": "1D Burgers with shock formation",
    },
    "tc5": {
        "build": _build_tc5, "default_k": 1, "analytic": True,
        "per_k": {1: (60, 0.27), 3: (30, 0.61), 5: (15, 0.88)},
        "ev": EvConfig(c_k=1.0, c_max=0.5),
        "description": "shock tube (gas dynamics)",
    },
    "tc6": {
        "build": _build_tc6, "default_k": 1, "analytic": False,
        "per_k": {1: (1500, 0.12), 3: (750, 0.3), 5: (500, 0.4)},
        "ev": EvConfig(c_k=1.0, c_max=0.5),
        "description": "shock running into density waves",
    },
    "tc7": {
        "build": _build_tc7, "default_k": 1, "analytic": True,
        "per_k": {1: (60, 0.075), 3: (30, 0.3), 5: (15, 0.32)},
        "ev": EvConfig(c_k=1.0, c_max=0.5),
        "description": "2D advection of nested squares",
    },
    "tc8": {
        "build": _build_tc8, "default_k": 1, "analytic": False,
        "per_k": {1: (60, 0.11), 3: (30, 0.4), 5: (15, 0.48)},
        "ev": EvConfig(c_k=1.0, c_max=0.5),
        "description": "rotating composite wave (non-convex flux)",
    },
    "tc9": {
        "build": _build_tc9, "default_k": 1, "analytic": False,
        "per_k": {1: (60, 0.05), 3: (30, 0.18), 5: (15, 0.21)},
        "ev": EvConfig(c_k=1.0, c_max=0.5),
        "description": "2D four-quadrant gas Riemann problem",
    },
}


# ---------------------------------------------------------------------
# training environments
# ---------------------------------------------------------------------

def training_problem_1d(flux_id: str, ic_id: str, n_cells: int, k: int,
                        n_steps: int, cfl: float = 0.15,
                        ic_params=None, c_max: float = 1.0,
                        ev_reference: EvConfig | None = None):
    """One scalar training problem on the periodic unit interval.

    Advection problems carry the exact translated reference; others get
    an overkill companion with the given (or default) tuned constants.
    """
    ic_params = ic_params or {}
    mesh = build_uniform_1d((0.0, 1.0), n_cells, periodic=True)
    flux = make_flux(flux_id, beta=1.0 if flux_id == "advection1d"
                     else None)
    ic = make_ic(ic_id, **ic_params)
    if flux_id == "advection1d":
        scalar = scalar_ic_fn(ic_id, **ic_params)
        reference = ("analytic",
                     advection_translate_reference(scalar, (0.0, 1.0), 1.0))
    else:
        from .viscosity import EntropyViscosityModel
        cfg = ev_reference or EvConfig(c_k=3.0, c_max=1.0)
        reference = ("overkill", EntropyViscosityModel(cfg))
    problem = Problem(
        mesh=mesh, k=k, flux=flux, ic=ic, bc=BoundarySpec.periodic(),
        controls=TimeControls(mode="cfl", cfl=cfl, n_steps=n_steps),
        reference=reference,
        name=f"{flux_id}-{ic_id}-n{n_cells}-k{k}",
        mesh_source=("uniform1d", (0.0, 1.0), n_cells, True))
    from .training import TrainingProblem
    return TrainingProblem(problem, n_steps=n_steps, c_max=c_max)
