"""Physics-defined training loss and its per-step metric breakdown.

Per step the loss accumulates the discrete q-norm (to the q-th power) of
the deviation from a reference trajectory, of its gradient, and a
configurable set of regularizers: overshoot/undershoot beyond the
reference's range (masked entries only, so gradients flow through the
offending values alone) and a viscosity penalization that divides the
mean added viscosity by the solution's gradient norm.  Jump error and
mass variation are tracked as metrics; mass variation only enters the
loss on periodic problems.

A blow-up inside the unroll yields a large sentinel value instead of a
crash so the training loop's restart logic has something to compare.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .assembly import get_discretization, integrate_state
from .fluxes import NonphysicalStateError
from .timeloop import BlowUpError, initial_state, step
from .viscosity import NeuralViscosityModel, smooth, viscosity_bound

__all__ = ["LossConfig", "LossBreakdown", "compute_metrics", "loss",
           "training_dt", "evaluate_metrics", "METRIC_NAMES"]

METRIC_NAMES = ("err", "grad_err", "jump_err", "ou", "mv", "vp")


@dataclass
class LossConfig:
    q: int = 1
    w_grad: float = 1.0
    regularizers: dict = field(
        default_factory=lambda: {"ou": 10.0, "vp": 0.1})
    vp_eps: float = 1e-8
    l_max: float = 1e30

    def __post_init__(self):
        if self.q not in (1, 2):
            raise ValueError("q must be 1 or 2")
        if self.w_grad < 0 or any(w < 0 for w in self.regularizers.values()):
            raise ValueError("loss weights must be nonnegative")
        unknown = set(self.regularizers) - {"ou", "vp", "mv", "jump_err"}
        if unknown:
            raise ValueError(f"unknown regularizers {sorted(unknown)}")


@dataclass
class LossBreakdown:
    """Float metric values per step plus their accumulated sums."""

    per_step: list = field(default_factory=list)
    cumulative: dict = field(
        default_factory=lambda: {name: 0.0 for name in METRIC_NAMES})
    total: float = 0.0
    blown: bool = False
    blown_at: int | None = None

    def add_step(self, entry):
        self.per_step.append(entry)
        for name in METRIC_NAMES:
            self.cumulative[name] += entry[name]


def _powered_norm(x, q):
    """sum |x|^q of a recorded or plain array (0 for empty input)."""
    if ad.value_of(x).size == 0:
        return 0.0
    if q == 1:
        return ad.sum_all(ad.absolute(x))
    return ad.sum_all(x * x)


def _scalar(x) -> float:
    return float(np.asarray(ad.value_of(x)).reshape(-1)[0]) \
        if np.asarray(ad.value_of(x)).size else 0.0


def _metric_value(powered, q):
    v = max(_scalar(powered), 0.0)
    return v if q == 1 else np.sqrt(v)


def compute_metrics(u, u_ref, visc_field, u_prev, q, disc, flux,
                    vp_eps=1e-8):
    """Per-step loss terms (to the q-th power, live on the tape when the
    inputs are recorded) keyed by metric name."""
    if len(u) != len(u_ref):
        raise ValueError("state and reference variable counts differ")
    terms = {}
    err = 0.0
    for c, r in zip(u, u_ref):
        if ad.value_of(c).shape != np.asarray(r).shape:
            raise ValueError("state and reference shapes differ")
        err = err + _powered_norm(c - r, q)
    terms["err"] = err

    grad_err = 0.0
    grad_self = 0.0
    for c, r in zip(u, u_ref):
        gc = disc.gradient(c)
        gr = disc.gradient(np.asarray(r))
        for d in range(disc.dim):
            grad_err = grad_err + _powered_norm(gc[d] - gr[d], q)
            grad_self = grad_self + _powered_norm(gc[d], q)
    terms["grad_err"] = grad_err

    jump_err = 0.0
    interior = disc.interior_faces
    from .assembly import face_traces
    for c, r in zip(u, u_ref):
        wm, wp = face_traces(disc, c - r)
        jump_err = jump_err + _powered_norm(wm[interior] - wp[interior], q)
    terms["jump_err"] = jump_err

    ou = 0.0
    for c, r in zip(u, u_ref):
        hi = float(np.max(r))
        lo = float(np.min(r))
        flat = c.reshape(ad.value_of(c).size) if isinstance(c, ad.AdValue) \
            else np.asarray(c).ravel()
        vals = ad.value_of(flat)
        over = np.flatnonzero(vals > hi)
        under = np.flatnonzero(vals < lo)
        if over.size:
            ou = ou + _powered_norm(flat[over] - hi, q)
        if under.size:
            ou = ou + _powered_norm(flat[under] - lo, q)
    terms["ou"] = ou

    mass_now = integrate_state(disc, u)
    mass_prev = integrate_state(disc, u_prev)
    mv = 0.0
    for a, b in zip(mass_now, mass_prev):
        mv = mv + ad.absolute(a - b)
    terms["mv"] = mv if q == 1 else mv * mv

    if visc_field is None:
        terms["vp"] = 0.0
    else:
        mu_bar = visc_field.cell_average(disc)
        grad_norm = grad_self if q == 1 else ad.sqrt(grad_self + 1e-300)
        terms["vp"] = ad.sum_all(mu_bar) / (grad_norm + vp_eps) \
            if isinstance(mu_bar, ad.AdValue) or \
            isinstance(grad_norm, ad.AdValue) \
            else float(np.sum(ad.value_of(mu_bar))) \
            / (float(ad.value_of(grad_norm)) + vp_eps)
    return terms


def training_dt(problem, c_max: float = 1.0, safety: float = 0.9) -> float:
    """Fixed step for training unrolls: the stability bound evaluated on
    the initial condition with the worst-case (capped) viscosity, times
    a safety factor.  Independent of the network parameters."""
    from .timeloop import compute_dt
    basis = problem.basis()
    state = initial_state(problem, basis)
    cap = viscosity_bound(state, problem.flux, problem.mesh, problem.k,
                          c_max)
    cap_field = smooth(ad.value_of(cap), problem.mesh)
    return safety * compute_dt(state, cap_field, problem.flux,
                               problem.mesh, basis, problem.controls.cfl)


def loss(theta, problem, net, cfg: LossConfig, reference, n_steps: int,
         dt: float, c_max: float = 1.0, tape=None, checkpoint: bool = False):
    """Unroll the solver with neural viscosity and accumulate the loss.

    ``theta`` is the flat parameter vector, recorded when a tape is
    given.  ``reference.at(t)`` must serve every step time.  Returns
    (total, breakdown); on a blow-up the total is the sentinel
    ``cfg.l_max`` as a plain float and the breakdown is flagged.
    """
    basis = problem.basis()
    disc = get_discretization(problem.mesh, basis)
    if tape is not None and not isinstance(theta, ad.AdValue):
        raise ValueError("recording a loss needs theta on the tape")
    model = NeuralViscosityModel(net, c_max=c_max, theta=theta)
    integrator = problem.controls.pick_integrator(problem.k)
    state = initial_state(problem, basis)
    breakdown = LossBreakdown()
    total = 0.0
    periodic = problem.mesh.is_periodic
    use_mv = periodic

    for n in range(1, n_steps + 1):
        if checkpoint and tape is not None:
            tape.begin_checkpoint()
        try:
            visc = model.compute(state, problem.flux, problem.mesh, basis,
                                 dt=dt if n > 1 else None)
            state = step(state, visc, problem.flux, problem.mesh, basis,
                         problem.bc, dt, integrator=integrator,
                         tau=problem.tau)
        except (BlowUpError, NonphysicalStateError, ad.DomainError):
            if checkpoint and tape is not None:
                tape._open_region = None
            breakdown.blown = True
            breakdown.blown_at = n
            breakdown.total = cfg.l_max
            return cfg.l_max, breakdown
        ref_n = reference.at(state.t)
        terms = compute_metrics(state.u, ref_n, visc, state.u_prev, cfg.q,
                                disc, problem.flux, vp_eps=cfg.vp_eps)
        step_total = terms["err"] + cfg.w_grad * terms["grad_err"]
        for name, w in cfg.regularizers.items():
            if name == "mv" and not use_mv:
                continue
            step_total = step_total + w * terms[name]
        if checkpoint and tape is not None:
            keep = list(state.u) + list(state.u_prev)
            if isinstance(step_total, ad.AdValue):
                keep.append(step_total)
            tape.end_checkpoint(*keep)
        total = total + step_total
        entry = {name: _metric_value(terms[name], cfg.q)
                 for name in METRIC_NAMES}
        entry["mv"] = _scalar(terms["mv"]) if cfg.q == 1 \
            else float(np.sqrt(_scalar(terms["mv"])))
        entry["vp"] = _scalar(terms["vp"])
        entry["step_total"] = _scalar(step_total)
        entry["t"] = state.t
        breakdown.add_step(entry)
        if not np.isfinite(entry["step_total"]):
            breakdown.blown = True
            breakdown.blown_at = n
            breakdown.total = cfg.l_max
            return cfg.l_max, breakdown

    breakdown.total = _scalar(total)
    return total, breakdown


def evaluate_metrics(problem, visc_model, cfg: LossConfig, reference,
                     n_steps=None):
    """Metric breakdown of an evaluation run against a reference.

    Marches with the problem's own time controls (adaptive CFL by
    default) and streams the per-step metrics; no tape involved.
    """
    from .timeloop import run
    basis = problem.basis()
    disc = get_discretization(problem.mesh, basis)
    breakdown = LossBreakdown()
    use_mv = problem.mesh.is_periodic

    def on_step(i, state, visc_field, dt):
        ref_n = reference.at(state.t)
        terms = compute_metrics(state.u, ref_n, visc_field, state.u_prev,
                                cfg.q, disc, problem.flux,
                                vp_eps=cfg.vp_eps)
        step_total = terms["err"] + cfg.w_grad * terms["grad_err"]
        for name, w in cfg.regularizers.items():
            if name == "mv" and not use_mv:
                continue
            step_total = step_total + w * terms[name]
        entry = {name: _metric_value(terms[name], cfg.q)
                 for name in METRIC_NAMES}
        entry["mv"] = _scalar(terms["mv"])
        entry["vp"] = _scalar(terms["vp"])
        entry["step_total"] = _scalar(step_total)
        entry["t"] = state.t
        breakdown.add_step(entry)

    try:
        run(problem, visc_model, on_step=on_step, n_steps=n_steps)
    except BlowUpError as err:
        breakdown.blown = True
        breakdown.blown_at = err.step_index
        breakdown.total = cfg.l_max
        return breakdown
    breakdown.total = sum(e["step_total"] for e in breakdown.per_step)
    return breakdown
