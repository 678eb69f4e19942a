"""Physical flux models, wave speeds and entropy pairs.

A state is a list of ``m`` arrays (one per conserved variable); each
array may be a plain numpy array or a recorded ``AdValue``, so the same
code path serves evaluation and training.  Fluxes return, per variable,
a tuple of ``d`` directional components.

Systems reduce to a representative scalar (density) wherever a viscosity
model needs one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

__all__ = ["FluxModel", "NonphysicalStateError", "make_flux",
           "conserved_from_primitive", "FLUX_IDS"]

FLUX_IDS = ("advection1d", "burgers1d", "euler1d",
            "advection2d", "kpp2d", "euler2d")


class NonphysicalStateError(ValueError):
    """Euler state with non-positive density or pressure."""

    def __init__(self, message, where=None):
        if where is not None:
            message = f"{message} ({where})"
        super().__init__(message)
        self.where = where


@dataclass(frozen=True)
class FluxModel:
    """One of the supported conservation laws.

    ``n_vars`` conserved variables in ``dim`` space dimensions;
    ``rep_index`` selects the representative scalar used by the
    viscosity pipeline.
    """

    identifier: str
    dim: int
    n_vars: int
    rep_index: int = 0
    beta: tuple = ()
    gamma: float = 1.4

    # -- helpers --------------------------------------------------------
    def _check_physical(self, rho, p, where=None):
        rmin = float(np.min(ad.value_of(rho)))
        pmin = float(np.min(ad.value_of(p)))
        if rmin <= 0.0 or pmin <= 0.0:
            raise NonphysicalStateError(
                f"nonphysical state: min rho={rmin:.3e}, min p={pmin:.3e}",
                where=where)

    def _euler_primitives(self, u, where=None):
        rho = u[0]
        if self.dim == 1:
            v = u[1] / rho
            kinetic = 0.5 * (u[1] * v)
            e = u[2]
            p = (self.gamma - 1.0) * (e - kinetic)
            self._check_physical(rho, p, where)
            return rho, (v,), e, p
        v1 = u[1] / rho
        v2 = u[2] / rho
        kinetic = 0.5 * (u[1] * v1 + u[2] * v2)
        e = u[3]
        p = (self.gamma - 1.0) * (e - kinetic)
        self._check_physical(rho, p, where)
        return rho, (v1, v2), e, p

    # -- operations ------------------------------------------------------
    def evaluate(self, u, where=None):
        """Flux tensor: per variable, a tuple of ``dim`` components."""
        ident = self.identifier
        if ident == "advection1d":
            return [(self.beta[0] * u[0],)]
        if ident == "burgers1d":
            return [(0.5 * u[0] * u[0],)]
        if ident == "advection2d":
            return [(self.beta[0] * u[0], self.beta[1] * u[0])]
        if ident == "kpp2d":
            return [(ad.sin(u[0]), ad.cos(u[0]))]
        if ident == "euler1d":
            rho, (v,), e, p = self._euler_primitives(u, where)
            return [(u[1],), (u[1] * v + p,), (v * (e + p),)]
        if ident == "euler2d":
            rho, (v1, v2), e, p = self._euler_primitives(u, where)
            mom_xy = u[1] * v2  # rho v1 v2
            return [
                (u[1], u[2]),
                (u[1] * v1 + p, mom_xy),
                (mom_xy, u[2] * v2 + p),
                (v1 * (e + p), v2 * (e + p)),
            ]
        raise ValueError(f"unknown flux {ident!r}")

    def pointwise_speed(self, u, where=None):
        """Upper bound |f'(u)| of the local wave speed, per point."""
        ident = self.identifier
        if ident.startswith("advection"):
            speed = math.hypot(*self.beta)
            return np.full(ad.value_of(u[0]).shape, speed)
        if ident == "burgers1d":
            return ad.absolute(u[0])
        if ident == "kpp2d":
            return np.ones(ad.value_of(u[0]).shape)
        rho, v, e, p = self._euler_primitives(u, where)
        c = ad.sqrt(self.gamma * p / rho)
        if self.dim == 1:
            return ad.absolute(v[0]) + c
        return ad.sqrt(v[0] * v[0] + v[1] * v[1]) + c

    def max_wave_speed(self, u_minus, u_plus, normal, where=None):
        """Largest |eigenvalue| of the normal Jacobian over both traces."""
        ident = self.identifier
        if ident == "advection1d":
            lam = abs(self.beta[0] * normal[..., 0])
            return np.broadcast_to(lam, ad.value_of(u_minus[0]).shape).copy()
        if ident == "advection2d":
            lam = np.abs(normal[..., 0] * self.beta[0]
                         + normal[..., 1] * self.beta[1])
            return np.broadcast_to(lam, ad.value_of(u_minus[0]).shape).copy()
        if ident == "burgers1d":
            return ad.maximum(ad.absolute(u_minus[0]),
                              ad.absolute(u_plus[0]))
        if ident == "kpp2d":
            return np.ones(ad.value_of(u_minus[0]).shape)
        # Euler: |v.n| + sound speed, maximized over the two traces
        def side(u):
            rho, v, e, p = self._euler_primitives(u, where)
            c = ad.sqrt(self.gamma * p / rho)
            if self.dim == 1:
                vn = v[0] * normal[..., 0]
            else:
                vn = v[0] * normal[..., 0] + v[1] * normal[..., 1]
            return ad.absolute(vn) + c

        return ad.maximum(side(u_minus), side(u_plus))

    def entropy_pair(self, u):
        """Convex entropy of the representative scalar and its flux."""
        ident = self.identifier
        if ident == "advection1d":
            w = u[0]
            return 0.5 * w * w, (0.5 * self.beta[0] * w * w,)
        if ident == "advection2d":
            w = u[0]
            half = 0.5 * w * w
            return half, (self.beta[0] * half, self.beta[1] * half)
        if ident == "burgers1d":
            w = u[0]
            return 0.5 * w * w, (w * w * w / 3.0,)
        if ident == "kpp2d":
            w = u[0]
            sw, cw = ad.sin(w), ad.cos(w)
            return 0.5 * w * w, (w * sw + cw - 1.0, w * cw - sw)
        # Euler systems: density entropy, transported by the velocity
        rho, v, e, p = self._euler_primitives(u)
        ent = 0.5 * rho * rho
        return ent, tuple(ent * vi for vi in v)

    def physicality_margin(self, u) -> float:
        """min(rho, p) over all points for gas states, +inf for scalars."""
        if not self.identifier.startswith("euler"):
            return float("inf")
        rho = np.asarray(ad.value_of(u[0]), dtype=float)
        if rho.min() <= 0.0:
            return float(rho.min())
        if self.dim == 1:
            kinetic = 0.5 * ad.value_of(u[1]) ** 2 / rho
            e = ad.value_of(u[2])
        else:
            kinetic = 0.5 * (ad.value_of(u[1]) ** 2
                             + ad.value_of(u[2]) ** 2) / rho
            e = ad.value_of(u[3])
        p = (self.gamma - 1.0) * (e - kinetic)
        return float(min(rho.min(), p.min()))

    def representative(self, u):
        return u[self.rep_index]

    def representative_flux(self, u, where=None):
        """Flux components of the representative variable's equation."""
        return self.evaluate(u, where)[self.rep_index]


def make_flux(identifier: str, beta=None, gamma: float = 1.4) -> FluxModel:
    """Build a flux model from its string id and parameters."""
    if gamma <= 1.0:
        raise ValueError("gamma must exceed 1")
    if identifier == "advection1d":
        b = (1.0,) if beta is None else (float(np.atleast_1d(beta)[0]),)
        return FluxModel("advection1d", 1, 1, beta=b)
    if identifier == "burgers1d":
        return FluxModel("burgers1d", 1, 1)
    if identifier == "euler1d":
        return FluxModel("euler1d", 1, 3, gamma=gamma)
    if identifier == "advection2d":
        b = (1.0, 1.0) if beta is None else tuple(float(x) for x in beta)
        if len(b) != 2:
            raise ValueError("advection2d needs a 2-vector beta")
        return FluxModel("advection2d", 2, 1, beta=b)
    if identifier == "kpp2d":
        return FluxModel("kpp2d", 2, 1)
    if identifier == "euler2d":
        return FluxModel("euler2d", 2, 4, gamma=gamma)
    raise ValueError(f"unknown flux identifier {identifier!r}; "
                     f"known: {', '.join(FLUX_IDS)}")


def conserved_from_primitive(prim, gamma: float = 1.4):
    """Map (rho, v..., p) to conserved variables (rho, rho v..., e)."""
    prim = [np.asarray(p, dtype=float) for p in prim]
    rho, p = prim[0], prim[-1]
    vs = prim[1:-1]
    kinetic = 0.5 * rho * sum(v * v for v in vs)
    e = p / (gamma - 1.0) + kinetic
    return [rho] + [rho * v for v in vs] + [e]
