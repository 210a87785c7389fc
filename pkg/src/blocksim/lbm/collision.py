"""Collision operators and body-force models.

Three relaxation schemes share one kernel entry point: single-rate (SRT),
two-rate with an even/odd population split (TRT), and full multi-rate
relaxation in moment space (MRT). Moment equilibria are M @ f_eq, so a
diagonal S = omega*I collapses MRT onto SRT up to rounding, and equal TRT
rates do the same.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from ..errors import NumericsError, ValidationError
from .._kernels import impl
from .stencil import Stencil, basis_inverse, moment_basis

MAGIC_DEFAULT = Fraction(3, 16)


def _check_rate(label, value):
    v = float(value)
    if not 0.0 < v < 2.0:
        raise ValidationError(f"{label} must lie in (0, 2), got {value}")
    return v


def _force_vector(force):
    f = tuple(float(x) for x in force)
    if len(f) == 2:
        f = (f[0], f[1], 0.0)
    if len(f) != 3:
        raise ValidationError(f"force needs 2 or 3 components, got {force!r}")
    return f


class SRT:
    """Single-rate collision. Either one global rate or a per-cell rate
    field (a registered scalar field slot) may be given, not both."""

    mode = 0

    def __init__(self, omega=None, *, omega_field=None):
        if (omega is None) == (omega_field is None):
            raise ValidationError("SRT needs omega or omega_field")
        self.omega = None if omega is None else _check_rate("omega", omega)
        self.omega_field = omega_field

    def __repr__(self):
        if self.omega_field is not None:
            return f"SRT(omega_field={self.omega_field!r})"
        return f"SRT(omega={self.omega})"


class TRT:
    """Two-rate collision splitting populations into even and odd parts."""

    mode = 1
    omega_field = None

    def __init__(self, omega_e, omega_o):
        self.omega_e = _check_rate("omega_e", omega_e)
        self.omega_o = _check_rate("omega_o", omega_o)

    @classmethod
    def with_magic(cls, omega_e, magic=MAGIC_DEFAULT):
        """Pick the odd rate so (1/w_e - 1/2)(1/w_o - 1/2) equals `magic`."""
        omega_e = _check_rate("omega_e", omega_e)
        lam_e = 1.0 / omega_e - 0.5
        if lam_e <= 0.0:
            raise ValidationError("omega_e = 2 leaves the magic value undefined")
        omega_o = 1.0 / (float(magic) / lam_e + 0.5)
        return cls(omega_e, omega_o)

    @property
    def magic(self):
        return (1.0 / self.omega_e - 0.5) * (1.0 / self.omega_o - 0.5)

    def __repr__(self):
        return f"TRT(omega_e={self.omega_e}, omega_o={self.omega_o})"


class MRT:
    """Moment-space relaxation with one rate per moment.

    Bound to a stencil because the rates are ordered by its moment basis.
    Only stencils with a defined basis are accepted.
    """

    mode = 2
    omega_field = None

    def __init__(self, stencil: Stencil, rates):
        self.stencil = stencil
        self.M = moment_basis(stencil).astype(np.float64)
        self.Minv = basis_inverse(moment_basis(stencil))
        rates = [_check_rate(f"rate[{k}]", r) for k, r in enumerate(rates)]
        if len(rates) != stencil.q:
            raise ValidationError(
                f"{stencil.name} needs {stencil.q} rates, got {len(rates)}")
        self.S = np.array(rates)

    @classmethod
    def uniform(cls, stencil, omega):
        return cls(stencil, [omega] * stencil.q)

    def __repr__(self):
        return f"MRT({self.stencil.name}, rates={self.S.tolist()})"


class Guo:
    """Body force entering both the equilibrium velocity (half shift) and a
    relaxed population source term."""

    mode = 1

    def __init__(self, force):
        self.force = _force_vector(force)

    def __repr__(self):
        return f"Guo({self.force})"


class SimpleShift:
    """Body force applied by shifting the equilibrium velocity by tau*F/rho.
    Only meaningful with a single global rate."""

    mode = 2

    def __init__(self, force):
        self.force = _force_vector(force)

    def __repr__(self):
        return f"SimpleShift({self.force})"


def equilibrium(rho, velocity, stencil: Stencil):
    """Second-order equilibrium populations, shape (..., q)."""
    rho = np.asarray(rho, dtype=np.float64)
    u = np.asarray(velocity, dtype=np.float64)
    if u.shape[-1] == 2:
        u = np.concatenate([u, np.zeros(u.shape[:-1] + (1,))], axis=-1)
    if u.shape[-1] != 3:
        raise ValidationError(f"velocity needs 2 or 3 components, got shape "
                              f"{u.shape}")
    ux, uy, uz = u[..., 0], u[..., 1], u[..., 2]
    usq = ux * ux + uy * uy + uz * uz
    out = np.empty(np.broadcast(rho, ux).shape + (stencil.q,))
    for i, (cx, cy, cz) in enumerate(stencil.c):
        cu = cx * ux + cy * uy + cz * uz
        out[..., i] = float(stencil.w[i]) * rho * (
            1.0 + 3.0 * cu + 4.5 * cu * cu - 1.5 * usq)
    return out


def macroscopic(pdfs, stencil: Stencil, force=None):
    """Density and velocity from populations of shape (..., q).

    With a Guo force the velocity carries the half-step shift F/(2 rho).
    Raises when any density is not positive.
    """
    f = np.asarray(pdfs, dtype=np.float64)
    if f.shape[-1] != stencil.q:
        raise ValidationError(
            f"expected {stencil.q} populations, got {f.shape[-1]}")
    rho = f[..., 0].copy()
    for i in range(1, stencil.q):
        rho = rho + f[..., i]
    if np.any(rho <= 0.0):
        raise NumericsError(f"non-positive density {float(np.min(rho))}")
    m = np.zeros(rho.shape + (3,))
    for i, (cx, cy, cz) in enumerate(stencil.c):
        if cx:
            m[..., 0] += cx * f[..., i]
        if cy:
            m[..., 1] += cy * f[..., i]
        if cz:
            m[..., 2] += cz * f[..., i]
    inv = (1.0 / rho)[..., None]
    u = m * inv
    if isinstance(force, Guo):
        u = u + 0.5 * np.asarray(force.force) * inv
    return rho, u


def _kernel_params(stencil: Stencil, model, force=None):
    """Parameter dict consumed by the collide kernel of either backend."""
    if isinstance(model, MRT) and model.stencil is not stencil:
        raise ValidationError(
            f"MRT basis built for {model.stencil.name}, sweep uses "
            f"{stencil.name}")
    params = {
        "cx": [c[0] for c in stencil.c],
        "cy": [c[1] for c in stencil.c],
        "cz": [c[2] for c in stencil.c],
        "w": [float(w) for w in stencil.w],
        "opp": list(stencil.opp),
        "force_mode": 0,
        "force": (0.0, 0.0, 0.0),
        "omega_window": None,
    }
    if isinstance(model, SRT):
        params["omega"] = model.omega
    elif isinstance(model, TRT):
        params["omega_e"] = model.omega_e
        params["omega_o"] = model.omega_o
    elif isinstance(model, MRT):
        params["M"] = model.M
        params["Minv"] = model.Minv
        params["S"] = model.S
    else:
        raise ValidationError(f"unknown collision model {model!r}")

    if force is None:
        return params
    params["force_mode"] = force.mode
    params["force"] = force.force
    if isinstance(force, SimpleShift):
        if not isinstance(model, SRT) or model.omega is None:
            raise ValidationError(
                "SimpleShift needs an SRT model with one global rate")
        params["shift_tau"] = 1.0 / model.omega
    elif isinstance(force, Guo):
        if isinstance(model, MRT):
            half = np.eye(stencil.q) - 0.5 * np.diag(model.S)
            params["guo_matrix"] = model.Minv @ half @ model.M
    else:
        raise ValidationError(f"unknown force model {force!r}")
    return params


def collide_pdfs(pdfs, stencil: Stencil, model, force=None):
    """Collide an array of populations (..., q) and return the result.

    Convenience wrapper around the cell kernel for tests and one-off cells;
    the sweep drives the kernel on whole blocks instead.
    """
    if getattr(model, "omega_field", None) is not None:
        raise ValidationError("per-cell rates need a field context; use the "
                              "block sweep")
    arr = np.array(pdfs, dtype=np.float64)
    if arr.shape[-1] != stencil.q:
        raise ValidationError(
            f"expected {stencil.q} populations, got {arr.shape[-1]}")
    view = arr.reshape(1, 1, -1, stencil.q)
    flags = np.ones(view.shape[:3], dtype=np.uint32)
    impl.collide(view, flags, 1, model.mode, _kernel_params(stencil, model, force))
    return arr
