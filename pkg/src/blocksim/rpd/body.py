"""Rigid bodies and their contact-model parameters.

A body is a shape (sphere or half space) plus kinematic state: position,
orientation quaternion (w, x, y, z), linear and angular velocity, and force
and torque accumulators that collect one step's interactions. Finite bodies
carry mass and their body-frame inertia; half spaces are infinite, carry
none, and are always replicated global bodies rather than block-owned ones.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ValidationError

LOCAL = "Local"
GHOST = "Ghost"
GLOBAL = "GlobalBody"


def _vec3(value, name):
    v = np.array(value, dtype=np.float64).reshape(-1)
    if v.shape != (3,):
        raise ValidationError(f"{name} must have 3 components, got {value!r}")
    return v


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape != (4,):
        raise ValidationError(f"quaternion must have 4 components, got {q.shape}")
    n = math.sqrt(float(np.dot(q, q)))
    if not (n > 1e-8 and math.isfinite(n)):
        raise ValidationError("quaternion norm too small to normalize")
    return q / n


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_from_rotation(vec):
    """Exponential map: rotation vector (axis * angle) -> unit quaternion."""
    v = np.asarray(vec, dtype=np.float64)
    angle = math.sqrt(float(np.dot(v, v)))
    if angle == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    s = math.sin(half) / angle
    return np.array([math.cos(half), s * v[0], s * v[1], s * v[2]])


def rotation_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


class Sphere:
    __slots__ = ("radius",)
    kind = "sphere"

    def __init__(self, radius):
        radius = float(radius)
        if not (radius > 0 and math.isfinite(radius)):
            raise ValidationError(f"sphere radius must be positive, got {radius}")
        self.radius = radius

    @property
    def bounding_radius(self):
        return self.radius

    def inertia(self, mass):
        i = 0.4 * mass * self.radius * self.radius
        return np.diag([i, i, i]), np.diag([1.0 / i] * 3)

    def __repr__(self):
        return f"Sphere({self.radius})"


class HalfSpace:
    """Plane normal . x = offset bounding the half space below it; the unit
    normal points out of the material (offset is measured along it)."""

    __slots__ = ("normal", "offset")
    kind = "halfspace"

    def __init__(self, normal, offset=0.0):
        n = _vec3(normal, "normal")
        length = math.sqrt(float(np.dot(n, n)))
        if length == 0.0:
            raise ValidationError("half space normal must be nonzero")
        self.normal = n / length
        self.offset = float(offset)

    @property
    def bounding_radius(self):
        return math.inf

    def __repr__(self):
        return f"HalfSpace({tuple(self.normal)}, {self.offset})"


class ContactModel:
    """Linear spring-dashpot constants: normal stiffness k_n and damping
    gamma_n, tangential stiffness k_t and damping gamma_t, Coulomb friction
    coefficient mu."""

    __slots__ = ("k_n", "gamma_n", "k_t", "mu", "gamma_t")

    def __init__(self, k_n, gamma_n=0.0, k_t=0.0, mu=0.0, gamma_t=0.0):
        self.k_n = float(k_n)
        self.gamma_n = float(gamma_n)
        self.k_t = float(k_t)
        self.mu = float(mu)
        self.gamma_t = float(gamma_t)
        if not self.k_n > 0:
            raise ValidationError(f"k_n must be positive, got {self.k_n}")
        for name in ("gamma_n", "k_t", "mu", "gamma_t"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")

    def __repr__(self):
        return (f"ContactModel(k_n={self.k_n}, gamma_n={self.gamma_n}, "
                f"k_t={self.k_t}, mu={self.mu}, gamma_t={self.gamma_t})")


class RigidBody:
    __slots__ = ("uid", "shape", "position", "orientation", "linear_velocity",
                 "angular_velocity", "force", "torque", "mass", "inv_mass",
                 "inertia_body", "inv_inertia_body", "classification",
                 "owner_rank", "hydrodynamic_force", "hydrodynamic_torque",
                 "_accel", "_ang_accel", "_kicked", "_image")

    def __init__(self, uid, shape, position, *, orientation=(1.0, 0.0, 0.0, 0.0),
                 linear_velocity=(0.0, 0.0, 0.0), angular_velocity=(0.0, 0.0, 0.0),
                 mass=None, classification=LOCAL, owner_rank=0):
        if classification not in (LOCAL, GHOST, GLOBAL):
            raise ValidationError(f"unknown classification {classification!r}")
        self.uid = int(uid)
        self.shape = shape
        self.position = _vec3(position, "position")
        self.orientation = quat_normalize(orientation)
        self.linear_velocity = _vec3(linear_velocity, "linear_velocity")
        self.angular_velocity = _vec3(angular_velocity, "angular_velocity")
        self.force = np.zeros(3)
        self.torque = np.zeros(3)
        if shape.kind == "halfspace":
            if classification != GLOBAL:
                raise ValidationError("half spaces are always global bodies")
            self.mass = math.inf
            self.inv_mass = 0.0
            self.inertia_body = np.zeros((3, 3))
            self.inv_inertia_body = np.zeros((3, 3))
        else:
            if classification == GLOBAL:
                raise ValidationError("only infinite bodies can be global")
            if mass is None or not (float(mass) > 0 and math.isfinite(float(mass))):
                raise ValidationError(f"finite body needs a positive mass, got {mass}")
            self.mass = float(mass)
            self.inv_mass = 1.0 / self.mass
            self.inertia_body, self.inv_inertia_body = shape.inertia(self.mass)
        self.classification = classification
        self.owner_rank = int(owner_rank)
        self.hydrodynamic_force = np.zeros(3)
        self.hydrodynamic_torque = np.zeros(3)
        self._accel = np.zeros(3)
        self._ang_accel = np.zeros(3)
        self._kicked = False
        self._image = (0, 0, 0)

    @property
    def is_finite(self):
        return self.shape.bounding_radius != math.inf

    @property
    def bounding_radius(self):
        return self.shape.bounding_radius

    def inv_inertia_world(self):
        r = rotation_matrix(self.orientation)
        return r @ self.inv_inertia_body @ r.T

    def velocity_at(self, point):
        """Velocity of the material point `point` on this body."""
        return self.linear_velocity + np.cross(self.angular_velocity,
                                               point - self.position)

    def __repr__(self):
        return (f"RigidBody(uid={self.uid}, {self.shape!r}, "
                f"{self.classification}@{self.owner_rank})")
