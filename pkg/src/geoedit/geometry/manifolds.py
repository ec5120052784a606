"""Closed-form geodesic acceleration fields for test manifolds.

Each field returns a(gamma, v) = -Gamma(gamma)[v, v], the acceleration of
the geodesic equation written as a first-order system.  These are oracles:
the adaptive integrator and the learned field are validated against them.
"""

import numpy as np

from ..errors import ContractError, DimensionError
from ..validation import as_float_array


class AnalyticChristoffel:
    """A named closed-form contraction; operates on (..., d) arrays."""

    def __init__(self, name, dim, fn):
        self.name = name
        self.dim = dim  # None means any dimension
        self._fn = fn

    def accel(self, gamma, v):
        gamma = as_float_array(gamma, "gamma")
        v = as_float_array(v, "v")
        if gamma.shape != v.shape:
            raise DimensionError(
                f"{self.name}: gamma shape {gamma.shape} != v shape {v.shape}"
            )
        if self.dim is not None and gamma.shape[-1] != self.dim:
            raise DimensionError(
                f"{self.name} is a {self.dim}-coordinate chart, got dimension "
                f"{gamma.shape[-1]}"
            )
        return self._fn(gamma, v)


def _flat(gamma, v):
    return np.zeros_like(gamma)


def _sphere2_chart(gamma, v):
    # Unit sphere in (theta, phi) coordinates:
    #   a_theta = sin(theta) cos(theta) * phi_dot^2
    #   a_phi   = -2 cot(theta) * theta_dot * phi_dot
    theta = gamma[..., 0]
    th_dot = v[..., 0]
    ph_dot = v[..., 1]
    sin_t = np.sin(theta)
    if np.any(np.abs(sin_t) < 1e-12):
        raise ContractError("sphere chart is singular at the poles (sin(theta) ~ 0)")
    a = np.empty_like(gamma)
    a[..., 0] = sin_t * np.cos(theta) * ph_dot**2
    a[..., 1] = -2.0 * (np.cos(theta) / sin_t) * th_dot * ph_dot
    return a


def _poincare_disk(gamma, v):
    # Conformal factor lambda = 2 / (1 - r^2); valid strictly inside the disk.
    x = gamma[..., 0]
    y = gamma[..., 1]
    xd = v[..., 0]
    yd = v[..., 1]
    r2 = x * x + y * y
    if np.any(r2 >= 1.0):
        raise ContractError("poincare-disk chart requires ||gamma|| < 1")
    lam = 2.0 / (1.0 - r2)
    a = np.empty_like(gamma)
    a[..., 0] = -lam * (x * (xd * xd - yd * yd) + 2.0 * y * xd * yd)
    a[..., 1] = -lam * (y * (yd * yd - xd * xd) + 2.0 * x * xd * yd)
    return a


ANALYTIC_FIELDS = {
    "flat": AnalyticChristoffel("flat", None, _flat),
    "sphere2-chart": AnalyticChristoffel("sphere2-chart", 2, _sphere2_chart),
    "poincare-disk": AnalyticChristoffel("poincare-disk", 2, _poincare_disk),
}


def analytic_field(name):
    if name not in ANALYTIC_FIELDS:
        raise ContractError(
            f"unknown analytic manifold {name!r}; choose from {sorted(ANALYTIC_FIELDS)}"
        )
    return ANALYTIC_FIELDS[name]
