"""Exponential map via geodesic integration.

The geodesic second-order equation is integrated as the first-order system
y = (gamma, gamma_dot) on t in [0, 1]; the map's value is the endpoint
position.  The training path freezes the step sizes chosen by the adaptive
numpy pass and replays them on the autodiff tape, so gradients differentiate
exactly the discretization that produced the output.
"""

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..validation import as_float_array, check_same_shape
from .dopri5 import SolverConfig, integrate


@dataclass
class GeodesicResult:
    gamma: np.ndarray
    velocity: np.ndarray
    accepted_steps: int
    steps: list
    trajectory: list | None = None


def _rhs(field):
    def f(t, y):
        d = y.shape[-1] // 2
        gamma, v = y[..., :d], y[..., d:]
        return np.concatenate([v, field.accel(gamma, v)], axis=-1)

    return f


def integrate_geodesic(gamma0, v0, field, cfg=None, record_trajectory=False):
    """Runs the geodesic from (gamma0, v0) over unit time."""
    gamma0 = as_float_array(gamma0, "gamma0")
    v0 = as_float_array(v0, "v0")
    check_same_shape(gamma0, v0, "gamma0", "v0")
    d = gamma0.shape[-1]
    y0 = np.concatenate([gamma0, v0], axis=-1)
    res = integrate(_rhs(field), y0, cfg or SolverConfig(), record_trajectory)
    return GeodesicResult(
        gamma=res.y_end[..., :d],
        velocity=res.y_end[..., d:],
        accepted_steps=res.accepted_steps,
        steps=res.steps,
        trajectory=res.trajectory,
    )


def exp_map(h, v0, field, cfg=None):
    """Endpoint position of the unit-time geodesic leaving h with velocity v0."""
    return integrate_geodesic(h, v0, field, cfg).gamma


def geodesic_offset(h, v0, field, cfg=None):
    """Displacement exp_h(v0) - h; adding it back to h recovers the endpoint."""
    h = as_float_array(h, "h")
    return exp_map(h, v0, field, cfg) - h


def arc_length(trajectory):
    """Trapezoid-rule arc length from a recorded (t, state) trajectory."""
    total = 0.0
    for (t0, y0), (t1, y1) in zip(trajectory, trajectory[1:]):
        d = y0.shape[-1] // 2
        s0 = np.linalg.norm(y0[..., d:], axis=-1)
        s1 = np.linalg.norm(y1[..., d:], axis=-1)
        total = total + 0.5 * (s0 + s1) * (t1 - t0)
    return total


# ---------------------------------------------------------------------------
# training path: frozen-step tape replay
# ---------------------------------------------------------------------------


def _rhs_tape(field, d):
    def f(t, y):
        gamma = ad.slice_last(y, 0, d)
        v = ad.slice_last(y, d, 2 * d)
        return ad.concat([v, field.accel_tape(gamma, v)], axis=-1)

    return f


def exp_map_replay(h, v0, field, steps):
    """Replay recorded steps on the tape; h, v0 are (B, d) Tensors."""
    d = h.shape[-1]
    y = ad.concat([h, v0], axis=-1)
    f = _rhs_tape(field, d)
    from .dopri5 import replay_steps

    y_end = replay_steps(f, y, steps)
    return ad.slice_last(y_end, 0, d)


def exp_map_tape(h, v0, field, cfg=None):
    """Differentiable exponential map for (B, d) Tensors.

    The adaptive pass runs on the current parameter values to pick steps;
    returns (endpoint Tensor, recorded steps).
    """
    res = integrate_geodesic(h.data, v0.data, field, cfg)
    return exp_map_replay(h, v0, field, res.steps), res.steps
