"""Dormand-Prince 5(4) adaptive integration on [0, 1].

The embedded pair uses the standard coefficients; the fifth-order solution
propagates and the difference against the fourth-order solution drives step
control (scipy-style mixed tolerance, RMS norm).  The last stage equals the
next step's first stage (FSAL), saving one field evaluation per step.

Accepted step sizes are recorded so a training pass can replay the exact
discretization on the autodiff tape (see :func:`replay_steps`), giving
gradients of precisely the computed trajectory.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .. import autodiff as ad
from ..errors import ContractError, SolverDivergenceError, StepBudgetError

# Butcher tableau (c nodes, stage coefficient rows, 5th-order weights,
# and the 5th-minus-4th error weights).
_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
_B5 = (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0)
_ERR = (
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)

_ORDER = 5
_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


@dataclass(frozen=True)
class SolverConfig:
    """Adaptive-step controls; integration span is fixed to [0, 1]."""

    rtol: float = 1e-5
    atol: float = 1e-6
    initial_step: float = 0.05
    min_step: float = 1e-8
    max_steps: int = 1000

    def __post_init__(self):
        if not (self.rtol > 0.0 and self.atol > 0.0):
            raise ContractError("rtol and atol must be positive")
        if not 0.0 < self.min_step < self.initial_step <= 1.0:
            raise ContractError(
                f"need 0 < min_step < initial_step <= 1, got "
                f"min_step={self.min_step}, initial_step={self.initial_step}"
            )
        if self.max_steps < 1:
            raise ContractError("max_steps must be at least 1")


@dataclass
class IntegrationResult:
    y_end: np.ndarray
    accepted_steps: int
    steps: list  # [(t, h)] of accepted steps, in order
    trajectory: list | None = dc_field(default=None)


def _rk_step(f, t, y, h, k1):
    """One embedded step; returns (y_new, error_vector, k7)."""
    ks = [k1]
    for i in range(1, 7):
        acc = _A[i][0] * ks[0]
        for j in range(1, i):
            if _A[i][j] != 0.0:
                acc = acc + _A[i][j] * ks[j]
        ks.append(f(t + _C[i] * h, y + h * acc))
    y_new = y
    for i, b in enumerate(_B5):
        if b != 0.0:
            y_new = y_new + (h * b) * ks[i]
    err = np.zeros_like(y)
    for i, e in enumerate(_ERR):
        if e != 0.0:
            err = err + (h * e) * ks[i]
    return y_new, err, ks[6]


def integrate(f, y0, cfg=None, record_trajectory=False):
    """Integrate dy/dt = f(t, y) from t=0 to t=1 with adaptive steps.

    ``y0`` may be any-shaped float array; the error norm pools all
    components, so batched states share one step sequence.
    """
    cfg = cfg or SolverConfig()
    y = np.array(y0, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ContractError("initial state must be finite")
    t = 0.0
    h = min(cfg.initial_step, 1.0)
    k1 = f(t, y)
    steps = []
    trajectory = [(0.0, y.copy())] if record_trajectory else None
    attempts = 0
    while t < 1.0:
        if attempts >= cfg.max_steps:
            raise StepBudgetError(
                f"exceeded {cfg.max_steps} step attempts at t={t:.6g}"
            )
        attempts += 1
        h = min(h, 1.0 - t)  # land exactly on t=1
        if h < cfg.min_step and t + h < 1.0:
            raise SolverDivergenceError(
                f"step size underflow ({h:.3e} < {cfg.min_step:.3e}) at t={t:.6g}",
                last_state=y,
                t=t,
            )
        y_new, err_vec, k7 = _rk_step(f, t, y, h, k1)
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if not np.isfinite(err):
            raise SolverDivergenceError(
                f"non-finite error estimate at t={t:.6g}", last_state=y, t=t
            )
        if err <= 1.0:
            steps.append((t, h))
            t = t + h
            y = y_new
            k1 = k7
            if record_trajectory:
                trajectory.append((t, y.copy()))
            factor = _MAX_FACTOR if err == 0.0 else min(
                _MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * err ** (-1.0 / _ORDER))
            )
        else:
            factor = max(_MIN_FACTOR, _SAFETY * err ** (-1.0 / _ORDER))
        h = h * factor
    return IntegrationResult(y, len(steps), steps, trajectory)


def replay_steps(f_tape, y0, steps):
    """Re-run recorded steps on the autodiff tape.

    ``f_tape(t, y)`` maps a Tensor state to its Tensor derivative; ``steps``
    comes from :func:`integrate`.  Stage arithmetic mirrors the forward pass
    so values match the numpy path and gradients correspond to exactly the
    discretization that produced the output.
    """
    y = y0
    for t, h in steps:
        ks = [f_tape(t, y)]
        for i in range(1, 7):
            acc = ad.scale(ks[0], _A[i][0])
            for j in range(1, i):
                if _A[i][j] != 0.0:
                    acc = ad.add(acc, ad.scale(ks[j], _A[i][j]))
            ks.append(f_tape(t + _C[i] * h, ad.add(y, ad.scale(acc, h))))
        for i, b in enumerate(_B5):
            if b != 0.0:
                y = ad.add(y, ad.scale(ks[i], h * b))
    return y


def rk4_fixed(f, y0, n_steps):
    """Classical fixed-step RK4 on [0, 1]; dense oracle for the adaptive path."""
    y = np.array(y0, dtype=np.float64)
    h = 1.0 / n_steps
    t = 0.0
    for _ in range(n_steps):
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return y
