"""Analytic-manifold verification suite.

Runs the integrator against closed-form geodesics and structural properties
of the learned field; each check yields a row suitable for CSV reporting:
(manifold, test, max_error, accepted_steps, passed).
"""

from dataclasses import dataclass

import numpy as np

from ..autodiff import Rng
from .christoffel import ChristoffelModel
from .dopri5 import SolverConfig, rk4_fixed
from .expmap import arc_length, exp_map, integrate_geodesic, _rhs
from .manifolds import analytic_field


@dataclass
class SelftestRow:
    manifold: str
    test: str
    max_error: float
    accepted_steps: int
    passed: bool


def run_selftest(seed=0):
    rows = []
    cfg = SolverConfig()
    rng = Rng(seed)

    # Flat field: geodesics are straight lines, endpoint h + v.
    flat = analytic_field("flat")
    worst = 0.0
    steps_seen = 0
    for _ in range(5):
        h = rng.normal(4) * 2.0
        v = rng.normal(4)
        v *= 10.0 / max(np.linalg.norm(v), 1e-12)
        res = integrate_geodesic(h, v, flat, cfg)
        worst = max(worst, float(np.linalg.norm(res.gamma - (h + v))))
        steps_seen = res.accepted_steps
    rows.append(SelftestRow("flat", "straight-line endpoint", worst, steps_seen, worst < 1e-9))

    # Stationary geodesic: zero velocity must return the start exactly.
    h = rng.normal(4)
    res = integrate_geodesic(h, np.zeros(4), flat, cfg)
    err = float(np.max(np.abs(res.gamma - h)))
    rows.append(SelftestRow("flat", "zero-velocity fixed point", err, res.accepted_steps, err == 0.0))

    # Sphere chart: equator great circle keeps theta = pi/2, advances phi.
    sphere = analytic_field("sphere2-chart")
    start = np.array([np.pi / 2.0, 0.0])
    res = integrate_geodesic(start, np.array([0.0, np.pi / 2.0]), sphere, cfg)
    err = float(np.linalg.norm(res.gamma - np.array([np.pi / 2.0, np.pi / 2.0])))
    rows.append(SelftestRow("sphere2-chart", "equator quarter turn", err, res.accepted_steps, err < 1e-6))

    # Sphere chart, tilted start: adaptive endpoint vs dense fixed-step RK4.
    # Default config is held to 10x its local tolerance; a tight config must
    # reach the oracle to 1e-6.
    y0 = np.array([np.pi / 3.0, 0.0, 0.2, 0.7])
    oracle = rk4_fixed(_rhs(sphere), y0, 100_000)
    res = integrate_geodesic(y0[:2], y0[2:], sphere, cfg)
    err = float(np.linalg.norm(np.concatenate([res.gamma, res.velocity]) - oracle))
    rows.append(
        SelftestRow(
            "sphere2-chart", "tilted start vs dense RK4 (default tol)", err,
            res.accepted_steps, err < 10.0 * (cfg.atol + cfg.rtol),
        )
    )
    tight = SolverConfig(rtol=1e-7, atol=1e-9)
    res = integrate_geodesic(y0[:2], y0[2:], sphere, tight)
    err = float(np.linalg.norm(np.concatenate([res.gamma, res.velocity]) - oracle))
    rows.append(
        SelftestRow(
            "sphere2-chart", "tilted start vs dense RK4 (tight tol)", err,
            res.accepted_steps, err < 1e-6,
        )
    )

    # Meridian geodesic: pure theta motion, constant chart velocity.
    res = integrate_geodesic(
        np.array([np.pi / 2.0, 0.0]), np.array([np.pi / 4.0, 0.0]), sphere, cfg
    )
    err = float(np.linalg.norm(res.gamma - np.array([3.0 * np.pi / 4.0, 0.0])))
    rows.append(SelftestRow("sphere2-chart", "meridian half-quarter turn", err, res.accepted_steps, err < 1e-6))

    # Poincare disk: from the origin, exp((c, 0)) = (tanh c, 0).
    disk = analytic_field("poincare-disk")
    c = 0.8
    res = integrate_geodesic(np.zeros(2), np.array([c, 0.0]), disk, SolverConfig(rtol=1e-7, atol=1e-9))
    err = float(np.linalg.norm(res.gamma - np.array([np.tanh(c), 0.0])))
    rows.append(SelftestRow("poincare-disk", "radial closed form", err, res.accepted_steps, err < 1e-6))

    # Poincare disk vs dense RK4 on a bent trajectory (default tolerances).
    y0 = np.array([0.1, -0.2, 0.4, 0.3])
    res = integrate_geodesic(y0[:2], y0[2:], disk, cfg)
    oracle = rk4_fixed(_rhs(disk), y0, 100_000)
    err = float(np.linalg.norm(np.concatenate([res.gamma, res.velocity]) - oracle))
    rows.append(
        SelftestRow(
            "poincare-disk", "bent start vs dense RK4", err,
            res.accepted_steps, err < 10.0 * (cfg.atol + cfg.rtol),
        )
    )

    # Learned field: quadratic homogeneity a(gamma, c v) = c^2 a(gamma, v).
    model = ChristoffelModel(dim=3, t_dim=2, rank=2, hidden=4, seed=seed)
    r2 = Rng(seed + 1)
    for name, p in model.parameters():
        if name in ("w2", "b2"):
            p.data = r2.normal(p.shape) * 0.3
            p.data.setflags(write=False)
    t_emb = r2.normal(2)
    worst = 0.0
    for _ in range(200):
        gamma = r2.normal(3)
        v = r2.normal(3)
        cscale = float(r2.uniform(-3.0, 3.0))
        a1 = model.accel(gamma, cscale * v, t_emb)
        a2 = cscale * cscale * model.accel(gamma, v, t_emb)
        denom = max(float(np.max(np.abs(a2))), 1e-12)
        worst = max(worst, float(np.max(np.abs(a1 - a2))) / denom)
    rows.append(SelftestRow("learned", "velocity homogeneity", worst, 0, worst < 1e-10))

    # Step-count monotonicity: tighter rtol never takes fewer accepted steps.
    counts = []
    for rtol in (1e-4, 1e-5, 1e-6):
        c2 = SolverConfig(rtol=rtol, atol=1e-8)
        counts.append(integrate_geodesic(y0[:2], y0[2:], sphere, c2).accepted_steps)
    mono = all(b >= a for a, b in zip(counts, counts[1:]))
    rows.append(SelftestRow("sphere2-chart", "step-count monotone in rtol", 0.0, counts[-1], mono))

    # Displacement bounded by trajectory arc length.
    res = integrate_geodesic(y0[:2], y0[2:], sphere, cfg, record_trajectory=True)
    disp = float(np.linalg.norm(res.gamma - y0[:2]))
    arc = float(arc_length(res.trajectory))
    rows.append(
        SelftestRow("sphere2-chart", "displacement <= arc length", max(0.0, disp - arc), res.accepted_steps, disp <= arc + 1e-9)
    )
    return rows
