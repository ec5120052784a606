"""Two-stage spherical blending of latent vectors.

The inner stage interpolates bottleneck features along the great-circle arc
(edit strength ``alpha_inner``); the outer stage re-mixes a prediction with
the component of a second prediction orthogonal to it, again on the sphere
(fidelity knob ``alpha_outer``).  Batched inputs are flattened per sample:
for arrays with more than one axis, axis 0 is the batch and each sample is
treated as one long vector, reshaped back on return.

All functions are pure and operate on float64 numpy arrays.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegeneratePairError, DimensionError
from .validation import as_float_array, check_in_range, check_same_shape

DEFAULT_PARALLEL_THRESHOLD = 1e-6


@dataclass(frozen=True)
class BlendParams:
    """Knobs for the two blending stages."""

    alpha_inner: float = 1.0
    alpha_outer: float = 0.6
    parallel_threshold: float = DEFAULT_PARALLEL_THRESHOLD

    def __post_init__(self):
        check_in_range(self.alpha_inner, 0.0, 1.0, "alpha_inner")
        check_in_range(self.alpha_outer, 0.0, 1.0, "alpha_outer")
        if not 0.0 < self.parallel_threshold < 0.1:
            raise ContractError(
                f"parallel_threshold must be in (0, 0.1), got {self.parallel_threshold}"
            )


def _angle(a, b, norm_a, norm_b):
    # Kahan's formula: accurate near 0 and near pi, unlike arccos of the dot.
    u = norm_b * a
    v = norm_a * b
    return 2.0 * np.arctan2(np.linalg.norm(u - v), np.linalg.norm(u + v))


def slerp(a, b, t, parallel_threshold=DEFAULT_PARALLEL_THRESHOLD):
    """Great-circle interpolation between two nonzero vectors.

    Angles below ``parallel_threshold`` fall back to linear interpolation
    rescaled to the linearly interpolated norm (the two branches agree to
    O(angle^2) at the switch).  Angles within the threshold of pi are
    rejected: the great circle is not unique there.
    """
    a = as_float_array(a, "a")
    b = as_float_array(b, "b")
    check_same_shape(a, b, "a", "b")
    if a.ndim != 1:
        raise DimensionError(f"slerp expects 1-D vectors, got shape {a.shape}")
    check_in_range(t, 0.0, 1.0, "t")
    t = float(t)
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ContractError("slerp endpoints must have nonzero norm")
    # Exact endpoints regardless of branch.
    if t == 0.0:
        return a.copy()
    if t == 1.0:
        return b.copy()
    theta = _angle(a, b, norm_a, norm_b)
    if theta > np.pi - parallel_threshold:
        raise DegeneratePairError(
            f"slerp endpoints are antipodal within threshold (angle {theta:.3e} rad)"
        )
    if theta < parallel_threshold:
        mixed = (1.0 - t) * a + t * b
        target_norm = (1.0 - t) * norm_a + t * norm_b
        mixed_norm = float(np.linalg.norm(mixed))
        if mixed_norm == 0.0:
            return mixed
        return mixed * (target_norm / mixed_norm)
    s = np.sin(theta)
    return (np.sin((1.0 - t) * theta) / s) * a + (np.sin(t * theta) / s) * b


def _per_sample(fn, *arrays):
    # Apply a vector function to per-sample flattened views of equal-shape arrays.
    shape = arrays[0].shape
    if arrays[0].ndim == 1:
        return fn(*arrays)
    flat = [x.reshape(x.shape[0], -1) for x in arrays]
    out = np.stack([fn(*(f[i] for f in flat)) for i in range(shape[0])])
    return out.reshape(shape)


def inner_blend(h, h_geo, alpha_inner, parallel_threshold=DEFAULT_PARALLEL_THRESHOLD):
    """Spherical interpolation of feature maps, per sample, by ``alpha_inner``."""
    h = as_float_array(h, "h")
    h_geo = as_float_array(h_geo, "h_geo")
    check_same_shape(h, h_geo, "h", "h_geo")
    check_in_range(alpha_inner, 0.0, 1.0, "alpha_inner")
    return _per_sample(
        lambda x, y: slerp(x, y, alpha_inner, parallel_threshold), h, h_geo
    )


def orthogonal_component(x_sem, x_fid):
    """The part of x_sem orthogonal to x_fid (per sample for batched input)."""
    x_sem = as_float_array(x_sem, "x_sem")
    x_fid = as_float_array(x_fid, "x_fid")
    check_same_shape(x_sem, x_fid, "x_sem", "x_fid")

    def one(sem, fid):
        denom = float(fid @ fid)
        if denom == 0.0:
            raise ContractError("orthogonal_component requires nonzero x_fid")
        return sem - (float(sem @ fid) / denom) * fid

    return _per_sample(one, x_sem, x_fid)


def outer_blend(x_fid, o, alpha_outer, parallel_threshold=DEFAULT_PARALLEL_THRESHOLD):
    """Blend a prediction with an orthogonal direction on the sphere of ‖x_fid‖.

    The direction ``o`` is rescaled to the norm of ``x_fid`` before the
    spherical interpolation, so the output norm matches ‖x_fid‖.  A zero
    ``o`` means no semantic deviation: x_fid is returned unchanged.
    """
    x_fid = as_float_array(x_fid, "x_fid")
    o = as_float_array(o, "o")
    check_same_shape(x_fid, o, "x_fid", "o")
    check_in_range(alpha_outer, 0.0, 1.0, "alpha_outer")

    def one(fid, oo):
        fid_norm = float(np.linalg.norm(fid))
        if fid_norm == 0.0:
            raise ContractError("outer_blend requires nonzero x_fid")
        o_norm = float(np.linalg.norm(oo))
        if o_norm == 0.0:
            return fid.copy()
        o_hat = oo * (fid_norm / o_norm)
        return slerp(fid, o_hat, alpha_outer, parallel_threshold)

    return _per_sample(one, x_fid, o)
