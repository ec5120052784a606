"""Learned geodesic acceleration field and tangent-space helpers.

The full symbol array for a d-dimensional latent would need d^3 entries, so
the contraction a(gamma, v) = -Gamma(gamma)[v, v] is learned directly as a
rank-R bilinear form in v whose per-rank coefficients depend on position:

    a_k = - sum_r U[k, r] * (B[r] . v) * (C_r(gamma) . v)

C(gamma) comes from a two-layer gated MLP over (gamma, t_emb).  Both factors
are linear in v, so a(gamma, c*v) = c^2 * a(gamma, v) holds exactly by
construction, matching the defining quadratic structure of the geodesic
equation.  Every operation exists twice: a numpy path used by the adaptive
integrator and a tape path used for training; tests pin them together.
"""

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Module, Rng, Tensor, uniform_init
from ..errors import ContractError, DimensionError
from ..validation import as_float_array


@dataclass(frozen=True)
class RetractionConfig:
    """Cap on tangent-vector norm."""

    r_max: float = 1.0

    def __post_init__(self):
        if not self.r_max > 0.0:
            raise ContractError(f"r_max must be positive, got {self.r_max}")


_TANH_CAP = np.nextafter(1.0, 0.0)


def retract(w, cfg=None):
    """Direction-preserving soft norm cap: ||output|| < r_max.

    tanh saturates to 1.0 in float64 around |x| ~ 19, so the factor is
    clamped one ulp below 1 to keep the cap strict for any finite input.
    Accepts a single vector (d,) or a batch (B, d).
    """
    cfg = cfg or RetractionConfig()
    w = as_float_array(w, "w")
    single = w.ndim == 1
    wb = w[None] if single else w
    norms = np.linalg.norm(wb, axis=-1, keepdims=True)
    coeff = np.ones_like(norms)
    nz = norms[:, 0] > 0.0
    t = np.minimum(np.tanh(norms[nz] / cfg.r_max), _TANH_CAP)
    coeff[nz] = cfg.r_max * t / norms[nz]
    out = wb * coeff
    return out[0] if single else out


def retract_tape(w, cfg=None):
    """Tape version of :func:`retract` for (B, d) Tensors.

    Uses a smooth norm (tiny additive floor under the square root), which
    agrees with the numpy path to ~1e-12 away from the origin and keeps the
    gradient finite at it.
    """
    cfg = cfg or RetractionConfig()
    b, d = w.shape
    norm2 = ad.matmul(ad.reshape(w, (b, 1, d)), ad.reshape(w, (b, d, 1)))
    norm = ad.tsqrt(ad.add(ad.reshape(norm2, (b, 1)), ad.constant(np.full((b, 1), 1e-24))))
    coeff = ad.mul(
        ad.scale(ad.tanh(ad.scale(norm, 1.0 / cfg.r_max)), cfg.r_max),
        ad.reciprocal(norm),
    )
    gated = ad.scale_tokens(ad.reshape(w, (b, 1, d)), coeff)
    return ad.reshape(gated, (b, d))


class PointInit(Module):
    """Chart-point initialization: gamma_0 = h + W_t . t_emb.

    W_t starts at zero, so an untrained model maps h to itself.
    """

    def __init__(self, dim, t_dim):
        super().__init__()
        self.dim = dim
        self.t_dim = t_dim
        self.w_t = self.add_param("w_t", np.zeros((t_dim, dim)))

    def init_point(self, h, t_emb):
        h = as_float_array(h, "h")
        t_emb = as_float_array(t_emb, "t_emb")
        if h.shape[-1] != self.dim or t_emb.shape[-1] != self.t_dim:
            raise DimensionError(
                f"init_point: expected (..., {self.dim}) and (..., {self.t_dim}), "
                f"got {h.shape} and {t_emb.shape}"
            )
        return h + t_emb @ self.w_t.data

    def init_point_tape(self, h, t_emb):
        return ad.add(h, ad.matmul(t_emb, self.w_t))


class ChristoffelModel(Module):
    """Position-conditioned low-rank contraction field."""

    def __init__(self, dim, t_dim, rank=8, hidden=32, seed=0):
        super().__init__()
        if dim < 1 or t_dim < 0 or rank < 1 or hidden < 1:
            raise ContractError("dim, rank, hidden must be >= 1; t_dim >= 0")
        self.dim = dim
        self.t_dim = t_dim
        self.rank = rank
        self.hidden = hidden
        rng = Rng(seed)
        z_dim = dim + t_dim
        self.u = self.add_param("u", uniform_init(rng.child(0), rank, (dim, rank)))
        self.b = self.add_param("b", uniform_init(rng.child(1), dim, (rank, dim)))
        self.w1 = self.add_param("w1", uniform_init(rng.child(2), z_dim, (z_dim, hidden)))
        self.b1 = self.add_param("b1", np.zeros(hidden))
        self.g1 = self.add_param("g1", uniform_init(rng.child(3), z_dim, (z_dim, hidden)))
        self.c1 = self.add_param("c1", np.zeros(hidden))
        # Zero-initialized head: the untrained field is exactly flat.
        self.w2 = self.add_param("w2", np.zeros((hidden, rank * dim)))
        self.b2 = self.add_param("b2", np.zeros(rank * dim))

    def _check(self, gamma, v, t_emb):
        if gamma.shape != v.shape or gamma.shape[-1] != self.dim:
            raise DimensionError(
                f"accel: gamma {gamma.shape} / v {v.shape} incompatible with dim {self.dim}"
            )
        if t_emb.shape[-1] != self.t_dim:
            raise DimensionError(
                f"accel: t_emb {t_emb.shape} incompatible with t_dim {self.t_dim}"
            )

    def coeffs(self, gamma, t_emb):
        """C(gamma) with shape (B, rank, dim); numpy path."""
        z = np.concatenate([gamma, np.broadcast_to(t_emb, gamma.shape[:-1] + (self.t_dim,))], axis=-1)
        hid = np.tanh(z @ self.w1.data + self.b1.data)
        gate = 1.0 / (1.0 + np.exp(-(z @ self.g1.data + self.c1.data)))
        c = (hid * gate) @ self.w2.data + self.b2.data
        return c.reshape(gamma.shape[:-1] + (self.rank, self.dim))

    def accel(self, gamma, v, t_emb):
        """Acceleration for (B, d) or (d,) arrays; numpy path."""
        gamma = as_float_array(gamma, "gamma")
        v = as_float_array(v, "v")
        t_emb = as_float_array(t_emb, "t_emb")
        self._check(gamma, v, t_emb)
        single = gamma.ndim == 1
        if single:
            gamma, v = gamma[None], v[None]
        c = self.coeffs(gamma, t_emb)
        bv = v @ self.b.data.T
        cv = np.einsum("brd,bd->br", c, v, optimize=True)
        a = -(bv * cv) @ self.u.data.T
        return a[0] if single else a

    def accel_tape(self, gamma, v, t_emb):
        """Acceleration for (B, d) Tensors; training path."""
        bsz = gamma.shape[0]
        t_tile = ad.constant(np.broadcast_to(np.asarray(t_emb, dtype=np.float64), (bsz, self.t_dim)).copy())
        z = ad.concat([gamma, t_tile], axis=1)
        hid = ad.tanh(ad.add_bias(ad.matmul(z, self.w1), self.b1, axis=1))
        gate = ad.sigmoid(ad.add_bias(ad.matmul(z, self.g1), self.c1, axis=1))
        c = ad.add_bias(ad.matmul(ad.mul(hid, gate), self.w2), self.b2, axis=1)
        c3 = ad.reshape(c, (bsz, self.rank, self.dim))
        bv = ad.matmul(v, ad.permute(self.b, (1, 0)))
        cv = ad.reshape(ad.matmul(c3, ad.reshape(v, (bsz, self.dim, 1))), (bsz, self.rank))
        a = ad.matmul(ad.mul(bv, cv), ad.permute(self.u, (1, 0)))
        return ad.scale(a, -1.0)

    def bind(self, t_emb):
        """A field with the timestep context fixed: exposes accel(gamma, v)."""
        return BoundField(self, np.asarray(t_emb, dtype=np.float64))


class BoundField:
    """A ChristoffelModel with its timestep embedding baked in."""

    def __init__(self, model, t_emb):
        self.model = model
        self.t_emb = t_emb

    def accel(self, gamma, v):
        return self.model.accel(gamma, v, self.t_emb)

    def accel_tape(self, gamma, v):
        return self.model.accel_tape(gamma, v, self.t_emb)
