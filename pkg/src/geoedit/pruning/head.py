"""Importance scoring conditioned on the edit direction."""

import numpy as np

from .. import autodiff as ad
from ..autodiff import Module, Rng, uniform_init
from ..errors import DimensionError
from ..validation import as_float_array


class PruningHead(Module):
    """Per-token importance scores in [0, 1].

    The edit direction is projected to channel width and concatenated with
    each token's features; a 2-layer MLP (hidden width 2C, tanh) with a
    sigmoid output scores every token independently, so scores are
    equivariant under token permutation.
    """

    def __init__(self, channels, edit_dim=64, seed=0):
        super().__init__()
        self.channels = channels
        self.edit_dim = edit_dim
        rng = Rng(seed)
        c2 = 2 * channels
        self.proj = self.add_param(
            "proj", uniform_init(rng.child(0), edit_dim, (edit_dim, channels))
        )
        self.w1 = self.add_param("w1", uniform_init(rng.child(1), c2, (c2, c2)))
        self.b1 = self.add_param("b1", np.zeros(c2))
        self.w2 = self.add_param("w2", uniform_init(rng.child(2), c2, (c2, 1)))
        self.b2 = self.add_param("b2", np.zeros(1))

    def _check(self, t, d):
        if t.ndim != 3 or t.shape[2] != self.channels:
            raise DimensionError(
                f"expected [B, N, {self.channels}] tokens, got {t.shape}"
            )
        if d.shape != (self.edit_dim,):
            raise DimensionError(
                f"expected edit direction of shape ({self.edit_dim},), got {d.shape}"
            )

    def score(self, t, d):
        """Numpy scores [B, N] for tokens [B, N, C] and direction [edit_dim]."""
        t = as_float_array(t, "tokens")
        d = as_float_array(d, "d_edit")
        self._check(t, d)
        b, n, c = t.shape
        ctx = d @ self.proj.data
        z = np.concatenate([t, np.broadcast_to(ctx, (b, n, c))], axis=2)
        hid = np.tanh(z @ self.w1.data + self.b1.data)
        logit = (hid @ self.w2.data + self.b2.data)[..., 0]
        return 1.0 / (1.0 + np.exp(-logit))

    def score_tape(self, t, d):
        """Tape twin of :meth:`score`; differentiable w.r.t. parameters and t."""
        b, n, c = t.shape
        d = as_float_array(d, "d_edit")
        self._check(t.data, d)
        ctx = ad.reshape(ad.matmul(ad.constant(d.reshape(1, -1)), self.proj), (c,))
        tiled = ad.add_bias(ad.constant(np.zeros((b, n, c))), ctx, axis=2)
        z = ad.concat([t, tiled], axis=2)
        flat = ad.reshape(z, (b * n, 2 * c))
        hid = ad.tanh(ad.add_bias(ad.matmul(flat, self.w1), self.b1, axis=1))
        logit = ad.add_bias(ad.matmul(hid, self.w2), self.b2, axis=1)
        return ad.reshape(ad.sigmoid(logit), (b, n))


def score_tokens(t, d, head):
    """Functional wrapper over :meth:`PruningHead.score`."""
    return head.score(t, d)
