"""Single-head self-attention with retained-token evaluation.

Three equivalent routes exist on purpose and the tests pin them together:

* ``dense_forward``: numpy reference over all tokens.
* ``pruned_forward``: numpy inference path that projects and attends only
  the retained rows.  Because the projections are row-wise linear and
  bias-free, projecting after gathering equals gathering after projecting,
  and positions outside the keep set pass through bit-exactly.
* tape paths (``dense_forward_tape``, ``soft_gated_forward_tape``) used for
  training the surrounding network and the importance head.
"""

import numpy as np

from .. import autodiff as ad
from ..autodiff import Module, Rng, uniform_init
from ..errors import ContractError, DimensionError
from .tokens import feature_map_to_tokens, tokens_to_feature_map


def _softmax_rows(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class PrunedAttentionLayer(Module):
    """Square Q/K/V/O projections, one head, no biases.

    A bias anywhere in the value/output path would leak into positions whose
    rows were scattered as zeros, breaking the pruned-position identity.
    """

    def __init__(self, channels, seed=0):
        super().__init__()
        self.channels = channels
        rng = Rng(seed)
        shape = (channels, channels)
        self.w_q = self.add_param("w_q", uniform_init(rng.child(0), channels, shape))
        self.w_k = self.add_param("w_k", uniform_init(rng.child(1), channels, shape))
        self.w_v = self.add_param("w_v", uniform_init(rng.child(2), channels, shape))
        self.w_o = self.add_param("w_o", uniform_init(rng.child(3), channels, shape))

    def _check_tokens(self, t):
        if t.ndim != 3 or t.shape[2] != self.channels:
            raise DimensionError(
                f"expected [B, N, {self.channels}] tokens, got shape {t.shape}"
            )

    # ------------------------------------------------------------------
    # numpy inference paths
    # ------------------------------------------------------------------

    def dense_tokens(self, t):
        """Reference attention over every token; returns t + W_o(attn)."""
        self._check_tokens(t)
        q = t @ self.w_q.data
        k = t @ self.w_k.data
        v = t @ self.w_v.data
        a = _softmax_rows(q @ k.transpose(0, 2, 1) / np.sqrt(self.channels)) @ v
        return t + a @ self.w_o.data

    def pruned_tokens(self, t, keep):
        """Attention over the keep-set only; other rows pass through untouched."""
        self._check_tokens(t)
        keep = np.asarray(keep, dtype=np.int64)
        b, n, _ = t.shape
        if keep.ndim != 2 or keep.shape[0] != b:
            raise DimensionError(f"keep must be [B, k], got shape {keep.shape}")
        if keep.size and (keep.min() < 0 or keep.max() >= n):
            raise ContractError(
                f"keep indices out of range [0, {n}): min {keep.min()}, max {keep.max()}"
            )
        rows = np.take_along_axis(t, keep[:, :, None], axis=1)
        q = rows @ self.w_q.data
        k = rows @ self.w_k.data
        v = rows @ self.w_v.data
        a = _softmax_rows(q @ k.transpose(0, 2, 1) / np.sqrt(self.channels)) @ v
        out = t.copy()
        batch_idx = np.arange(b)[:, None]
        out[batch_idx, keep] = out[batch_idx, keep] + a @ self.w_o.data
        return out

    def dense_forward(self, x):
        """[B, C, H, W] in and out, every token attended."""
        h, w = x.shape[2], x.shape[3]
        return tokens_to_feature_map(self.dense_tokens(feature_map_to_tokens(x)), h, w)

    def pruned_forward(self, x, keep):
        """[B, C, H, W] in and out, attention restricted to ``keep``."""
        h, w = x.shape[2], x.shape[3]
        return tokens_to_feature_map(
            self.pruned_tokens(feature_map_to_tokens(x), keep), h, w
        )

    # ------------------------------------------------------------------
    # tape paths
    # ------------------------------------------------------------------

    def dense_tokens_tape(self, t):
        """Tape twin of :meth:`dense_tokens` for [B, N, C] Tensors."""
        q = ad.matmul(t, self.w_q)
        k = ad.matmul(t, self.w_k)
        v = ad.matmul(t, self.w_v)
        logits = ad.scale(
            ad.matmul(q, ad.permute(k, (0, 2, 1))), 1.0 / np.sqrt(self.channels)
        )
        a = ad.matmul(ad.softmax_rows(logits), v)
        return ad.add(t, ad.matmul(a, self.w_o))

    def soft_gated_tokens_tape(self, t, s):
        """Value rows gated by scores s in [0,1]; the differentiable
        training surrogate for hard pruning."""
        q = ad.matmul(t, self.w_q)
        k = ad.matmul(t, self.w_k)
        v = ad.scale_tokens(ad.matmul(t, self.w_v), s)
        logits = ad.scale(
            ad.matmul(q, ad.permute(k, (0, 2, 1))), 1.0 / np.sqrt(self.channels)
        )
        a = ad.matmul(ad.softmax_rows(logits), v)
        return ad.add(t, ad.matmul(a, self.w_o))
