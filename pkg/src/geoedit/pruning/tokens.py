"""Token-sequence reshaping and importance-based index selection."""

import warnings

import numpy as np

from ..errors import ContractError, DimensionError
from ..validation import as_float_array


def feature_map_to_tokens(x):
    """[B, C, H, W] -> [B, N, C] with N = H*W, row-major spatial order."""
    x = as_float_array(x, "x")
    if x.ndim != 4:
        raise DimensionError(f"expected [B, C, H, W], got shape {x.shape}")
    b, c, h, w = x.shape
    return np.ascontiguousarray(x.reshape(b, c, h * w).transpose(0, 2, 1))


def tokens_to_feature_map(t, h, w):
    """Inverse of :func:`feature_map_to_tokens`; exact round trip."""
    t = as_float_array(t, "t")
    if t.ndim != 3 or t.shape[1] != h * w:
        raise DimensionError(
            f"expected [B, {h * w}, C] for a {h}x{w} map, got shape {t.shape}"
        )
    b, n, c = t.shape
    return np.ascontiguousarray(t.transpose(0, 2, 1).reshape(b, c, h, w))


def keep_count(n_tokens, rho):
    """k = floor(N * (1 - rho)), clamped to at least one retained token."""
    if not 0.0 <= rho < 1.0:
        raise ContractError(f"rho must be in [0, 1), got {rho}")
    k = int(np.floor(n_tokens * (1.0 - rho)))
    if k < 1:
        warnings.warn(
            f"rho={rho} would retain zero of {n_tokens} tokens; clamping k to 1",
            stacklevel=3,
        )
        return 1
    return k


def select_topk(scores, rho):
    """Indices of the k highest-scoring tokens per sample, ascending.

    Ties keep the lower index (stable ordering), so selection is fully
    deterministic.
    """
    scores = as_float_array(scores, "scores")
    if scores.ndim != 2:
        raise DimensionError(f"scores must be [B, N], got shape {scores.shape}")
    n = scores.shape[1]
    k = keep_count(n, rho)
    # Stable sort on negated scores: equal scores stay in index order.
    order = np.argsort(-scores, axis=1, kind="stable")
    return np.sort(order[:, :k], axis=1)
