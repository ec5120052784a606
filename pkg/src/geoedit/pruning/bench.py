"""Wall-clock benchmarking of retained-token attention."""

import time

import numpy as np

from ..autodiff import Rng
from ..errors import ContractError
from .attention import PrunedAttentionLayer
from .tokens import keep_count


def bench_attention(n_tokens=4096, channels=64, rhos=(0.0, 0.1, 0.2, 0.5, 0.9),
                    repeats=20, seed=0):
    """Median forward latency per keep ratio.

    Returns rows {rho, k, median_ms, speedup_vs_dense}; the rho=0 row is the
    dense baseline (speedup 1.0).  The keep sets come from random scores:
    selection cost is identical whatever the scores, so the timing isolates
    the attention itself.
    """
    if repeats < 1:
        raise ContractError("repeats must be >= 1")
    rng = Rng(seed)
    layer = PrunedAttentionLayer(channels, seed=seed)
    t = rng.normal((1, n_tokens, channels))

    def median_ms(keep):
        layer.pruned_tokens(t, keep)  # warm up caches and BLAS dispatch
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            layer.pruned_tokens(t, keep)
            times.append((time.perf_counter() - start) * 1e3)
        return float(np.median(times))

    dense_median = median_ms(np.arange(n_tokens)[None, :])
    rows = []
    for rho in rhos:
        k = keep_count(n_tokens, rho)
        keep = np.sort(rng.choice(n_tokens, size=k, replace=False))[None, :]
        med = dense_median if rho == 0.0 else median_ms(keep)
        rows.append(
            {
                "rho": float(rho),
                "k": k,
                "median_ms": med,
                "speedup_vs_dense": dense_median / med,
            }
        )
    return rows
