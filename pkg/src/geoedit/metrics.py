"""Image similarity metrics: MAE and windowed SSIM.

SSIM runs over non-overlapping square windows rather than the Gaussian
sliding window of the original formulation; at 32x32 the sliding variant
adds cost and platform-dependent filter edge handling without changing any
ordering this pipeline asserts.  Constants follow the usual convention
C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L the value range (2 for [-1, 1]).
"""

import numpy as np

from .errors import ContractError, DimensionError


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mae(a, b) -> float:
    """Mean absolute difference over all pixels."""
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def ssim(a, b, window: int = 8, value_range: float = 2.0) -> float:
    """Mean SSIM over non-overlapping `window` x `window` tiles.

    Trailing rows/columns that do not fill a tile are dropped, so image
    sides must be at least `window`.
    """
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ContractError(f"expected 2-D images, got shape {a.shape}")
    h, w = a.shape
    if h < window or w < window:
        raise ContractError(f"image {h}x{w} smaller than SSIM window {window}")
    c1 = (0.01 * value_range) ** 2
    c2 = (0.03 * value_range) ** 2
    th, tw = h // window, w // window
    # (tiles_y, tiles_x, window, window) view via reshape of the cropped image
    ta = a[: th * window, : tw * window].reshape(th, window, tw, window).transpose(0, 2, 1, 3)
    tb = b[: th * window, : tw * window].reshape(th, window, tw, window).transpose(0, 2, 1, 3)
    mu_a = ta.mean(axis=(2, 3))
    mu_b = tb.mean(axis=(2, 3))
    var_a = ta.var(axis=(2, 3))
    var_b = tb.var(axis=(2, 3))
    cov = ((ta - mu_a[..., None, None]) * (tb - mu_b[..., None, None])).mean(axis=(2, 3))
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())
