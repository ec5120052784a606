"""Discrete noise schedule and timestep embeddings.

Indexing convention: timesteps are 1-based (t = 1..T_max) and array index
i holds the value for t = i + 1, so ``alpha_bar[0]`` is alpha-bar at t=1.
``alpha_bar_at`` accepts t = 0 as the identity point (alpha-bar = 1, the
clean image), which is what the DDIM update needs at the final step.
"""

import numpy as np

from ..errors import ConfigError

T_MAX = 1000


class NoiseSchedule:
    """Linear-beta schedule with cached alpha products."""

    def __init__(self, t_max: int = T_MAX, beta_start: float = 1e-4, beta_end: float = 0.02):
        if t_max < 1:
            raise ConfigError(f"t_max must be >= 1, got {t_max}")
        if not 0.0 < beta_start <= beta_end < 1.0:
            raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
        self.t_max = t_max
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.betas = np.linspace(beta_start, beta_end, t_max)
        self.alphas = 1.0 - self.betas
        self.alpha_bar = np.cumprod(self.alphas)
        if not np.all(np.diff(self.alpha_bar) < 0):
            raise ConfigError("alpha_bar must be strictly decreasing")

    def alpha_bar_at(self, t):
        """Alpha-bar at integer timestep(s) t in [0, t_max]; t=0 maps to 1."""
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 0) or np.any(t > self.t_max):
            raise ConfigError(f"timestep out of range [0, {self.t_max}]: {t}")
        out = np.where(t == 0, 1.0, self.alpha_bar[np.maximum(t, 1) - 1])
        return float(out) if out.ndim == 0 else out

    def inversion_ladder(self, t0: int, steps: int):
        """Uniformly spaced integer timesteps 0 = t_0 < ... <= t0.

        Rounding collapses duplicates when steps > t0; the returned ladder
        is strictly increasing with first element 0 and last element t0.
        """
        if not 0 < t0 <= self.t_max:
            raise ConfigError(f"t0 must be in (0, {self.t_max}], got {t0}")
        if steps < 1:
            raise ConfigError(f"steps must be >= 1, got {steps}")
        ladder = np.unique(np.rint(np.linspace(0.0, t0, steps + 1)).astype(np.int64))
        return ladder


def timestep_embedding(t, width: int = 64):
    """Sinusoidal embedding of integer timestep(s) into R^width.

    Frequencies are log-spaced from 1 down to 1/10000, halves sin and cos.
    Accepts a scalar (returns (width,)) or a 1-D array (returns (B, width)).
    """
    if width % 2 != 0 or width < 2:
        raise ConfigError(f"embedding width must be even and >= 2, got {width}")
    t_arr = np.asarray(t, dtype=np.float64)
    scalar = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)
    half = width // 2
    freqs = np.power(10000.0, -np.arange(half) / (half - 1))
    angles = t_arr[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    return emb[0] if scalar else emb
