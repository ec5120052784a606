"""Synthetic labeled shape images: the editable toy domain.

Images are 32x32 single-channel in [-1, 1]: a disc or square of uniform
brightness on a near-black background.  Brightness (in [0, 1]) is the
editable attribute; every sample carries its labels so probes and mock
captions never have to re-detect what the generator already knows.
"""

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Rng
from ..errors import ConfigError

IMAGE_SIZE = 32


def render_shape(shape: str, cy: float, cx: float, radius: float, brightness: float,
                 size: int = IMAGE_SIZE) -> np.ndarray:
    """One [-1, 1] image; `radius` is the half-side for squares."""
    if shape not in ("disc", "square"):
        raise ConfigError(f"shape must be 'disc' or 'square', got {shape!r}")
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    if shape == "disc":
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    else:
        mask = (np.abs(yy - cy) <= radius) & (np.abs(xx - cx) <= radius)
    img = np.full((size, size), -1.0)
    img[mask] = 2.0 * brightness - 1.0
    return img


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # (1, 32, 32)
    labels: dict = field(repr=False)

    @property
    def mask(self) -> np.ndarray:
        """Foreground mask re-rendered from the labels (exact)."""
        lab = self.labels
        return render_shape(lab["shape"], lab["cy"], lab["cx"], lab["radius"], 1.0) > 0


class SyntheticDataset:
    """Deterministic generator of labeled shape samples.

    Two datasets with the same seed are identical sample-for-sample; the
    conventional split is seed per split (train/held-out).
    """

    def __init__(self, n: int, seed: int, brightness_range=(0.3, 1.0),
                 radius_range=(3.0, 11.0), noise: float = 0.0):
        if n < 1:
            raise ConfigError(f"dataset size must be >= 1, got {n}")
        self.n = n
        self.seed = seed
        rng = Rng(seed)
        self.samples = []
        for _ in range(n):
            labels = self._draw_labels(rng, brightness_range, radius_range)
            img = render_shape(labels["shape"], labels["cy"], labels["cx"],
                               labels["radius"], labels["brightness"])
            if noise:
                img = np.clip(img + noise * rng.normal(img.shape), -1.0, 1.0)
            self.samples.append(Sample(image=img[None], labels=labels))

    @staticmethod
    def _draw_labels(rng, brightness_range, radius_range):
        radius = rng.uniform(*radius_range)
        margin = radius + 1.0
        return {
            "shape": "disc" if rng.uniform(0.0, 1.0) < 0.5 else "square",
            "cy": rng.uniform(margin, IMAGE_SIZE - 1 - margin),
            "cx": rng.uniform(margin, IMAGE_SIZE - 1 - margin),
            "radius": radius,
            "brightness": rng.uniform(*brightness_range),
        }

    def __len__(self):
        return self.n

    def __getitem__(self, i) -> Sample:
        return self.samples[i]

    def images(self) -> np.ndarray:
        """All images stacked to (n, 1, 32, 32)."""
        return np.stack([s.image for s in self.samples])


def paired_brightness_dataset(n_pairs: int, seed: int, low=(0.3, 0.55), high=(0.75, 1.0)):
    """(low, high) brightness pairs sharing geometry; the edit supervision set."""
    if n_pairs < 1:
        raise ConfigError(f"need at least one pair, got {n_pairs}")
    rng = Rng(seed)
    pairs = []
    for _ in range(n_pairs):
        labels = SyntheticDataset._draw_labels(rng, (0.0, 1.0), (3.0, 11.0))
        b_low = rng.uniform(*low)
        b_high = rng.uniform(*high)
        lo = dict(labels, brightness=b_low)
        hi = dict(labels, brightness=b_high)
        img_lo = render_shape(lo["shape"], lo["cy"], lo["cx"], lo["radius"], b_low)
        img_hi = render_shape(hi["shape"], hi["cy"], hi["cx"], hi["radius"], b_high)
        pairs.append((Sample(image=img_lo[None], labels=lo), Sample(image=img_hi[None], labels=hi)))
    return pairs
