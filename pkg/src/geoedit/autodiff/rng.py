"""Deterministic random streams.

Built on numpy's Philox counter-based bit generator, whose output is fixed by
the numpy random-stream compatibility policy: the same (seed, spawn path)
yields identical draws on every platform and process.  Substreams come from
``SeedSequence.spawn`` so independent components never share state.
"""

import numpy as np


class Rng:
    """A named deterministic stream with hierarchical child streams."""

    def __init__(self, seed, _seq=None):
        self._seq = _seq if _seq is not None else np.random.SeedSequence(int(seed))
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def child(self, index):
        """An independent substream; the same index always yields the same stream."""
        index = int(index)
        seq = np.random.SeedSequence(
            entropy=self._seq.entropy,
            spawn_key=tuple(self._seq.spawn_key) + (index,),
        )
        return Rng(0, _seq=seq)

    def uniform(self, low, high, shape=None, dtype=np.float64):
        out = self._gen.uniform(low, high, size=shape)
        return float(out) if shape is None else out.astype(dtype, copy=False)

    def normal(self, shape=None, dtype=np.float64):
        out = self._gen.standard_normal(size=shape)
        return float(out) if shape is None else out.astype(dtype, copy=False)

    def integers(self, low, high, shape=None):
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)
