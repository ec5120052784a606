"""Deterministic hashed n-gram text embedding and edit directions.

The embedder stands in for a pretrained text encoder: it maps any string
to a unit vector in R^64 via salted blake2b hashes of its word unigrams
and bigrams.  blake2b rather than Python's ``hash``: the builtin is
randomized per process, and the whole point here is that the same caption
embeds identically across runs and platforms.
"""

import hashlib

import numpy as np

from ..errors import ContractError, DegenerateEditError

_SALT = b"geoedit-text-v1"


class TextEmbedder:
    """Hashed 1-/2-gram embedding into R^dim, case-folded, L2-normalized."""

    def __init__(self, dim: int = 64):
        if dim < 2:
            raise ContractError(f"embedding dim must be >= 2, got {dim}")
        self.dim = dim

    def _grams(self, text: str):
        tokens = text.casefold().split()
        if not tokens:
            raise ContractError("cannot embed an empty or whitespace-only string")
        yield from tokens
        for a, b in zip(tokens, tokens[1:]):
            yield f"{a} {b}"

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for gram in self._grams(text):
            digest = hashlib.blake2b(gram.encode("utf-8"), key=_SALT, digest_size=8).digest()
            h = int.from_bytes(digest, "little")
            sign = 1.0 if h & 1 else -1.0
            vec[(h >> 1) % self.dim] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # only reachable if every gram cancels; treat as no signal
            raise ContractError(f"text embeds to the zero vector: {text!r}")
        return vec / norm


def embed_text(text: str, dim: int = 64) -> np.ndarray:
    return TextEmbedder(dim).embed(text)


def edit_direction(source_text: str, target_text: str, embedder: TextEmbedder | None = None):
    """Unit vector from the source caption toward the target caption."""
    emb = embedder if embedder is not None else TextEmbedder()
    diff = emb.embed(target_text) - emb.embed(source_text)
    norm = np.linalg.norm(diff)
    if norm < 1e-12:
        raise DegenerateEditError(
            f"source and target embed to the same point, no edit direction: {source_text!r}"
        )
    return diff / norm
