"""Caption enrichment and deterministic text embeddings."""

from .embedder import TextEmbedder, edit_direction, embed_text
from .providers import (
    BRIGHT_THRESHOLD,
    SMALL_RADIUS_MAX,
    TOKEN_ENV_VAR,
    Caption,
    CaptionRequest,
    ProviderConfig,
    brightness_word,
    enrich,
    enrich_or_fallback,
    mock_caption,
    size_word,
)

__all__ = [
    "BRIGHT_THRESHOLD",
    "SMALL_RADIUS_MAX",
    "TOKEN_ENV_VAR",
    "Caption",
    "CaptionRequest",
    "ProviderConfig",
    "TextEmbedder",
    "brightness_word",
    "edit_direction",
    "embed_text",
    "enrich",
    "enrich_or_fallback",
    "mock_caption",
    "size_word",
]
