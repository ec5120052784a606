"""Caption providers: an offline mock and an OpenAI-compatible HTTP client.

The mock builds a template caption from the sample's attribute labels (or
from simple pixel statistics when no labels travel with the image), so the
whole pipeline runs deterministically with no network.  The HTTP backend
posts one chat-completion request with the image attached as a base64 PGM
data URL; the auth token is read from an environment variable so configs
never embed secrets.
"""

import base64
import os
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from ..errors import ConfigError, ContractError, ProviderError
from ..imageio import encode_pgm

TOKEN_ENV_VAR = "GEOEDIT_CAPTION_TOKEN"

# attribute-word thresholds shared with the synthetic dataset's labels
BRIGHT_THRESHOLD = 0.7
SMALL_RADIUS_MAX = 7.0


@dataclass(frozen=True)
class CaptionRequest:
    image: np.ndarray
    instruction: str
    labels: dict | None = None  # known synthetic attributes, if any

    def __post_init__(self):
        if not isinstance(self.instruction, str) or not self.instruction.strip():
            raise ContractError("caption instruction must be a nonempty string")


@dataclass(frozen=True)
class Caption:
    text: str
    provider: str
    latency_ms: float


@dataclass(frozen=True)
class ProviderConfig:
    backend: str = "mock"
    endpoint: str | None = None
    model: str | None = None
    timeout_ms: int = 10_000
    token_env: str = TOKEN_ENV_VAR
    extra_headers: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.backend not in ("mock", "http"):
            raise ConfigError(f"caption backend must be 'mock' or 'http', got {self.backend!r}")
        if self.backend == "http" and not self.endpoint:
            raise ConfigError("http caption backend requires an endpoint URL")
        if self.timeout_ms <= 0:
            raise ConfigError(f"timeout_ms must be positive, got {self.timeout_ms}")


def brightness_word(brightness: float) -> str:
    return "bright" if brightness >= BRIGHT_THRESHOLD else "dim"


def size_word(radius: float) -> str:
    return "small" if radius <= SMALL_RADIUS_MAX else "large"


def _labels_from_pixels(image) -> dict:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise ContractError(f"caption image must be 2-D (or 1xHxW), got shape {img.shape}")
    foreground = img > -0.5  # background is near -1 by construction
    if not foreground.any():
        return {"shape": "shape", "brightness": 0.0, "radius": 0.0}
    # map foreground mean back from [-1, 1] to the [0, 1] attribute scale
    brightness = float((img[foreground].mean() + 1.0) / 2.0)
    radius = float(np.sqrt(foreground.sum() / np.pi))
    return {"shape": "shape", "brightness": brightness, "radius": radius}


def mock_caption(req: CaptionRequest) -> str:
    labels = req.labels if req.labels is not None else _labels_from_pixels(req.image)
    for key in ("shape", "brightness", "radius"):
        if key not in labels:
            raise ContractError(f"mock caption labels missing {key!r}: {sorted(labels)}")
    return (
        f"a {brightness_word(labels['brightness'])} {size_word(labels['radius'])} "
        f"{labels['shape']} on dark background"
    )


def _http_caption(req: CaptionRequest, cfg: ProviderConfig) -> str:
    pgm_b64 = base64.b64encode(encode_pgm(req.image)).decode("ascii")
    body = {
        "model": cfg.model or "default",
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": req.instruction},
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:image/x-portable-graymap;base64,{pgm_b64}"},
                    },
                ],
            }
        ],
    }
    headers = {"Content-Type": "application/json", **cfg.extra_headers}
    token = os.environ.get(cfg.token_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    try:
        resp = requests.post(
            cfg.endpoint, json=body, headers=headers, timeout=cfg.timeout_ms / 1000.0
        )
    except requests.RequestException as exc:
        raise ProviderError(f"caption request to {cfg.endpoint} failed: {exc}") from exc
    if not 200 <= resp.status_code < 300:
        raise ProviderError(
            f"caption endpoint returned HTTP {resp.status_code}", status=resp.status_code
        )
    try:
        text = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, LookupError, TypeError) as exc:
        raise ProviderError(f"malformed caption response: {exc}", status=resp.status_code) from exc
    if not isinstance(text, str) or not text.strip():
        raise ProviderError("caption response contained no text", status=resp.status_code)
    return text


def enrich(req: CaptionRequest, cfg: ProviderConfig) -> Caption:
    """One caption from the configured backend; raises ProviderError on failure."""
    start = time.monotonic()
    if cfg.backend == "mock":
        text = mock_caption(req)
    else:
        text = _http_caption(req, cfg)
    return Caption(text=text, provider=cfg.backend, latency_ms=(time.monotonic() - start) * 1e3)


def enrich_or_fallback(req: CaptionRequest, cfg: ProviderConfig, base_text: str):
    """Caption with graceful degradation.

    Provider failure is not fatal to an edit run: the pipeline proceeds
    with the caller's un-enriched base text and the returned flag records
    that the fallback fired.
    """
    try:
        return enrich(req, cfg), False
    except ProviderError:
        return Caption(text=base_text, provider="fallback", latency_ms=0.0), True
