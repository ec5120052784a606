"""Caption providers and the hashed text embedder."""

import http.server
import json
import threading

import numpy as np
import pytest

from geoedit.enrichment import (
    Caption,
    CaptionRequest,
    ProviderConfig,
    TextEmbedder,
    edit_direction,
    embed_text,
    enrich,
    enrich_or_fallback,
    mock_caption,
)
from geoedit.errors import ConfigError, ContractError, DegenerateEditError, ProviderError


def disc_image(brightness=0.9, radius=5.0, size=32):
    yy, xx = np.mgrid[:size, :size]
    mask = (yy - size
            // 2) ** 2 + (xx - size // 2) ** 2 <= radius**2
    img = np.full((size, size), -1.0)
    img[mask] = 2.0 * brightness - 1.0
    return img


class TestEmbedder:
    def test_deterministic(self):
        a = embed_text("a bright small disc")
        b = embed_text("a bright small disc")
        np.testing.assert_array_equal(a, b)

    def test_unit_norm_many_strings(self):
        rng = np.random.default_rng(0)
        words = ["disc", "square", "bright", "dim", "small", "large", "on", "dark", "a"]
        for _ in range(1000):
            text = " ".join(rng.choice(words, size=rng.integers(1, 8)))
            assert abs(np.linalg.norm(embed_text(text)) - 1.0) < 1e-12

    def test_case_and_whitespace_folding(self):
        np.testing.assert_array_equal(
            embed_text("Bright  Disc"), embed_text("bright disc")
        )

    def test_distinct_texts_distinct_vectors(self):
        a = embed_text("bright disc")
        b = embed_text("dark disc")
        assert float(a @ b) < 1.0 - 1e-6

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            embed_text("   ")

    def test_bigrams_matter(self):
        # same unigram multiset, different order => different bigrams
        a = embed_text("bright small disc")
        b = embed_text("small bright disc")
        assert not np.array_equal(a, b)


class TestEditDirection:
    def test_unit_norm_and_antisymmetry(self):
        d_ab = edit_direction("a dim small disc", "a bright small disc")
        d_ba = edit_direction("a bright small disc", "a dim small disc")
        assert abs(np.linalg.norm(d_ab) - 1.0) < 1e-12
        np.testing.assert_allclose(d_ab, -d_ba, atol=1e-15)

    def test_identical_texts_degenerate(self):
        with pytest.raises(DegenerateEditError):
            edit_direction("same words", "same words")

    def test_enriched_source_changes_direction(self):
        target = "a bright small disc on dark background"
        d_generic = edit_direction("an image", target)
        d_enriched = edit_direction("a dim small disc on dark background", target)
        assert float(d_generic @ d_enriched) < 1.0 - 1e-6


class TestMockProvider:
    def test_golden_template_from_labels(self):
        req = CaptionRequest(
            image=disc_image(),
            instruction="describe the image",
            labels={"shape": "disc", "brightness": 0.9, "radius": 5.0},
        )
        assert mock_caption(req) == "a bright small disc on dark background"

    def test_word_thresholds(self):
        base = {"shape": "square"}
        req = CaptionRequest(
            image=disc_image(),
            instruction="x",
            labels={**base, "brightness": 0.3, "radius": 10.0},
        )
        assert mock_caption(req) == "a dim large square on dark background"

    def test_deterministic_through_enrich(self):
        req = CaptionRequest(
            image=disc_image(),
            instruction="describe",
            labels={"shape": "disc", "brightness": 0.9, "radius": 5.0},
        )
        cfg = ProviderConfig(backend="mock")
        c1 = enrich(req, cfg)
        c2 = enrich(req, cfg)
        assert c1.text == c2.text and c1.provider == "mock"

    def test_labels_inferred_from_pixels(self):
        req = CaptionRequest(image=disc_image(brightness=0.9, radius=5.0), instruction="x")
        text = mock_caption(req)
        assert "bright" in text and "small" in text

    def test_missing_label_key_rejected(self):
        req = CaptionRequest(image=disc_image(), instruction="x", labels={"shape": "disc"})
        with pytest.raises(ContractError, match="brightness"):
            mock_caption(req)

    def test_empty_instruction_rejected(self):
        with pytest.raises(ContractError):
            CaptionRequest(image=disc_image(), instruction="")


class _Handler(http.server.BaseHTTPRequestHandler):
    """Canned OpenAI-style endpoint; records the last request body."""

    last_body = None
    status = 200

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        _Handler.last_body = json.loads(self.rfile.read(length))
        payload = b""
        if _Handler.status == 200:
            payload = json.dumps(
                {"choices": [{"message": {"content": "a stub caption"}}]}
            ).encode()
        self.send_response(_Handler.status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    server = http.server.HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Handler.status = 200
    _Handler.last_body = None
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()
    thread.join()


class TestHttpProvider:
    def test_roundtrip_and_request_shape(self, stub_server, monkeypatch):
        monkeypatch.setenv("GEOEDIT_CAPTION_TOKEN", "secret-token")
        req = CaptionRequest(image=disc_image(), instruction="describe the image")
        cfg = ProviderConfig(backend="http", endpoint=stub_server, model="toy-vlm")
        caption = enrich(req, cfg)
        assert caption.text == "a stub caption" and caption.provider == "http"
        body = _Handler.last_body
        assert body["model"] == "toy-vlm"
        content = body["messages"][0]["content"]
        assert content[0] == {"type": "text", "text": "describe the image"}
        assert content[1]["image_url"]["url"].startswith(
            "data:image/x-portable-graymap;base64,"
        )

    def test_non_2xx_raises_with_status(self, stub_server):
        _Handler.status = 503
        req = CaptionRequest(image=disc_image(), instruction="x")
        cfg = ProviderConfig(backend="http", endpoint=stub_server)
        with pytest.raises(ProviderError) as excinfo:
            enrich(req, cfg)
        assert excinfo.value.status == 503

    def test_unreachable_endpoint_raises(self):
        req = CaptionRequest(image=disc_image(), instruction="x")
        cfg = ProviderConfig(
            backend="http", endpoint="http://127.0.0.1:1/v1/chat", timeout_ms=300
        )
        with pytest.raises(ProviderError):
            enrich(req, cfg)

    def test_fallback_records_and_completes(self):
        req = CaptionRequest(image=disc_image(), instruction="x")
        cfg = ProviderConfig(
            backend="http", endpoint="http://127.0.0.1:1/v1/chat", timeout_ms=300
        )
        caption, fell_back = enrich_or_fallback(req, cfg, base_text="a disc")
        assert fell_back and caption == Caption("a disc", "fallback", 0.0)

    def test_http_requires_endpoint(self):
        with pytest.raises(ConfigError, match="endpoint"):
            ProviderConfig(backend="http")

    def test_unknown_backend_rejected(self):
        with pytest.raises(ConfigError, match="backend"):
            ProviderConfig(backend="grpc")
