"""Text and image encoders behind one small interface.

``load_encoder`` accepts either a deterministic offline stub
(``mock:<dim>``) used by tests and dry runs, or a CLIP checkpoint id
loaded through ``transformers`` (requires the optional ``clip`` extra
and locally available weights).
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

_THUMB = 16  # mock encoder thumbnail side


class EncoderError(RuntimeError):
    """Model could not be loaded or run."""


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms == 0.0).any():
        raise EncoderError("encoder produced a zero feature vector")
    return (x / norms).astype(np.float32)


class MockEncoder:
    """Deterministic stand-in encoder for offline plumbing tests.

    Images map through a fixed random projection of a downsampled
    thumbnail, texts through a hash-seeded Gaussian draw; both are unit
    normalized. Identical inputs give identical features on every run.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise EncoderError(f"mock dim must be >= 1, got {dim}")
        self.dim = dim
        rng = np.random.default_rng(0xC11FED)
        self._projection = rng.standard_normal((dim, _THUMB * _THUMB * 3))

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        rows = np.empty((len(prompts), self.dim))
        for i, prompt in enumerate(prompts):
            digest = hashlib.sha256(prompt.encode("utf-8")).digest()
            seed = int.from_bytes(digest[:8], "little")
            rows[i] = np.random.default_rng(seed).standard_normal(self.dim)
        return _normalize_rows(rows)

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        rows = np.empty((len(images), self.dim))
        for i, image in enumerate(images):
            thumb = image.convert("RGB").resize((_THUMB, _THUMB), Image.BILINEAR)
            flat = np.asarray(thumb, dtype=np.float64).ravel() / 255.0
            rows[i] = self._projection @ flat
        return _normalize_rows(rows)


class ClipEncoder:
    """CLIP checkpoint via transformers; batched, no-grad, eval mode."""

    def __init__(self, model_id: str, batch_size: int = 32):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EncoderError(
                f"loading {model_id!r} needs the optional clip extra (torch + transformers)"
            ) from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id)
        except Exception as exc:
            raise EncoderError(f"could not load model {model_id!r}: {exc}") from exc
        self._processor = CLIPProcessor.from_pretrained(model_id)
        self._torch = torch
        self._model.eval()
        self.batch_size = batch_size
        self.dim = int(self._model.config.projection_dim)

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        chunks = []
        with self._torch.no_grad():
            for start in range(0, len(prompts), self.batch_size):
                batch = prompts[start : start + self.batch_size]
                inputs = self._processor(text=batch, return_tensors="pt", padding=True)
                feats = self._model.get_text_features(**inputs)
                chunks.append(feats.cpu().numpy().astype(np.float64))
        return _normalize_rows(np.vstack(chunks))

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        chunks = []
        with self._torch.no_grad():
            for start in range(0, len(images), self.batch_size):
                batch = images[start : start + self.batch_size]
                inputs = self._processor(images=batch, return_tensors="pt")
                feats = self._model.get_image_features(**inputs)
                chunks.append(feats.cpu().numpy().astype(np.float64))
        return _normalize_rows(np.vstack(chunks))


def load_encoder(model_id: str, batch_size: int = 32):
    """``mock:<dim>`` for the offline stub, anything else goes to CLIP."""
    if model_id.startswith("mock:"):
        try:
            dim = int(model_id.split(":", 1)[1])
        except ValueError as exc:
            raise EncoderError(f"bad mock encoder id {model_id!r}") from exc
        return MockEncoder(dim)
    return ClipEncoder(model_id, batch_size=batch_size)
