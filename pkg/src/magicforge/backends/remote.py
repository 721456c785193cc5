"""HTTP clients speaking the JSON backend contract (see docs/backend-contract.md)."""
from __future__ import annotations

import base64
import io
import logging
from typing import Sequence

import httpx
import numpy as np
from PIL import Image

from ..rle import rle_decode
from . import BackendError, DetectionBox

log = logging.getLogger(__name__)


def encode_png(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png(data: str) -> np.ndarray:
    with Image.open(io.BytesIO(base64.b64decode(data))) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


class _RemoteClient:
    path = ""

    def __init__(self, url: str, timeout: float = 30.0, retries: int = 2, client: httpx.Client | None = None):
        self.url = url.rstrip("/") + self.path
        self.timeout = timeout
        self.retries = retries
        self._client = client or httpx.Client()
        self.name = f"remote:{url}"

    def _post(self, payload: dict) -> dict:
        last = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(self.url, json=payload, timeout=self.timeout)
                if resp.status_code >= 500:
                    last = BackendError(f"{self.url} returned {resp.status_code}")
                    log.warning("attempt %d/%d: %s", attempt + 1, self.retries + 1, last)
                    continue
                if resp.status_code >= 400:
                    raise BackendError(f"{self.url} rejected request: {resp.status_code} {resp.text[:200]}")
                return resp.json()
            except httpx.HTTPError as exc:
                last = BackendError(f"{self.url}: {exc}")
                log.warning("attempt %d/%d: %s", attempt + 1, self.retries + 1, last)
        raise BackendError(f"giving up after {self.retries + 1} attempts: {last}")


class RemoteTextGenerator(_RemoteClient):
    path = "/generate-text"

    def generate_text(self, instruction: str, *, categories: Sequence[str] = (), seed: int = 0) -> str:
        if not instruction:
            raise ValueError("instruction must be non-empty")
        body = self._post({"instruction": instruction, "categories": list(categories), "seed": int(seed)})
        text = (body.get("text") or "").strip()
        if not text:
            raise BackendError("empty response from text generator")
        return text


class RemoteImageGenerator(_RemoteClient):
    path = "/generate-image"

    def generate_image(self, text: str, seed: int, width: int = 512, height: int = 512) -> np.ndarray:
        if not text:
            raise ValueError("text must be non-empty")
        body = self._post({"text": text, "seed": int(seed), "width": width, "height": height})
        image = decode_png(body["image_b64"])
        if image.shape[:2] != (height, width):
            raise BackendError(f"image generator returned {image.shape[1]}x{image.shape[0]}, "
                               f"requested {width}x{height}")
        return image


class RemoteDetector(_RemoteClient):
    path = "/detect"

    def detect(self, image: np.ndarray, categories: Sequence[str]) -> list[DetectionBox]:
        if not categories:
            raise ValueError("category list must be non-empty")
        body = self._post({"image_b64": encode_png(image), "categories": list(categories)})
        try:
            boxes = [DetectionBox(**b) for b in body["boxes"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed detection response: {exc}") from exc
        return sorted(boxes, key=lambda b: -b.confidence)


class RemoteSegmenter(_RemoteClient):
    path = "/segment"

    def segment(self, image: np.ndarray, box: DetectionBox) -> np.ndarray:
        body = self._post({"image_b64": encode_png(image), "box": box.to_dict()})
        m = body["mask"]
        height, width = np.asarray(image).shape[:2]
        if (m["width"], m["height"]) != (width, height):
            raise BackendError("segmenter mask dimensions do not match the image")
        return rle_decode(m["runs"], m["width"], m["height"])
