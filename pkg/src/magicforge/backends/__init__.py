"""Clients for the four external model roles, plus the deterministic mock."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

MOCK = "mock"


class BackendError(RuntimeError):
    """Transport failure or malformed response from a model backend."""


@dataclass(frozen=True)
class DetectionBox:
    category: str
    x0: float
    y0: float
    x1: float
    y1: float
    confidence: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence outside [0, 1]: {self.confidence}")

    def within(self, width: int, height: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= width and self.y1 <= height

    def to_dict(self) -> dict:
        return {"category": self.category, "x0": self.x0, "y0": self.y0, "x1": self.x1,
                "y1": self.y1, "confidence": self.confidence}

    def pixel_slice(self, width: int, height: int) -> tuple[slice, slice]:
        """Rows/cols whose pixel centers fall inside the box."""
        c0 = max(0, int(np.ceil(self.x0 - 0.5)))
        c1 = min(width, int(np.ceil(self.x1 - 0.5)))
        r0 = max(0, int(np.ceil(self.y0 - 0.5)))
        r1 = min(height, int(np.ceil(self.y1 - 0.5)))
        return slice(r0, max(r0, r1)), slice(c0, max(c0, c1))


class NoiseConfig(BaseModel):
    """Degradations applied by the mock detector."""

    model_config = ConfigDict(extra="forbid")

    jitter_px: float = Field(0.0, ge=0)
    dropout: float = Field(0.0, ge=0, le=1)
    confidence: float = Field(1.0, ge=0, le=1)
    seed: int = 0


class BackendConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    text: str = MOCK
    image: str = MOCK
    detector: str = MOCK
    segmenter: str = MOCK
    timeout: float = Field(30.0, gt=0)
    retries: int = Field(2, ge=0)
    width: int = Field(512, ge=8)
    height: int = Field(512, ge=8)
    noise: NoiseConfig = NoiseConfig()


class TextGenerator(Protocol):
    name: str

    def generate_text(self, instruction: str, *, categories: Sequence[str] = (), seed: int = 0) -> str: ...


class ImageGenerator(Protocol):
    name: str

    def generate_image(self, text: str, seed: int, width: int, height: int) -> np.ndarray: ...


class Detector(Protocol):
    name: str

    def detect(self, image: np.ndarray, categories: Sequence[str]) -> list[DetectionBox]: ...


class Segmenter(Protocol):
    name: str

    def segment(self, image: np.ndarray, box: DetectionBox) -> np.ndarray: ...


@dataclass
class Backends:
    text: TextGenerator
    image: ImageGenerator
    detector: Detector
    segmenter: Segmenter

    def provenance(self) -> dict:
        return {"text": self.text.name, "image": self.image.name,
                "detector": self.detector.name, "segmenter": self.segmenter.name}


def make_backends(config: BackendConfig, vocabulary, http_client=None) -> Backends:
    from . import mock, remote

    def pick(url, mock_factory, remote_cls):
        if url == MOCK:
            return mock_factory()
        return remote_cls(url, timeout=config.timeout, retries=config.retries, client=http_client)

    return Backends(
        text=pick(config.text, mock.MockTextGenerator, remote.RemoteTextGenerator),
        image=pick(config.image, lambda: mock.MockImageGenerator(vocabulary), remote.RemoteImageGenerator),
        detector=pick(config.detector, lambda: mock.MockDetector(vocabulary, config.noise),
                      remote.RemoteDetector),
        segmenter=pick(config.segmenter, lambda: mock.MockSegmenter(vocabulary), remote.RemoteSegmenter),
    )


__all__ = [
    "MOCK", "BackendError", "DetectionBox", "NoiseConfig", "BackendConfig", "Backends",
    "TextGenerator", "ImageGenerator", "Detector", "Segmenter", "make_backends",
]
