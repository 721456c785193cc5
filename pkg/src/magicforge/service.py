"""FastAPI app serving the backend wire contract from the mock backend.

Run with::

    MAGICFORGE_VOCAB=vocabulary.json uvicorn magicforge.service:app --port 8000

and point any backend role at ``http://localhost:8000``.
"""
from __future__ import annotations

import os

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .backends import DetectionBox, NoiseConfig
from .backends.mock import MockDetector, MockImageGenerator, MockSegmenter, MockTextGenerator
from .backends.remote import decode_png, encode_png
from .prompts import find_mentions
from .records import Vocabulary
from .rle import rle_encode


class GenerateTextRequest(BaseModel):
    instruction: str = Field(min_length=1)
    categories: list[str] = []
    seed: int = 0


class GenerateTextResponse(BaseModel):
    text: str


class GenerateImageRequest(BaseModel):
    text: str = Field(min_length=1)
    seed: int
    width: int = Field(512, ge=1, le=4096)
    height: int = Field(512, ge=1, le=4096)


class GenerateImageResponse(BaseModel):
    image_b64: str
    width: int
    height: int


class Box(BaseModel):
    category: str
    x0: float
    y0: float
    x1: float
    y1: float
    confidence: float = Field(ge=0, le=1)


class DetectRequest(BaseModel):
    image_b64: str
    categories: list[str] = Field(min_length=1)


class DetectResponse(BaseModel):
    boxes: list[Box]


class SegmentRequest(BaseModel):
    image_b64: str
    box: Box


class RleMask(BaseModel):
    width: int
    height: int
    runs: list[int]


class SegmentResponse(BaseModel):
    mask: RleMask


def create_app(vocabulary: Vocabulary, noise: NoiseConfig | None = None) -> FastAPI:
    app = FastAPI(title="magicforge mock backend")
    text_gen = MockTextGenerator()
    image_gen = MockImageGenerator(vocabulary)
    detector = MockDetector(vocabulary, noise)
    segmenter = MockSegmenter(vocabulary)

    def _known(names):
        unknown = [n for n in names if n not in vocabulary.names]
        if unknown:
            raise HTTPException(status_code=422, detail=f"unknown categories: {unknown}")

    @app.post("/generate-text", response_model=GenerateTextResponse)
    def generate_text(req: GenerateTextRequest):
        names = req.categories or find_mentions(req.instruction, vocabulary.names)[:2]
        if not names:
            raise HTTPException(status_code=422, detail="no vocabulary category found in instruction")
        _known(names)
        return GenerateTextResponse(text=text_gen.generate_text(req.instruction, categories=names, seed=req.seed))

    @app.post("/generate-image", response_model=GenerateImageResponse)
    def generate_image(req: GenerateImageRequest):
        img = image_gen.generate_image(req.text, req.seed, req.width, req.height)
        return GenerateImageResponse(image_b64=encode_png(img), width=req.width, height=req.height)

    @app.post("/detect", response_model=DetectResponse)
    def detect(req: DetectRequest):
        _known(req.categories)
        boxes = detector.detect(decode_png(req.image_b64), req.categories)
        return DetectResponse(boxes=[Box(**b.to_dict()) for b in boxes])

    @app.post("/segment", response_model=SegmentResponse)
    def segment(req: SegmentRequest):
        _known([req.box.category])
        image = decode_png(req.image_b64)
        try:
            box = DetectionBox(**req.box.model_dump())
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        m = segmenter.segment(image, box)
        h, w = m.shape
        return SegmentResponse(mask=RleMask(width=w, height=h, runs=rle_encode(m, w, h)))

    @app.get("/health")
    def health():
        return {"status": "ok", "categories": vocabulary.N}

    return app


def _default_app() -> FastAPI | None:
    path = os.environ.get("MAGICFORGE_VOCAB")
    if not path:
        return None
    return create_app(Vocabulary.load(path))


app = _default_app()
