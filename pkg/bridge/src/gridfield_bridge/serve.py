"""Text-embedding endpoint for the query service.

Serves the contract the query service expects from its configured
encoder URL: ``POST /embed`` with ``{"text": ...}`` answers
``{"embedding": [D floats]}``.
"""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .encoder import Encoder


class EmbedRequest(BaseModel):
    text: str


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def create_encoder_app(encoder: Encoder) -> FastAPI:
    app = FastAPI(title="gridfield-bridge encoder", docs_url=None, redoc_url=None)

    @app.get("/health")
    def health():
        return {"status": "ok", "variant": encoder.variant, "dim": encoder.dim}

    @app.post("/embed")
    def embed(req: EmbedRequest):
        try:
            vec = encoder.embed_text(req.text)
        except ValueError as e:
            return _error(400, "bad_request", str(e))
        return {"embedding": [float(v) for v in vec]}

    return app
