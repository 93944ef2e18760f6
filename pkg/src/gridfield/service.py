"""HTTP facade over a trained semantic field.

Endpoints: ``GET /health``, ``GET /scene``, ``GET /render?view=``,
``GET /queries``, ``POST /query``, ``PUT /queries/{name}``.  Query masks
travel as run-length counts over the row-major flattened bitmap,
alternating (skip, run) so a mask is reconstructible without decoding
PNGs.  Saving a query by text requires an external embedding service
(``GRIDFIELD_ENCODER_URL``); the service answers 502 when that upstream
is missing or unreachable.  Error payloads carry a stable ``code`` plus
a human-readable ``message``.
"""

from __future__ import annotations

import io
import json
import os
from pathlib import Path
from typing import Optional

import httpx
import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from PIL import Image
from pydantic import BaseModel

from . import kernels
from .errors import DomainError, FormatError
from .query import SemanticField
from .scene_data import QueryConfig

ENCODER_URL_ENV = "GRIDFIELD_ENCODER_URL"


def encode_mask_rle(mask: np.ndarray) -> list[int]:
    """Alternating (skip, run) counts over the row-major flattened mask."""
    flat = np.asarray(mask, dtype=bool).ravel()
    n = flat.size
    if n == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [n]))
    out: list[int] = []
    pos = 0
    for s, e in zip(starts, ends):
        if flat[s]:
            out.append(int(s - pos))
            out.append(int(e - s))
            pos = int(e)
    return out


def decode_mask_rle(rle: list[int], height: int, width: int) -> np.ndarray:
    """Inverse of :func:`encode_mask_rle`."""
    if len(rle) % 2 != 0:
        raise FormatError("run-length data must have an even number of counts")
    flat = np.zeros(height * width, dtype=bool)
    pos = 0
    it = iter(rle)
    for skip, run in zip(it, it):
        if skip < 0 or run < 0:
            raise FormatError("run-length counts must be nonnegative")
        pos += skip
        if pos + run > flat.size:
            raise FormatError("run-length data overruns the mask")
        flat[pos : pos + run] = True
        pos += run
    return flat.reshape(height, width)


class QueryRequest(BaseModel):
    embedding: Optional[list[float]] = None
    name: Optional[str] = None
    view: int = 0
    tau_ac: float = 5.0
    top_n: int = 1
    aggregate: str = "max"


class SaveQueryRequest(BaseModel):
    embedding: Optional[list[float]] = None
    text: Optional[str] = None
    view: Optional[int] = None


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def load_saved_queries(dataset_root: Path) -> dict[str, dict]:
    """Named queries shipped with a dataset, if any."""
    path = Path(dataset_root) / "eval" / "queries.json"
    if not path.exists():
        return {}
    out = {}
    for q in json.loads(path.read_text())["queries"]:
        out[q["name"]] = {"embedding": list(q["embedding"]), "view": q.get("view")}
    return out


def create_app(
    field: SemanticField,
    dataset_root: Path | None = None,
    queries: dict[str, dict] | None = None,
    encoder_url: str | None = None,
) -> FastAPI:
    """Build the application around one loaded field.

    ``queries`` (name -> {embedding, view}) seeds the saved-query table;
    when omitted and ``dataset_root`` is given, the dataset's own query
    list is loaded.  ``encoder_url`` falls back to the environment.
    """
    app = FastAPI(title="gridfield", docs_url=None, redoc_url=None)
    dim = field.lattice.cells[0].embeddings.shape[1]
    if queries is None:
        queries = load_saved_queries(dataset_root) if dataset_root else {}
    state = {"queries": dict(queries), "encoder_url": encoder_url or os.environ.get(ENCODER_URL_ENV)}

    @app.exception_handler(DomainError)
    async def _domain_error(request: Request, exc: DomainError):
        return _error(400, "domain", str(exc))

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "views": field.view_count,
            "objects": field.lattice.K,
            "backend": kernels.active_backend(),
        }

    @app.get("/scene")
    def scene():
        return {
            "width": field.width,
            "height": field.height,
            "views": field.view_count,
            "K": field.lattice.K,
            "side": field.lattice.side,
            "embedding_dim": dim,
            "canonical": sorted(field.canonical),
            "objects": [
                {
                    "id": c.object_id,
                    "center": [float(v) for v in c.center],
                    "entries": [[int(v), int(l)] for v, l in c.entries],
                }
                for c in field.lattice.cells
            ],
        }

    @app.get("/render")
    def render(view: int = 0):
        if not (0 <= view < field.view_count):
            return _error(404, "unknown_view", f"view {view} not in 0..{field.view_count - 1}")
        fm, _ = field.render_view(view)
        u8 = np.clip(np.round(fm * 255.0), 0, 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(u8, mode="RGB").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/queries")
    def list_queries():
        return {
            "queries": {
                name: {"view": q.get("view"), "dim": len(q["embedding"])}
                for name, q in sorted(state["queries"].items())
            }
        }

    @app.post("/query")
    def run_query(req: QueryRequest):
        if (req.embedding is None) == (req.name is None):
            return _error(400, "bad_request", "provide exactly one of 'embedding' or 'name'")
        if req.name is not None:
            saved = state["queries"].get(req.name)
            if saved is None:
                return _error(404, "unknown_query", f"no saved query named {req.name!r}")
            emb = np.asarray(saved["embedding"], dtype=np.float64)
        else:
            emb = np.asarray(req.embedding, dtype=np.float64)
        if emb.shape != (dim,):
            return _error(400, "bad_embedding", f"embedding must have {dim} components, got {emb.shape}")
        if not np.all(np.isfinite(emb)):
            return _error(400, "bad_embedding", "embedding has non-finite values")
        if not (0 <= req.view < field.view_count):
            return _error(404, "unknown_view", f"view {req.view} not in 0..{field.view_count - 1}")
        cfg = QueryConfig(tau_ac=req.tau_ac, top_n=req.top_n, aggregate=req.aggregate)
        res = field.query(emb, req.view, cfg)
        return {
            "view": res.view,
            "width": field.width,
            "height": field.height,
            "object_ids": res.object_ids,
            "scores": [float(s) for s in res.scores],
            "best_pixel": list(res.best_pixel),
            "area": int(res.mask.sum()),
            "mask_rle": encode_mask_rle(res.mask),
            "from_cache": res.from_cache,
            "timings_ms": res.timings_ms,
        }

    @app.put("/queries/{name}")
    def save_query(name: str, req: SaveQueryRequest):
        if name in state["queries"]:
            return _error(409, "query_exists", f"query {name!r} already saved")
        if (req.embedding is None) == (req.text is None):
            return _error(400, "bad_request", "provide exactly one of 'embedding' or 'text'")
        if req.embedding is not None:
            emb = np.asarray(req.embedding, dtype=np.float64)
            if emb.shape != (dim,) or not np.all(np.isfinite(emb)):
                return _error(400, "bad_embedding", f"embedding must be {dim} finite floats")
            vec = [float(v) for v in emb]
        else:
            url = state["encoder_url"]
            if not url:
                return _error(502, "encoder_unavailable", "no text encoder configured")
            try:
                resp = httpx.post(url.rstrip("/") + "/embed", json={"text": req.text}, timeout=10.0)
                resp.raise_for_status()
                vec = [float(v) for v in resp.json()["embedding"]]
            except (httpx.HTTPError, KeyError, TypeError, ValueError) as e:
                return _error(502, "encoder_failed", f"text encoder call failed: {e}")
            if len(vec) != dim:
                return _error(502, "encoder_failed", f"encoder returned {len(vec)} floats, expected {dim}")
        state["queries"][name] = {"embedding": vec, "view": req.view}
        return {"name": name, "dim": dim, "view": req.view}

    return app
