"""HTTP backend for human preference annotation.

Serves the candidate index read-only and accepts winner/loser + mask
submissions, appending them to a single manifest. One serve run is one
annotation session: each pair can be annotated at most once per session.
"""

from __future__ import annotations

import io
import os
import threading
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse
from PIL import Image

from .images import MASK_THRESHOLD, load_image
from .paldm import load_candidate_index
from .prefdata import PreferenceRecord, append_manifest, _now, _next_mask_path
from .images import save_mask

__all__ = ["ApiError", "create_app", "serve"]


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _decode_mask(data: bytes) -> torch.Tensor:
    try:
        with Image.open(io.BytesIO(data)) as im:
            arr = np.asarray(im.convert("L"))
    except Exception as e:
        raise ApiError(422, "invalid_mask", f"mask is not a decodable image: {e}") from e
    return torch.from_numpy((arr >= MASK_THRESHOLD).astype(np.float32))


def create_app(candidate_root: str | Path, manifest_out: str | Path | None = None) -> FastAPI:
    root = Path(candidate_root).resolve()
    index = load_candidate_index(root)  # missing index fails fast at startup
    manifest = Path(manifest_out).resolve() if manifest_out else root / "manifest.jsonl"
    manifest.parent.mkdir(parents=True, exist_ok=True)
    write_lock = threading.Lock()
    annotated: set[str] = set()

    app = FastAPI(title="fusionpref annotation service")

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    def pair_entry(pair_id: str) -> dict:
        entry = index["pairs"].get(pair_id)
        if entry is None:
            raise ApiError(404, "unknown_pair", f"no such pair: {pair_id}")
        return entry

    @app.get("/api/pairs")
    def list_pairs():
        return {
            "pairs": [
                {
                    "pair_id": pid,
                    "num_candidates": len(entry["candidates"]),
                    "annotated": pid in annotated,
                }
                for pid, entry in sorted(index["pairs"].items())
            ]
        }

    @app.get("/api/pairs/{pair_id}")
    def pair_detail(pair_id: str):
        entry = pair_entry(pair_id)
        return {
            "pair_id": pair_id,
            "ir_url": f"/api/images/{entry['ir']}",
            "vis_url": f"/api/images/{entry['vis']}",
            "candidates": [
                {
                    "index": i,
                    "url": f"/api/images/{c['file']}",
                    "prompt_kind": c["prompt_kind"],
                    "level": c["level"],
                }
                for i, c in enumerate(entry["candidates"])
            ],
        }

    @app.get("/api/images/{path:path}")
    def image(path: str):
        target = (root / path).resolve()
        if not target.is_relative_to(root):
            raise ApiError(404, "not_found", "path escapes candidate root")
        if not target.is_file():
            raise ApiError(404, "not_found", f"no such image: {path}")
        return FileResponse(target, media_type="image/png")

    @app.post("/api/pairs/{pair_id}/preference", status_code=201)
    async def submit_preference(
        pair_id: str,
        winner_idx: int = Form(...),
        loser_idx: int = Form(...),
        annotator: str = Form(""),
        mask: UploadFile = File(...),
    ):
        entry = pair_entry(pair_id)
        n = len(entry["candidates"])
        if not (0 <= winner_idx < n and 0 <= loser_idx < n):
            raise ApiError(422, "index_out_of_range", f"candidate indices must be in [0, {n})")
        if winner_idx == loser_idx:
            raise ApiError(422, "index_collision", "winner and loser must differ")
        mask_tensor = _decode_mask(await mask.read())
        ref = load_image(root / entry["candidates"][0]["file"])
        if tuple(mask_tensor.shape) != tuple(ref.shape[-2:]):
            raise ApiError(
                422,
                "mask_dims",
                f"mask dims {tuple(mask_tensor.shape)} != image dims {tuple(ref.shape[-2:])}",
            )
        with write_lock:
            if pair_id in annotated:
                raise ApiError(409, "already_annotated", f"pair {pair_id} already annotated in this session")
            mask_rel = _next_mask_path(manifest.parent, pair_id)
            save_mask(mask_tensor, manifest.parent / mask_rel)
            rel_root = os.path.relpath(root, manifest.parent)

            def rel(p: str) -> str:
                return os.path.normpath(os.path.join(rel_root, p))

            record = PreferenceRecord(
                pair_id=pair_id,
                ir_path=rel(entry["ir"]),
                vis_path=rel(entry["vis"]),
                winner_path=rel(entry["candidates"][winner_idx]["file"]),
                loser_path=rel(entry["candidates"][loser_idx]["file"]),
                mask_path=mask_rel,
                source="human",
                created_at=_now(),
                annotator=annotator or None,
            )
            append_manifest(manifest, record)
            annotated.add(pair_id)
        return record.__dict__

    @app.get("/api/export")
    def export():
        if not manifest.exists():
            return PlainTextResponse("", media_type="application/x-ndjson")
        return PlainTextResponse(manifest.read_text(), media_type="application/x-ndjson")

    return app


def serve(candidate_root: str | Path, manifest_out: str | Path | None, bind: str = "127.0.0.1:8000"):
    """Run the annotation service until interrupted."""
    import uvicorn

    host, _, port = bind.partition(":")
    app = create_app(candidate_root, manifest_out)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000))
